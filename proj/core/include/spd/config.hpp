#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "spd/model.hpp"

namespace spd::train {

struct StageConfig {
  int epochs = 1;
  double lr = 1e-4;
  int batch = 4;
  int patience = 2;   // early stopping on validation loss
};

struct TrainConfig {
  StageConfig stage1{3, 1e-4, 4, 2};
  StageConfig stage2{8, 5e-5, 4, 3};
  bool stage1_lora = false;
  int lora_rank = 8;
  uint64_t seed = 42;
  std::string checkpoint_dir = ".";
  double holdout_val = 0.15;   // used when no explicit validation set is given

  void validate() const;
};

struct RunConfig {
  TrainConfig train;
  model::ModelConfig model;
};

// Flat "key = value" file with '#' comments. Unknown keys are an error.
// Keys: seed, checkpoint_dir, holdout_val; stage1.{epochs,lr,batch,patience,
// lora,lora_rank}; stage2.{epochs,lr,batch,patience}; model.{n_layers,
// n_heads,d_model,d_ff,max_positions,max_len}; graph.{layers,dim,out_dim,
// encoder,buckets,sidecar}; fusion.layers ("all" or comma-separated indices).
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);
std::string config_to_text(const RunConfig& cfg);

}  // namespace spd::train
