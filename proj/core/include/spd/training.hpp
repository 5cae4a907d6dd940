#pragma once

#include <string>
#include <vector>

#include "spd/config.hpp"
#include "spd/datamodel.hpp"
#include "spd/model.hpp"

namespace spd::train {

// phi_l / phi_g views over a model's trainables; disjoint and exhaustive.
struct ParamPartition {
  std::vector<ad::Parameter*> llm;
  std::vector<ad::Parameter*> graph;
};
ParamPartition partition(model::JointModel& m);

// Numerically stable binary cross entropy with logits. No overflow for
// |z| up to 1e4.
double bce_loss(double z, int y);

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_loss = 0.0;
};

// Stage 1: instruction-tunes the LM branch on the cross entropy of the
// yes/no answer token. Only phi_l (or its LoRA factors) is optimised; the
// model is left at the best-validation parameters with stage = 1.
TrainResult train_stage1(model::JointModel& m, const std::vector<data::PatchSample>& train_set,
                         const std::vector<data::PatchSample>& val_set, const TrainConfig& cfg,
                         bool quiet = false);

// Stage 2: freezes phi_l and trains the graph branch, adapters, gate and
// head on the BCE of the fused logit. Model left at best validation with
// stage = 2.
TrainResult train_stage2(model::JointModel& m, const std::vector<data::PatchSample>& train_set,
                         const std::vector<data::PatchSample>& val_set, const TrainConfig& cfg,
                         bool quiet = false);

// Ablation: one joint pass optimising both branches at the stage-2 rate.
// Logs the validation-loss curve and the cosine between the CE- and
// BCE-induced gradients; no contract beyond the diagnostics.
struct JointDiagnostics {
  std::vector<double> val_losses;
  std::vector<double> grad_cosines;
};
JointDiagnostics train_joint_ablation(model::JointModel& m,
                                      const std::vector<data::PatchSample>& train_set,
                                      const std::vector<data::PatchSample>& val_set,
                                      const TrainConfig& cfg, bool quiet = false);

// Deterministic tail holdout used when the caller supplies no split.
void holdout_split(const std::vector<data::PatchSample>& all, double val_fraction, uint64_t seed,
                   std::vector<data::PatchSample>* train_out,
                   std::vector<data::PatchSample>* val_out);

}  // namespace spd::train
