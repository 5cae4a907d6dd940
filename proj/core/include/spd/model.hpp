#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spd/datamodel.hpp"
#include "spd/fusion.hpp"
#include "spd/graphbranch.hpp"
#include "spd/llmbranch.hpp"

namespace spd::model {

struct ModelConfig {
  lm::MiniLmConfig lm;
  graph::GraphBranchConfig graph;
  // Which transformer layers receive the fused vectors; empty = all.
  std::vector<int> fusion_layers;
};

// The two-branch classifier: a miniature causal LM over the pseudo-code
// prompt, a gated graph encoder over the CFG pair, adapters mapping the
// graph embedding into the LM's attention, and a cross-attention head
// producing the classification logit.
struct JointModel {
  ModelConfig cfg;
  lm::MiniLm lm;
  graph::GraphBranch graph;
  fusion::AdapterSet adapters;
  fusion::ClassifierHead head;
  int stage = 0;   // 0 = initialised, 1 = after stage 1, 2 = after stage 2
  uint64_t init_seed = 0;
  std::shared_ptr<graph::ExternalTable> external_table;

  static JointModel make(const ModelConfig& cfg, uint64_t seed);

  // Loads the sidecar named by the encoder config (external mode only).
  void attach_external_table();

  // phi_l: the language-model branch.
  std::vector<ad::Parameter*> llm_parameters();
  // phi_g: graph encoder + pair projection + node encoder + adapters +
  // gate + classifier head.
  std::vector<ad::Parameter*> graph_parameters();
  std::vector<ad::Parameter*> all_parameters();

  fusion::FusionOptions fusion_options() const;
};

// Tape-level fused classification logit (1 x 1) for one sample.
ad::Var fused_logit(ad::Graph& g, JointModel& m, const data::PatchSample& s,
                    const fusion::FusionOptions* options = nullptr,
                    const std::optional<double>& gate_override = std::nullopt);

double fused_logit_value(JointModel& m, const data::PatchSample& s,
                         const fusion::FusionOptions* options = nullptr,
                         const std::optional<double>& gate_override = std::nullopt);

// LLM-only yes/no scoring of a sample's prompt (no fusion).
lm::YesNoScore llm_score(JointModel& m, const data::PatchSample& s);

// Mean final hidden state of the plain LM over the sample's prompt.
Eigen::RowVectorXd llm_pooled_hidden(JointModel& m, const data::PatchSample& s);

// Mean of the pooled node-encoder vectors of the two CFGs.
Eigen::RowVectorXd graph_pooled_encoding(JointModel& m, const data::PatchSample& s);

}  // namespace spd::model

namespace spd::ckpt {

// Versioned binary container: JSON header (stage, config, seed) plus named
// float64 parameter arrays. Round-trips bit-exactly.
void save(const model::JointModel& m, const std::string& path);
model::JointModel load(const std::string& path);

}  // namespace spd::ckpt
