#pragma once

#include <optional>
#include <vector>

#include "spd/ad.hpp"
#include "spd/rng.hpp"

namespace spd::fusion {

// Query/Key/Value adapters plus the gate network. Each adapter is an
// independent two-layer feed-forward map d_g -> d_hidden -> d_model with a
// ReLU between; the gate is a two-layer map d_g -> d_model ending in a
// sigmoid, so its output lies componentwise in (0,1).
struct AdapterSet {
  int d_g = 0;
  int d_hidden = 0;   // expansion width, 2 * d_model by default
  int d_model = 0;

  ad::Parameter q_w1, q_b1, q_w2, q_b2;
  ad::Parameter k_w1, k_b1, k_w2, k_b2;
  ad::Parameter v_w1, v_b1, v_w2, v_b2;
  ad::Parameter gate_w1, gate_b1, gate_w2, gate_b2;

  static AdapterSet make(int d_g, int d_model, Rng& rng, int d_hidden = 0);
  std::vector<ad::Parameter*> parameters();
};

// Gated graph-derived vectors sized to the language model width (values).
struct FusionVectors {
  Eigen::RowVectorXd h_q, h_k, h_v;
  double gate_mean = 0.0;
};

// Tape-resident counterpart used while gradients must flow.
struct FusionVars {
  ad::Var h_q, h_k, h_v;   // each 1 x d_model
  double gate_mean = 0.0;
};

struct FusionOptions {
  // Fuse only at these layer indices; empty means every layer.
  std::vector<int> layers;
  // When enabled and the mean gate activation falls below eps, the graph
  // slot is masked out of attention entirely.
  bool slot_mask_enabled = false;
  double slot_mask_eps = 1e-3;
  // Test hook: force the gate output to a constant.
  std::optional<double> gate_override;

  bool applies_to_layer(int layer) const;
  bool slot_masked(double gate_mean) const {
    return slot_mask_enabled && gate_mean < slot_mask_eps;
  }
};

// g_g = Gate(f_g); h_{q,k,v} = FFN_{q,k,v}(f_g) .* g_g. `f_g` is 1 x d_g.
FusionVars adapt(ad::Graph& g, ad::Var f_g, AdapterSet& adapters,
                 const std::optional<double>& gate_override = std::nullopt);

// Value-level convenience for inference paths.
FusionVectors adapt_values(const Eigen::RowVectorXd& f_g, AdapterSet& adapters,
                           const std::optional<double>& gate_override = std::nullopt);

FusionVars to_vars(ad::Graph& g, const FusionVectors& fv);

// Q_fusion = broadcast(h_q) + Q; K_fusion = [h_k ; K]; V_fusion = [h_v ; V].
// The graph slot occupies row 0 of the key/value sequences; queries keep
// their length.
struct AttentionState {
  ad::Var q_fusion;   // L x d
  ad::Var k_fusion;   // (L+1) x d
  ad::Var v_fusion;   // (L+1) x d
};
AttentionState fuse_qkv(ad::Graph& g, ad::Var q, ad::Var k, ad::Var v, const FusionVars& fv);

// Single-query cross-attention over the LLM's final hidden states followed
// by a two-layer MLP producing one raw logit. Keys and values are the
// f_llm rows themselves; only the query is projected.
struct ClassifierHead {
  int d_model = 0;
  ad::Parameter query_w, query_b;          // d x d, 1 x d
  ad::Parameter mlp_w1, mlp_b1, mlp_w2, mlp_b2;  // d -> d/2 -> 1

  static ClassifierHead make(int d_model, Rng& rng);
  std::vector<ad::Parameter*> parameters();
};

// Returns the 1x1 raw logit; the sigmoid lives in the loss / inference
// wrapper.
ad::Var cross_attend_classify(ad::Graph& g, ad::Var h_q, ad::Var f_llm, ClassifierHead& head);

}  // namespace spd::fusion
