#include "spd/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "spd/errors.hpp"

namespace spd::fusion {

namespace {

ad::Mat uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  ad::Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  }
  return m;
}

// Two-layer feed-forward with ReLU in between; x is 1 x d_in.
ad::Var ffn2(ad::Graph& g, ad::Var x, ad::Parameter& w1, ad::Parameter& b1, ad::Parameter& w2,
             ad::Parameter& b2) {
  ad::Var h = g.relu(g.add(g.matmul(x, g.param(w1)), g.param(b1)));
  return g.add(g.matmul(h, g.param(w2)), g.param(b2));
}

}  // namespace

AdapterSet AdapterSet::make(int d_g, int d_model, Rng& rng, int d_hidden) {
  if (d_hidden <= 0) d_hidden = 2 * d_model;
  AdapterSet a;
  a.d_g = d_g;
  a.d_hidden = d_hidden;
  a.d_model = d_model;
  const double bg = 1.0 / std::sqrt(static_cast<double>(d_g));
  const double bh = 1.0 / std::sqrt(static_cast<double>(d_hidden));
  auto mk = [&](const std::string& name, Eigen::Index r, Eigen::Index c, double bound) {
    return ad::Parameter("fusion." + name, uniform_init(r, c, bound, rng));
  };
  a.q_w1 = mk("q.w1", d_g, d_hidden, bg);
  a.q_b1 = mk("q.b1", 1, d_hidden, bg);
  a.q_w2 = mk("q.w2", d_hidden, d_model, bh);
  a.q_b2 = mk("q.b2", 1, d_model, bh);
  a.k_w1 = mk("k.w1", d_g, d_hidden, bg);
  a.k_b1 = mk("k.b1", 1, d_hidden, bg);
  a.k_w2 = mk("k.w2", d_hidden, d_model, bh);
  a.k_b2 = mk("k.b2", 1, d_model, bh);
  a.v_w1 = mk("v.w1", d_g, d_hidden, bg);
  a.v_b1 = mk("v.b1", 1, d_hidden, bg);
  a.v_w2 = mk("v.w2", d_hidden, d_model, bh);
  a.v_b2 = mk("v.b2", 1, d_model, bh);
  a.gate_w1 = mk("gate.w1", d_g, d_model, bg);
  a.gate_b1 = mk("gate.b1", 1, d_model, bg);
  a.gate_w2 = mk("gate.w2", d_model, d_model, 1.0 / std::sqrt(static_cast<double>(d_model)));
  a.gate_b2 = mk("gate.b2", 1, d_model, 1.0 / std::sqrt(static_cast<double>(d_model)));
  return a;
}

std::vector<ad::Parameter*> AdapterSet::parameters() {
  return {&q_w1, &q_b1, &q_w2, &q_b2, &k_w1, &k_b1, &k_w2, &k_b2,
          &v_w1, &v_b1, &v_w2, &v_b2, &gate_w1, &gate_b1, &gate_w2, &gate_b2};
}

bool FusionOptions::applies_to_layer(int layer) const {
  if (layers.empty()) return true;
  return std::find(layers.begin(), layers.end(), layer) != layers.end();
}

FusionVars adapt(ad::Graph& g, ad::Var f_g, AdapterSet& adapters,
                 const std::optional<double>& gate_override) {
  if (f_g.rows() != 1 || f_g.cols() != adapters.d_g) {
    throw ValidationError("adapt: f_g must be 1 x d_g");
  }

  ad::Var hq_raw = ffn2(g, f_g, adapters.q_w1, adapters.q_b1, adapters.q_w2, adapters.q_b2);
  ad::Var hk_raw = ffn2(g, f_g, adapters.k_w1, adapters.k_b1, adapters.k_w2, adapters.k_b2);
  ad::Var hv_raw = ffn2(g, f_g, adapters.v_w1, adapters.v_b1, adapters.v_w2, adapters.v_b2);

  ad::Var gate;
  if (gate_override.has_value()) {
    gate = g.input(ad::Mat::Constant(1, adapters.d_model, *gate_override));
  } else {
    ad::Var mid = g.relu(g.add(g.matmul(f_g, g.param(adapters.gate_w1)), g.param(adapters.gate_b1)));
    gate = g.sigmoid(g.add(g.matmul(mid, g.param(adapters.gate_w2)), g.param(adapters.gate_b2)));
  }

  FusionVars out;
  out.h_q = g.mul(hq_raw, gate);
  out.h_k = g.mul(hk_raw, gate);
  out.h_v = g.mul(hv_raw, gate);
  out.gate_mean = gate.value().mean();
  return out;
}

FusionVectors adapt_values(const Eigen::RowVectorXd& f_g, AdapterSet& adapters,
                           const std::optional<double>& gate_override) {
  ad::Graph g;
  FusionVars vars = adapt(g, g.input(f_g), adapters, gate_override);
  FusionVectors fv;
  fv.h_q = vars.h_q.value().row(0);
  fv.h_k = vars.h_k.value().row(0);
  fv.h_v = vars.h_v.value().row(0);
  fv.gate_mean = vars.gate_mean;
  return fv;
}

FusionVars to_vars(ad::Graph& g, const FusionVectors& fv) {
  FusionVars out;
  out.h_q = g.input(fv.h_q);
  out.h_k = g.input(fv.h_k);
  out.h_v = g.input(fv.h_v);
  out.gate_mean = fv.gate_mean;
  return out;
}

AttentionState fuse_qkv(ad::Graph& g, ad::Var q, ad::Var k, ad::Var v, const FusionVars& fv) {
  if (q.cols() != fv.h_q.cols() || k.cols() != fv.h_k.cols() || v.cols() != fv.h_v.cols()) {
    throw ValidationError("fuse_qkv: fusion vector width must match q/k/v width");
  }
  if (k.rows() != q.rows() || v.rows() != q.rows()) {
    throw ValidationError("fuse_qkv: q/k/v must share sequence length");
  }
  AttentionState st;
  st.q_fusion = g.add_rowvec(q, fv.h_q);
  st.k_fusion = g.concat_rows(fv.h_k, k);
  st.v_fusion = g.concat_rows(fv.h_v, v);
  return st;
}

ClassifierHead ClassifierHead::make(int d_model, Rng& rng) {
  ClassifierHead h;
  h.d_model = d_model;
  const int d_half = d_model / 2;
  const double bd = 1.0 / std::sqrt(static_cast<double>(d_model));
  const double bh = 1.0 / std::sqrt(static_cast<double>(d_half));
  h.query_w = ad::Parameter("head.query.w", uniform_init(d_model, d_model, bd, rng));
  h.query_b = ad::Parameter("head.query.b", uniform_init(1, d_model, bd, rng));
  h.mlp_w1 = ad::Parameter("head.mlp.w1", uniform_init(d_model, d_half, bd, rng));
  h.mlp_b1 = ad::Parameter("head.mlp.b1", uniform_init(1, d_half, bd, rng));
  h.mlp_w2 = ad::Parameter("head.mlp.w2", uniform_init(d_half, 1, bh, rng));
  h.mlp_b2 = ad::Parameter("head.mlp.b2", uniform_init(1, 1, bh, rng));
  return h;
}

std::vector<ad::Parameter*> ClassifierHead::parameters() {
  return {&query_w, &query_b, &mlp_w1, &mlp_b1, &mlp_w2, &mlp_b2};
}

ad::Var cross_attend_classify(ad::Graph& g, ad::Var h_q, ad::Var f_llm, ClassifierHead& head) {
  if (f_llm.rows() < 1) throw ValidationError("cross_attend_classify: empty f_llm");
  if (h_q.rows() != 1 || h_q.cols() != f_llm.cols()) {
    throw ValidationError("cross_attend_classify: h_q must be 1 x d with d = cols(f_llm)");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(f_llm.cols()));

  ad::Var query = g.add(g.matmul(h_q, g.param(head.query_w)), g.param(head.query_b));
  ad::Var scores = g.scale(g.matmul(query, g.transpose(f_llm)), inv_sqrt_d);  // 1 x L
  ad::Var weights = g.softmax_rows(scores);
  ad::Var context = g.matmul(weights, f_llm);                                 // 1 x d

  ad::Var hidden = g.relu(g.add(g.matmul(context, g.param(head.mlp_w1)), g.param(head.mlp_b1)));
  return g.add(g.matmul(hidden, g.param(head.mlp_w2)), g.param(head.mlp_b2));  // 1 x 1
}

}  // namespace spd::fusion
