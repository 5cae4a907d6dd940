#include "spd/model.hpp"

#include "spd/errors.hpp"
#include "spd/rng.hpp"

namespace spd::model {

JointModel JointModel::make(const ModelConfig& cfg, uint64_t seed) {
  JointModel m;
  m.cfg = cfg;
  m.init_seed = seed;
  Rng root(seed);
  Rng lm_rng = root.derive("lm");
  Rng graph_rng = root.derive("graph");
  Rng fusion_rng = root.derive("fusion");
  Rng head_rng = root.derive("head");
  m.lm = lm::MiniLm::make(cfg.lm, lm_rng);
  m.graph = graph::GraphBranch::make(cfg.graph, graph_rng);
  m.adapters = fusion::AdapterSet::make(cfg.graph.out_dim, cfg.lm.d_model, fusion_rng);
  m.head = fusion::ClassifierHead::make(cfg.lm.d_model, head_rng);
  return m;
}

void JointModel::attach_external_table() {
  if (cfg.graph.encoder.kind != graph::EncoderKind::external) return;
  external_table = std::make_shared<graph::ExternalTable>(
      graph::ExternalTable::load(cfg.graph.encoder.sidecar_path, cfg.graph.dim));
  graph.external = external_table.get();
}

std::vector<ad::Parameter*> JointModel::llm_parameters() { return lm.parameters(); }

std::vector<ad::Parameter*> JointModel::graph_parameters() {
  std::vector<ad::Parameter*> ps = graph.parameters();
  for (ad::Parameter* p : adapters.parameters()) ps.push_back(p);
  for (ad::Parameter* p : head.parameters()) ps.push_back(p);
  return ps;
}

std::vector<ad::Parameter*> JointModel::all_parameters() {
  std::vector<ad::Parameter*> ps = llm_parameters();
  for (ad::Parameter* p : graph_parameters()) ps.push_back(p);
  return ps;
}

fusion::FusionOptions JointModel::fusion_options() const {
  fusion::FusionOptions opts;
  opts.layers = cfg.fusion_layers;
  return opts;
}

ad::Var fused_logit(ad::Graph& g, JointModel& m, const data::PatchSample& s,
                    const fusion::FusionOptions* options,
                    const std::optional<double>& gate_override) {
  const fusion::FusionOptions default_opts = m.fusion_options();
  const fusion::FusionOptions& opts = options ? *options : default_opts;

  graph::PairVars pair = graph::encode_pair(g, m.graph, s.pre_cfg, s.post_cfg, s.id);
  fusion::FusionVars fv =
      fusion::adapt(g, pair.f_g, m.adapters, gate_override ? gate_override : opts.gate_override);

  const std::vector<int> ids = lm::tokenize(lm::build_prompt(s), m.cfg.lm.max_len);
  lm::FusionContext ctx;
  ctx.vars = &fv;
  ctx.options = &opts;
  ad::Var hidden = lm::forward_hidden(g, m.lm, ids, &ctx);

  return fusion::cross_attend_classify(g, fv.h_q, hidden, m.head);
}

double fused_logit_value(JointModel& m, const data::PatchSample& s,
                         const fusion::FusionOptions* options,
                         const std::optional<double>& gate_override) {
  ad::Graph g;
  return fused_logit(g, m, s, options, gate_override).scalar();
}

lm::YesNoScore llm_score(JointModel& m, const data::PatchSample& s) {
  const std::vector<int> ids = lm::tokenize(lm::build_prompt(s), m.cfg.lm.max_len);
  return lm::score_yes_no(m.lm, ids);
}

Eigen::RowVectorXd llm_pooled_hidden(JointModel& m, const data::PatchSample& s) {
  const std::vector<int> ids = lm::tokenize(lm::build_prompt(s), m.cfg.lm.max_len);
  ad::Graph g;
  ad::Var hidden = lm::forward_hidden(g, m.lm, ids);
  return g.mean_rows(hidden).value().row(0);
}

Eigen::RowVectorXd graph_pooled_encoding(JointModel& m, const data::PatchSample& s) {
  const Eigen::RowVectorXd pre = graph::pooled_node_encoding(m.graph, s.pre_cfg, s.id);
  const Eigen::RowVectorXd post = graph::pooled_node_encoding(m.graph, s.post_cfg, s.id);
  return 0.5 * (pre + post);
}

}  // namespace spd::model
