#include "spd/graphbranch.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "spd/errors.hpp"

using nlohmann::json;

namespace spd::graph {

namespace {

ad::Mat uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, Rng& rng) {
  ad::Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  }
  return m;
}

}  // namespace

ExternalTable ExternalTable::load(const std::string& path, int expected_dim) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open node-embedding sidecar: " + path);
  ExternalTable t;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError("sidecar line " + std::to_string(line_no) + ": " + e.what());
    }
    const auto sample_id = j.at("sample_id").get<std::string>();
    const auto node_id = j.at("node_id").get<std::string>();
    const auto vec = j.at("vector").get<std::vector<double>>();
    if (expected_dim > 0 && static_cast<int>(vec.size()) != expected_dim) {
      throw ValidationError("sidecar line " + std::to_string(line_no) + ": vector has " +
                            std::to_string(vec.size()) + " entries, expected " +
                            std::to_string(expected_dim));
    }
    Eigen::RowVectorXd row(vec.size());
    for (size_t i = 0; i < vec.size(); ++i) row(static_cast<Eigen::Index>(i)) = vec[i];
    t.table_[{sample_id, node_id}] = std::move(row);
  }
  return t;
}

const Eigen::RowVectorXd& ExternalTable::lookup(const std::string& sample_id,
                                                const std::string& node_id) const {
  auto it = table_.find({sample_id, node_id});
  if (it == table_.end()) {
    throw ValidationError("no external embedding for node '" + node_id + "' of sample '" +
                          sample_id + "'");
  }
  return it->second;
}

GgcnLayerParams GgcnLayerParams::make(const std::string& prefix, int dim, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  GgcnLayerParams p;
  p.wa = ad::Parameter(prefix + ".wa", uniform_init(dim, dim, bound, rng));
  p.wb = ad::Parameter(prefix + ".wb", uniform_init(dim, dim, bound, rng));
  p.wu = ad::Parameter(prefix + ".wu", uniform_init(dim, dim, bound, rng));
  p.wv = ad::Parameter(prefix + ".wv", uniform_init(dim, dim, bound, rng));
  p.ww = ad::Parameter(prefix + ".ww", uniform_init(dim, dim, bound, rng));
  return p;
}

std::vector<ad::Parameter*> GgcnLayerParams::parameters() { return {&wa, &wb, &wu, &wv, &ww}; }

GraphBranch GraphBranch::make(const GraphBranchConfig& cfg, Rng& rng) {
  GraphBranch b;
  b.cfg = cfg;
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
  if (cfg.encoder.kind == EncoderKind::hash_bag) {
    b.bucket_emb =
        ad::Parameter("graph.buckets", uniform_init(cfg.encoder.buckets, cfg.dim, bound, rng));
  } else {
    b.bucket_emb = ad::Parameter("graph.buckets", ad::Mat::Zero(1, cfg.dim));
  }
  for (int t = 0; t < cfg.layers; ++t) {
    b.ggcn.push_back(GgcnLayerParams::make("graph.ggcn" + std::to_string(t), cfg.dim, rng));
  }
  const double bp = 1.0 / std::sqrt(static_cast<double>(3 * cfg.dim));
  b.pair_proj = ad::Parameter("graph.pair_proj", uniform_init(3 * cfg.dim, cfg.out_dim, bp, rng));
  return b;
}

std::vector<ad::Parameter*> GraphBranch::parameters() {
  std::vector<ad::Parameter*> ps;
  if (cfg.encoder.kind == EncoderKind::hash_bag) ps.push_back(&bucket_emb);
  for (auto& layer : ggcn) {
    for (ad::Parameter* p : layer.parameters()) ps.push_back(p);
  }
  ps.push_back(&pair_proj);
  return ps;
}

std::vector<std::string> block_tokens(const data::BasicBlock& block) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&]() {
    if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  };
  for (const auto& line : block.instructions) {
    for (char ch : line) {
      const auto c = static_cast<unsigned char>(ch);
      if (std::isalnum(c) || ch == '_') {
        cur.push_back(static_cast<char>(std::tolower(c)));
      } else {
        flush();
      }
    }
    flush();
  }
  if (tokens.empty()) {
    // Punctuation-only text still needs a stable bucket.
    std::string all;
    for (const auto& line : block.instructions) all += line;
    tokens.push_back(all);
  }
  return tokens;
}

EdgeIndex index_edges(const data::Cfg& cfg) {
  std::map<std::string, int> pos;
  for (size_t i = 0; i < cfg.blocks.size(); ++i) pos[cfg.blocks[i].id] = static_cast<int>(i);
  EdgeIndex idx;
  for (const auto& [src, dst] : cfg.edges) {
    idx.src.push_back(pos.at(src));
    idx.dst.push_back(pos.at(dst));
  }
  return idx;
}

ad::Var encode_nodes(ad::Graph& g, GraphBranch& branch, const data::Cfg& cfg,
                     const std::string& sample_id) {
  data::validate_cfg(cfg);
  const int n = static_cast<int>(cfg.blocks.size());
  const int d = branch.cfg.dim;

  if (branch.cfg.encoder.kind == EncoderKind::external) {
    if (!branch.external) throw ValidationError("encode_nodes: external table not attached");
    ad::Mat h0(n, d);
    for (int i = 0; i < n; ++i) {
      h0.row(i) = branch.external->lookup(sample_id, cfg.blocks[static_cast<size_t>(i)].id);
    }
    return g.input(std::move(h0));
  }

  // One gather over all tokens, then a fixed per-block averaging matrix.
  std::vector<int> bucket_ids;
  std::vector<int> block_begin(static_cast<size_t>(n) + 1, 0);
  const auto buckets = static_cast<uint64_t>(branch.cfg.encoder.buckets);
  for (int i = 0; i < n; ++i) {
    for (const auto& tok : block_tokens(cfg.blocks[static_cast<size_t>(i)])) {
      bucket_ids.push_back(static_cast<int>(fnv1a64(tok) % buckets));
    }
    block_begin[static_cast<size_t>(i) + 1] = static_cast<int>(bucket_ids.size());
  }
  ad::Mat avg = ad::Mat::Zero(n, static_cast<Eigen::Index>(bucket_ids.size()));
  for (int i = 0; i < n; ++i) {
    const int b0 = block_begin[static_cast<size_t>(i)];
    const int b1 = block_begin[static_cast<size_t>(i) + 1];
    const double w = 1.0 / static_cast<double>(b1 - b0);
    for (int t = b0; t < b1; ++t) avg(i, t) = w;
  }
  ad::Var gathered = g.gather_rows(g.param(branch.bucket_emb), bucket_ids);
  return g.matmul(g.input(std::move(avg)), gathered);
}

std::pair<ad::Var, ad::Var> ggcn_layer(ad::Graph& g, ad::Var h, ad::Var e,
                                       const EdgeIndex& edges, GgcnLayerParams& params) {
  const Eigen::Index n = h.rows();
  const Eigen::Index m = e.rows();
  if (static_cast<size_t>(m) != edges.src.size()) {
    throw ValidationError("ggcn_layer: edge vector count must match edge list");
  }
  if (h.cols() != e.cols() && m > 0) {
    throw ValidationError("ggcn_layer: node and edge widths must agree");
  }

  // Selection matrices: rows pick edge endpoints; transposes scatter-sum.
  ad::Mat sel_src = ad::Mat::Zero(m, n);
  ad::Mat sel_dst = ad::Mat::Zero(m, n);
  for (Eigen::Index k = 0; k < m; ++k) {
    sel_src(k, edges.src[static_cast<size_t>(k)]) = 1.0;
    sel_dst(k, edges.dst[static_cast<size_t>(k)]) = 1.0;
  }
  ad::Var src_sel = g.input(sel_src);
  ad::Var dst_sel = g.input(sel_dst);

  ad::Var gate = g.sigmoid(e);                               // eta, per edge
  ad::Var hb = g.matmul(h, g.param(params.wb));
  ad::Var messages = g.mul(gate, g.matmul(src_sel, hb));     // E x d
  ad::Var incoming = g.matmul(g.transpose(dst_sel), messages);  // sum over in-edges
  ad::Var h_next = g.relu(g.add(g.matmul(h, g.param(params.wa)), incoming));

  ad::Var e_mix = g.add(g.matmul(e, g.param(params.wu)),
                        g.add(g.matmul(g.matmul(src_sel, h), g.param(params.wv)),
                              g.matmul(g.matmul(dst_sel, h), g.param(params.ww))));
  ad::Var e_next = g.relu(e_mix);
  return {h_next, e_next};
}

ad::Var encode_graph(ad::Graph& g, GraphBranch& branch, const data::Cfg& cfg,
                     const std::string& sample_id) {
  if (branch.cfg.layers < 1) throw ValidationError("encode_graph: at least one layer required");
  ad::Var h = encode_nodes(g, branch, cfg, sample_id);
  const EdgeIndex edges = index_edges(cfg);
  ad::Var e = g.input(ad::Mat::Zero(static_cast<Eigen::Index>(edges.src.size()), branch.cfg.dim));
  for (auto& layer : branch.ggcn) {
    auto [h_next, e_next] = ggcn_layer(g, h, e, edges, layer);
    h = h_next;
    e = e_next;
  }
  return g.mean_rows(h);
}

PairVars encode_pair(ad::Graph& g, GraphBranch& branch, const data::Cfg& pre,
                     const data::Cfg& post, const std::string& sample_id) {
  PairVars pv;
  pv.g_pre = encode_graph(g, branch, pre, sample_id);
  pv.g_post = encode_graph(g, branch, post, sample_id);
  ad::Var diff = g.sub(pv.g_post, pv.g_pre);
  ad::Var cat = g.concat_cols(g.concat_cols(pv.g_pre, pv.g_post), diff);
  pv.f_g = g.matmul(cat, g.param(branch.pair_proj));
  return pv;
}

GraphEmbedding encode_pair_values(GraphBranch& branch, const data::Cfg& pre,
                                  const data::Cfg& post, const std::string& sample_id) {
  ad::Graph g;
  PairVars pv = encode_pair(g, branch, pre, post, sample_id);
  GraphEmbedding emb;
  emb.f_g = pv.f_g.value().row(0);
  emb.sample_id = sample_id;
  emb.layers = branch.cfg.layers;
  return emb;
}

Eigen::RowVectorXd pooled_node_encoding(GraphBranch& branch, const data::Cfg& cfg,
                                        const std::string& sample_id) {
  ad::Graph g;
  ad::Var h = encode_nodes(g, branch, cfg, sample_id);
  return g.mean_rows(h).value().row(0);
}

}  // namespace spd::graph
