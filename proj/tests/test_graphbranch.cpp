#include "doctest.h"

#include <fstream>
#include <map>
#include <set>

#include "spd/errors.hpp"
#include "spd/graphbranch.hpp"
#include "spd/rng.hpp"
#include "spd/synthgen.hpp"
#include "test_support.hpp"

using namespace spd;
using ad::Mat;
using testsup::to_vec;

namespace {

graph::GraphBranch small_branch(int dim, int layers, int out_dim, uint64_t seed,
                                int buckets = 64) {
  graph::GraphBranchConfig cfg;
  cfg.dim = dim;
  cfg.layers = layers;
  cfg.out_dim = out_dim;
  cfg.encoder.buckets = buckets;
  cfg.encoder.dim = dim;
  Rng rng(seed);
  return graph::GraphBranch::make(cfg, rng);
}

data::Cfg chain_cfg(const std::vector<std::vector<std::string>>& blocks,
                    const std::vector<std::pair<int, int>>& edges) {
  data::Cfg cfg;
  for (size_t i = 0; i < blocks.size(); ++i) {
    cfg.blocks.push_back({"n" + std::to_string(i), blocks[i]});
  }
  for (const auto& [s, d] : edges) {
    cfg.edges.push_back({"n" + std::to_string(s), "n" + std::to_string(d)});
  }
  return cfg;
}

data::Cfg random_cfg(Rng& rng, int max_nodes) {
  const int n = 1 + static_cast<int>(rng.below(static_cast<uint64_t>(max_nodes)));
  std::vector<std::vector<std::string>> blocks;
  for (int i = 0; i < n; ++i) {
    blocks.push_back({"op" + std::to_string(rng.below(6)) + " r" + std::to_string(rng.below(4)),
                      "mov r" + std::to_string(rng.below(4)) + ", 1"});
  }
  std::set<std::pair<int, int>> edges;
  const int m = static_cast<int>(rng.below(static_cast<uint64_t>(2 * n)));
  for (int k = 0; k < m; ++k) {
    edges.insert({static_cast<int>(rng.below(static_cast<uint64_t>(n))),
                  static_cast<int>(rng.below(static_cast<uint64_t>(n)))});
  }
  return chain_cfg(blocks, {edges.begin(), edges.end()});
}

}  // namespace

TEST_CASE("hash_bag encoding is deterministic per block text") {
  auto branch = small_branch(8, 1, 8, 3);
  const auto cfg = chain_cfg({{"mov r1, r2"}, {"mov r1, r2"}, {"add r3, 4"}}, {});
  ad::Graph g;
  const Mat h = graph::encode_nodes(g, branch, cfg, "s").value();
  CHECK((h.row(0) - h.row(1)).norm() == 0.0);
  CHECK((h.row(0) - h.row(2)).norm() > 0.0);
}

TEST_CASE("zero bucket table gives zero node vectors") {
  auto branch = small_branch(8, 1, 8, 3);
  branch.bucket_emb.value.setZero();
  const auto cfg = chain_cfg({{"ret"}}, {});
  ad::Graph g;
  CHECK(graph::encode_nodes(g, branch, cfg, "s").value().norm() == 0.0);
}

TEST_CASE("external encoder looks vectors up and names missing nodes") {
  const std::string path = "/tmp/ext_vectors.jsonl";
  {
    std::ofstream out(path);
    out << R"({"sample_id":"s1","node_id":"n0","vector":[1.0,2.0]})" << "\n";
  }
  const auto table = graph::ExternalTable::load(path, 2);
  CHECK(table.size() == 1);
  CHECK(table.lookup("s1", "n0")(1) == doctest::Approx(2.0));

  graph::GraphBranchConfig cfg;
  cfg.dim = 2;
  cfg.layers = 1;
  cfg.out_dim = 4;
  cfg.encoder.kind = graph::EncoderKind::external;
  cfg.encoder.dim = 2;
  Rng rng(4);
  auto branch = graph::GraphBranch::make(cfg, rng);
  branch.external = &table;

  ad::Graph g;
  const auto one = chain_cfg({{"ret"}}, {});
  CHECK(graph::encode_nodes(g, branch, one, "s1").value()(0, 0) == doctest::Approx(1.0));

  const auto two = chain_cfg({{"ret"}, {"nop"}}, {});
  try {
    ad::Graph g2;
    graph::encode_nodes(g2, branch, two, "s1");
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("n1") != std::string::npos);
  }
  std::remove(path.c_str());
}

TEST_CASE("ggcn_layer worked micro-examples") {
  // Single node, no edges, identity W_A: h' = relu(h).
  {
    graph::GgcnLayerParams params;
    params.wa = ad::Parameter("wa", Mat::Identity(2, 2));
    params.wb = ad::Parameter("wb", Mat::Zero(2, 2));
    params.wu = ad::Parameter("wu", Mat::Zero(2, 2));
    params.wv = ad::Parameter("wv", Mat::Zero(2, 2));
    params.ww = ad::Parameter("ww", Mat::Zero(2, 2));
    ad::Graph g;
    Mat h(1, 2);
    h << 1.0, -2.0;
    graph::EdgeIndex edges;
    auto [h2, e2] = graph::ggcn_layer(g, g.input(h), g.input(Mat::Zero(0, 2)), edges, params);
    CHECK(h2.value()(0, 0) == doctest::Approx(1.0));
    CHECK(h2.value()(0, 1) == doctest::Approx(0.0));
  }
  // Edge j->i with zero edge vector: gate sigma(0)=0.5, h_i' = relu(0.5 * 2).
  {
    graph::GgcnLayerParams params;
    params.wa = ad::Parameter("wa", Mat::Zero(1, 1));
    params.wb = ad::Parameter("wb", Mat::Ones(1, 1));
    params.wu = ad::Parameter("wu", Mat::Zero(1, 1));
    params.wv = ad::Parameter("wv", Mat::Zero(1, 1));
    params.ww = ad::Parameter("ww", Mat::Zero(1, 1));
    ad::Graph g;
    Mat h(2, 1);
    h << 0.0, 2.0;  // node 0 = i (target), node 1 = j (source)
    graph::EdgeIndex edges;
    edges.src = {1};
    edges.dst = {0};
    auto [h2, e2] = graph::ggcn_layer(g, g.input(h), g.input(Mat::Zero(1, 1)), edges, params);
    CHECK(h2.value()(0, 0) == doctest::Approx(1.0));
    CHECK(h2.value()(1, 0) == doctest::Approx(0.0));
  }
  // All parameters zero: everything collapses to zero.
  {
    graph::GgcnLayerParams params;
    for (ad::Parameter* p :
         {&params.wa, &params.wb, &params.wu, &params.wv, &params.ww}) {
      *p = ad::Parameter("z", Mat::Zero(3, 3));
    }
    ad::Graph g;
    graph::EdgeIndex edges;
    edges.src = {0};
    edges.dst = {1};
    auto [h2, e2] = graph::ggcn_layer(g, g.input(Mat::Ones(2, 3)), g.input(Mat::Ones(1, 3)),
                                      edges, params);
    CHECK(h2.value().norm() == 0.0);
    CHECK(e2.value().norm() == 0.0);
  }
}

TEST_CASE("edge gates lie strictly inside (0,1)") {
  // Edge vectors reachable from parameters in [-1,1] stay well inside the
  // sigmoid's non-saturating range; +/-30 already covers several times the
  // magnitudes message passing can produce at these widths.
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const Mat e = testsup::random_mat(3, 4, rng, -30.0, 30.0);
    ad::Graph g;
    const Mat gate = g.sigmoid(g.input(e)).value();
    for (Eigen::Index i = 0; i < gate.size(); ++i) {
      CHECK(gate.data()[i] > 0.0);
      CHECK(gate.data()[i] < 1.0);
    }
  }
}

TEST_CASE("encode_graph pooling basics") {
  auto branch = small_branch(8, 2, 8, 5);
  // One node: the pooled vector is that node's final vector.
  const auto one = chain_cfg({{"mov r1, 1"}}, {});
  ad::Graph g;
  const Mat pooled = graph::encode_graph(g, branch, one, "s").value();

  // k disconnected copies of the same node pool to the same vector.
  const auto three = chain_cfg({{"mov r1, 1"}, {"mov r1, 1"}, {"mov r1, 1"}}, {});
  ad::Graph g2;
  const Mat pooled3 = graph::encode_graph(g2, branch, three, "s").value();
  CHECK((pooled - pooled3).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("encode_graph is invariant under node relabeling") {
  auto branch = small_branch(16, 3, 16, 6, 128);
  Rng rng(31);
  for (int trial = 0; trial < 25; ++trial) {
    const auto cfg = random_cfg(rng, 6);
    ad::Graph g;
    const Mat base = graph::encode_graph(g, branch, cfg, "s").value();

    // Permute block order and rename ids consistently.
    std::vector<size_t> perm(cfg.blocks.size());
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    std::map<std::string, std::string> rename;
    data::Cfg permuted;
    for (size_t i = 0; i < perm.size(); ++i) {
      auto blk = cfg.blocks[perm[i]];
      rename[blk.id] = "m" + std::to_string(i);
      blk.id = "m" + std::to_string(i);
      permuted.blocks.push_back(std::move(blk));
    }
    for (const auto& [s, d] : cfg.edges) {
      permuted.edges.push_back({rename.at(s), rename.at(d)});
    }
    ad::Graph g2;
    const Mat after = graph::encode_graph(g2, branch, permuted, "s").value();
    CHECK((base - after).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("encode_pair difference channel and swap antisymmetry") {
  auto branch = small_branch(8, 2, 12, 9);
  Rng rng(12);
  const auto a = random_cfg(rng, 5);
  const auto b = random_cfg(rng, 5);

  ad::Graph g;
  auto pv_same = graph::encode_pair(g, branch, a, a, "s");
  CHECK((pv_same.g_pre.value() - pv_same.g_post.value()).norm() == 0.0);

  ad::Graph g2;
  auto fwd = graph::encode_pair(g2, branch, a, b, "s");
  ad::Graph g3;
  auto rev = graph::encode_pair(g3, branch, b, a, "s");
  CHECK((fwd.g_pre.value() - rev.g_post.value()).norm() == 0.0);
  CHECK((fwd.g_post.value() - rev.g_pre.value()).norm() == 0.0);
  const Mat diff_fwd = fwd.g_post.value() - fwd.g_pre.value();
  const Mat diff_rev = rev.g_post.value() - rev.g_pre.value();
  CHECK((diff_fwd + diff_rev).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("encode_pair agrees with the scalar re-implementation") {
  Rng rng(2025);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 2 + static_cast<int>(rng.below(3));  // d <= 4
    auto branch = small_branch(d, 2, d, 1000 + static_cast<uint64_t>(trial), 32);
    const auto pre = random_cfg(rng, 4);
    const auto post = random_cfg(rng, 4);

    ad::Graph g;
    const Mat f_g = graph::encode_pair(g, branch, pre, post, "s").f_g.value();

    // Scalar path: same initial node vectors, loop-based message passing.
    auto scalar_encode = [&](const data::Cfg& cfg) {
      ad::Graph tmp;
      testsup::Vec2d h = to_vec(graph::encode_nodes(tmp, branch, cfg, "s").value());
      const auto idx = graph::index_edges(cfg);
      std::vector<testsup::OracleEdge> edges;
      for (size_t k = 0; k < idx.src.size(); ++k) edges.push_back({idx.src[k], idx.dst[k]});
      testsup::Vec2d e(edges.size(), std::vector<double>(static_cast<size_t>(d), 0.0));
      for (auto& layer : branch.ggcn) {
        testsup::oracle_ggcn_layer(to_vec(layer.wa.value), to_vec(layer.wb.value),
                                   to_vec(layer.wu.value), to_vec(layer.wv.value),
                                   to_vec(layer.ww.value), h, e, edges);
      }
      std::vector<double> pooled(static_cast<size_t>(d), 0.0);
      for (const auto& row : h) {
        for (size_t c = 0; c < row.size(); ++c) pooled[c] += row[c];
      }
      for (auto& v : pooled) v /= static_cast<double>(h.size());
      return pooled;
    };
    const auto gp = scalar_encode(pre);
    const auto gq = scalar_encode(post);
    std::vector<double> cat;
    cat.insert(cat.end(), gp.begin(), gp.end());
    cat.insert(cat.end(), gq.begin(), gq.end());
    for (size_t c = 0; c < gp.size(); ++c) cat.push_back(gq[c] - gp[c]);
    const auto expect = testsup::oracle_vecmat(cat, to_vec(branch.pair_proj.value));

    for (int c = 0; c < d; ++c) {
      CHECK(std::abs(f_g(0, c) - expect[static_cast<size_t>(c)]) < 1e-5);
    }
  }
}

TEST_CASE("ggcn gradients match finite differences") {
  Rng rng(55);
  auto branch = small_branch(5, 2, 6, 77, 32);
  const auto pre = random_cfg(rng, 5);
  const auto post = random_cfg(rng, 5);

  auto params = branch.parameters();
  auto loss_value = [&] {
    ad::Graph g;
    auto pv = graph::encode_pair(g, branch, pre, post, "s");
    return g.sum_all(g.mul(pv.f_g, pv.f_g)).scalar();
  };
  auto backward = [&] {
    ad::Graph g;
    auto pv = graph::encode_pair(g, branch, pre, post, "s");
    g.backward(g.sum_all(g.mul(pv.f_g, pv.f_g)));
  };
  const auto res = testsup::grad_check(params, backward, loss_value);
  CHECK(res.checked >= 500);
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("all outputs stay finite for parameters in [-1,1]") {
  Rng rng(66);
  for (int trial = 0; trial < 50; ++trial) {
    auto branch = small_branch(6, 2, 6, rng.next_u64(), 16);
    const auto cfg = random_cfg(rng, 6);
    ad::Graph g;
    const Mat out = graph::encode_graph(g, branch, cfg, "s").value();
    CHECK(out.allFinite());
  }
}
