#pragma once

#include <map>
#include <string>
#include <vector>

#include "spd/ad.hpp"
#include "spd/datamodel.hpp"
#include "spd/rng.hpp"

namespace spd::graph {

enum class EncoderKind { hash_bag, external };

struct EncoderConfig {
  EncoderKind kind = EncoderKind::hash_bag;
  int buckets = 4096;
  int dim = 128;
  std::string sidecar_path;   // external mode: line-delimited vector records
};

// Precomputed node vectors keyed by (sample id, node id); the external
// counterpart of the hash-bag encoder.
class ExternalTable {
 public:
  static ExternalTable load(const std::string& path, int expected_dim);
  const Eigen::RowVectorXd& lookup(const std::string& sample_id,
                                   const std::string& node_id) const;
  size_t size() const { return table_.size(); }

 private:
  std::map<std::pair<std::string, std::string>, Eigen::RowVectorXd> table_;
};

// One GGCN layer: five d x d maps. Node update gates each in-edge message
// through the sigmoid of the edge's current vector; edge update mixes the
// edge vector with its endpoints.
struct GgcnLayerParams {
  ad::Parameter wa, wb, wu, wv, ww;
  static GgcnLayerParams make(const std::string& prefix, int dim, Rng& rng);
  std::vector<ad::Parameter*> parameters();
};

struct GraphBranchConfig {
  int layers = 3;       // T
  int dim = 128;        // shared node/edge width
  int out_dim = 256;    // d_g, the pair embedding width
  EncoderConfig encoder;
};

struct GraphBranch {
  GraphBranchConfig cfg;
  ad::Parameter bucket_emb;              // hash_bag: buckets x dim
  std::vector<GgcnLayerParams> ggcn;
  ad::Parameter pair_proj;               // 3*dim -> out_dim
  const ExternalTable* external = nullptr;  // set by the owner in external mode

  static GraphBranch make(const GraphBranchConfig& cfg, Rng& rng);
  std::vector<ad::Parameter*> parameters();
};

// Pooled pair embedding with its provenance.
struct GraphEmbedding {
  Eigen::RowVectorXd f_g;
  std::string sample_id;
  int layers = 0;
};

// Edge list resolved to block indices, in cfg edge order.
struct EdgeIndex {
  std::vector<int> src, dst;
};
EdgeIndex index_edges(const data::Cfg& cfg);

// Initial node vectors (N x dim). hash_bag averages learned bucket
// embeddings of the block's tokens; external looks vectors up by
// (sample id, node id).
ad::Var encode_nodes(ad::Graph& g, GraphBranch& branch, const data::Cfg& cfg,
                     const std::string& sample_id);

// Single message-passing step; returns the updated node and edge matrices.
std::pair<ad::Var, ad::Var> ggcn_layer(ad::Graph& g, ad::Var h, ad::Var e,
                                       const EdgeIndex& edges, GgcnLayerParams& params);

// T gated layers from zero-initialised edge vectors, then mean pooling
// over the final node vectors. Returns a 1 x dim row.
ad::Var encode_graph(ad::Graph& g, GraphBranch& branch, const data::Cfg& cfg,
                     const std::string& sample_id);

struct PairVars {
  ad::Var f_g;        // 1 x out_dim
  ad::Var g_pre;      // 1 x dim
  ad::Var g_post;     // 1 x dim
};

// Shared-weight encodings of both graphs; f_g projects
// [g_pre, g_post, g_post - g_pre] to out_dim.
PairVars encode_pair(ad::Graph& g, GraphBranch& branch, const data::Cfg& pre,
                     const data::Cfg& post, const std::string& sample_id);

// Value-level convenience.
GraphEmbedding encode_pair_values(GraphBranch& branch, const data::Cfg& pre,
                                  const data::Cfg& post, const std::string& sample_id);

// Mean-pooled initial node vectors (before any GGCN layer); the graph-side
// input to representation-similarity diagnostics.
Eigen::RowVectorXd pooled_node_encoding(GraphBranch& branch, const data::Cfg& cfg,
                                        const std::string& sample_id);

// Tokens a block contributes to the hash bag (split on anything outside
// [a-z0-9_], lower-cased).
std::vector<std::string> block_tokens(const data::BasicBlock& block);

}  // namespace spd::graph
