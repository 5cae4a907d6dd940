#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace spd::data {

constexpr int kSchemaVersion = 1;

inline const std::vector<std::string>& opt_levels() {
  static const std::vector<std::string> levels = {"O0", "O1", "O2", "O3", "Os"};
  return levels;
}

struct BasicBlock {
  std::string id;
  std::vector<std::string> instructions;
};

// Directed graph of basic blocks; edges are (src-id, dst-id) control
// transfers. Construction helpers validate against the block set.
struct Cfg {
  std::vector<BasicBlock> blocks;
  std::vector<std::pair<std::string, std::string>> edges;

  const BasicBlock* find_block(const std::string& id) const;
  size_t node_count() const { return blocks.size(); }
  size_t edge_count() const { return edges.size(); }
};

struct SampleMeta {
  std::string project;
  std::string opt_level;             // one of O0..O3, Os
  std::vector<std::string> cwe;      // may be empty
};

// One changed function pair with its binary label. `extra_json` holds
// unknown top-level keys of the on-disk record, preserved on round-trip.
struct PatchSample {
  std::string id;
  Cfg pre_cfg;
  Cfg post_cfg;
  std::string pre_pseudo;
  std::string post_pseudo;
  int label = 0;                     // security = 1, non-security = 0
  SampleMeta meta;
  std::string extra_json;            // serialized JSON object, "" if none
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
  uint64_t seed = 0;
};

// Throws ValidationError describing the first violated invariant.
void validate_cfg(const Cfg& cfg);
void validate_sample(const PatchSample& s);

struct LoadResult {
  std::vector<PatchSample> samples;
  size_t skipped = 0;                // invalid records dropped in lenient mode
};

// Line-delimited records; in strict mode any invalid record throws, otherwise
// invalid records are skipped and counted.
LoadResult load_dataset(const std::string& path, bool strict = true);
void save_dataset(const std::vector<PatchSample>& samples, const std::string& path);

// (De)serialization of a single record; exposed for tooling and tests.
std::string sample_to_json_line(const PatchSample& s);
PatchSample sample_from_json_line(const std::string& line);

enum class GroupBy { none, opt_level, project, cwe };

struct StatsRow {
  std::string group;                 // "overall" when ungrouped
  size_t n_samples = 0;
  double avg_nodes = 0.0;            // mean over pre and post CFGs
  double avg_edges = 0.0;
  double avg_pseudo_tokens = 0.0;    // byte-level tokenizer count of pre/post text
};

// Per-group averages of CFG size and pseudo-code token counts. Rows are
// ordered by group key. Throws on empty input.
std::vector<StatsRow> dataset_stats(const std::vector<PatchSample>& samples, GroupBy group_by);

enum class PartitionKey { sample, project };

// Deterministic three-way split. With PartitionKey::project every project's
// samples land in exactly one split; throws when there are fewer distinct
// projects than non-empty splits.
DatasetSplit make_split(const std::vector<PatchSample>& samples,
                        double train_ratio, double val_ratio, double test_ratio,
                        uint64_t seed, PartitionKey key = PartitionKey::sample);

std::string split_to_json(const DatasetSplit& split);
DatasetSplit split_from_json(const std::string& text);
void save_split(const DatasetSplit& split, const std::string& path);
DatasetSplit load_split(const std::string& path);

// Select samples by id set, preserving dataset order; unknown ids throw.
std::vector<PatchSample> select_samples(const std::vector<PatchSample>& all,
                                        const std::vector<std::string>& ids);

}  // namespace spd::data
