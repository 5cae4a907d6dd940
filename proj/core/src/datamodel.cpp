#include "spd/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "spd/errors.hpp"
#include "spd/llmbranch.hpp"
#include "spd/rng.hpp"

using nlohmann::json;

namespace spd::data {

const BasicBlock* Cfg::find_block(const std::string& id) const {
  for (const auto& b : blocks) {
    if (b.id == id) return &b;
  }
  return nullptr;
}

void validate_cfg(const Cfg& cfg) {
  if (cfg.blocks.empty()) throw ValidationError("cfg: at least one block required");
  std::set<std::string> ids;
  for (const auto& b : cfg.blocks) {
    if (b.id.empty()) throw ValidationError("cfg: empty block id");
    if (!ids.insert(b.id).second) throw ValidationError("cfg: duplicate block id '" + b.id + "'");
    if (b.instructions.empty()) {
      throw ValidationError("cfg: block '" + b.id + "' has no instructions");
    }
  }
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& [src, dst] : cfg.edges) {
    if (!ids.count(src)) throw ValidationError("cfg: edge source '" + src + "' is not a block");
    if (!ids.count(dst)) throw ValidationError("cfg: edge target '" + dst + "' is not a block");
    if (!seen.insert({src, dst}).second) {
      throw ValidationError("cfg: duplicate edge " + src + " -> " + dst);
    }
  }
}

void validate_sample(const PatchSample& s) {
  if (s.id.empty()) throw ValidationError("sample: empty id");
  if (s.label != 0 && s.label != 1) {
    throw ValidationError("sample '" + s.id + "': label must be 0 or 1");
  }
  if (s.pre_pseudo.empty()) throw ValidationError("sample '" + s.id + "': pre_pseudo is empty");
  if (s.post_pseudo.empty()) throw ValidationError("sample '" + s.id + "': post_pseudo is empty");
  const auto& levels = opt_levels();
  if (std::find(levels.begin(), levels.end(), s.meta.opt_level) == levels.end()) {
    throw ValidationError("sample '" + s.id + "': bad opt_level '" + s.meta.opt_level + "'");
  }
  try {
    validate_cfg(s.pre_cfg);
    validate_cfg(s.post_cfg);
  } catch (const ValidationError& e) {
    throw ValidationError("sample '" + s.id + "': " + e.what());
  }
}

namespace {

json cfg_to_json(const Cfg& cfg) {
  json nodes = json::array();
  for (const auto& b : cfg.blocks) {
    nodes.push_back({{"id", b.id}, {"text", b.instructions}});
  }
  json edges = json::array();
  for (const auto& [src, dst] : cfg.edges) {
    edges.push_back(json::array({src, dst}));
  }
  return {{"nodes", nodes}, {"edges", edges}};
}

Cfg cfg_from_json(const json& j) {
  Cfg cfg;
  if (!j.is_object() || !j.contains("nodes") || !j.contains("edges")) {
    throw ValidationError("cfg: expected object with 'nodes' and 'edges'");
  }
  for (const auto& n : j.at("nodes")) {
    BasicBlock b;
    b.id = n.at("id").get<std::string>();
    b.instructions = n.at("text").get<std::vector<std::string>>();
    cfg.blocks.push_back(std::move(b));
  }
  for (const auto& e : j.at("edges")) {
    if (!e.is_array() || e.size() != 2) throw ValidationError("cfg: edge must be [src, dst]");
    cfg.edges.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
  }
  return cfg;
}

const char* kKnownKeys[] = {"schema_version", "id",          "label",    "meta",
                            "pre_pseudo",     "post_pseudo", "pre_cfg",  "post_cfg"};

bool is_known_key(const std::string& k) {
  for (const char* known : kKnownKeys) {
    if (k == known) return true;
  }
  return false;
}

}  // namespace

std::string sample_to_json_line(const PatchSample& s) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["id"] = s.id;
  j["label"] = s.label;
  j["meta"] = {{"project", s.meta.project},
               {"opt_level", s.meta.opt_level},
               {"cwe", s.meta.cwe}};
  j["pre_pseudo"] = s.pre_pseudo;
  j["post_pseudo"] = s.post_pseudo;
  j["pre_cfg"] = cfg_to_json(s.pre_cfg);
  j["post_cfg"] = cfg_to_json(s.post_cfg);
  if (!s.extra_json.empty()) {
    json extra = json::parse(s.extra_json);
    for (auto& [k, v] : extra.items()) {
      if (!is_known_key(k)) j[k] = v;
    }
  }
  return j.dump();
}

PatchSample sample_from_json_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("record is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("record is not a JSON object");
  if (!j.contains("schema_version")) throw ValidationError("record missing field schema_version");
  if (j.at("schema_version").get<int>() != kSchemaVersion) {
    throw ValidationError("schema_version mismatch: expected " +
                          std::to_string(kSchemaVersion) + ", got " +
                          j.at("schema_version").dump());
  }

  PatchSample s;
  try {
    for (const char* key : {"id", "label", "meta", "pre_pseudo", "post_pseudo", "pre_cfg",
                            "post_cfg"}) {
      if (!j.contains(key)) {
        throw ValidationError(std::string("record missing field ") + key);
      }
    }
    s.id = j.at("id").get<std::string>();
    s.label = j.at("label").get<int>();
    const json& meta = j.at("meta");
    s.meta.project = meta.at("project").get<std::string>();
    s.meta.opt_level = meta.at("opt_level").get<std::string>();
    s.meta.cwe = meta.value("cwe", std::vector<std::string>{});
    s.pre_pseudo = j.at("pre_pseudo").get<std::string>();
    s.post_pseudo = j.at("post_pseudo").get<std::string>();
    s.pre_cfg = cfg_from_json(j.at("pre_cfg"));
    s.post_cfg = cfg_from_json(j.at("post_cfg"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed record: ") + e.what());
  }

  json extra = json::object();
  for (auto& [k, v] : j.items()) {
    if (!is_known_key(k)) extra[k] = v;
  }
  if (!extra.empty()) s.extra_json = extra.dump();

  validate_sample(s);
  return s;
}

LoadResult load_dataset(const std::string& path, bool strict) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset file: " + path);

  LoadResult result;
  std::string line;
  size_t line_no = 0;
  std::set<std::string> seen_ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      PatchSample s = sample_from_json_line(line);
      if (!seen_ids.insert(s.id).second) {
        throw ValidationError("duplicate sample id '" + s.id + "'");
      }
      result.samples.push_back(std::move(s));
    } catch (const ValidationError& e) {
      const std::string msg = "line " + std::to_string(line_no) + ": " + e.what();
      // Version mismatches indicate an incompatible file, not a bad record.
      if (strict || std::string(e.what()).find("schema_version mismatch") != std::string::npos) {
        throw ValidationError(msg);
      }
      ++result.skipped;
    }
  }
  return result;
}

void save_dataset(const std::vector<PatchSample>& samples, const std::string& path) {
  for (const auto& s : samples) validate_sample(s);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write dataset file: " + path);
  for (const auto& s : samples) {
    out << sample_to_json_line(s) << '\n';
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<StatsRow> dataset_stats(const std::vector<PatchSample>& samples, GroupBy group_by) {
  if (samples.empty()) throw ValidationError("dataset_stats: empty input");

  struct Acc {
    size_t n = 0;
    double nodes = 0.0, edges = 0.0, tokens = 0.0;
  };
  std::map<std::string, Acc> groups;

  auto keys_of = [&](const PatchSample& s) -> std::vector<std::string> {
    switch (group_by) {
      case GroupBy::none:
        return {"overall"};
      case GroupBy::opt_level:
        return {s.meta.opt_level};
      case GroupBy::project:
        return {s.meta.project};
      case GroupBy::cwe:
        if (s.meta.cwe.empty()) return {"(none)"};
        return s.meta.cwe;
    }
    return {"overall"};
  };

  for (const auto& s : samples) {
    const double nodes =
        0.5 * (static_cast<double>(s.pre_cfg.node_count()) + static_cast<double>(s.post_cfg.node_count()));
    const double edges =
        0.5 * (static_cast<double>(s.pre_cfg.edge_count()) + static_cast<double>(s.post_cfg.edge_count()));
    const double tokens = 0.5 * (static_cast<double>(lm::count_text_tokens(s.pre_pseudo)) +
                                 static_cast<double>(lm::count_text_tokens(s.post_pseudo)));
    for (const auto& key : keys_of(s)) {
      Acc& a = groups[key];
      ++a.n;
      a.nodes += nodes;
      a.edges += edges;
      a.tokens += tokens;
    }
  }

  std::vector<StatsRow> rows;
  for (const auto& [key, a] : groups) {
    StatsRow r;
    r.group = key;
    r.n_samples = a.n;
    r.avg_nodes = a.nodes / static_cast<double>(a.n);
    r.avg_edges = a.edges / static_cast<double>(a.n);
    r.avg_pseudo_tokens = a.tokens / static_cast<double>(a.n);
    rows.push_back(std::move(r));
  }
  return rows;
}

DatasetSplit make_split(const std::vector<PatchSample>& samples, double train_ratio,
                        double val_ratio, double test_ratio, uint64_t seed, PartitionKey key) {
  const double ratios[3] = {train_ratio, val_ratio, test_ratio};
  double sum = 0.0;
  for (double r : ratios) {
    if (r <= 0.0) throw ValidationError("make_split: ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("make_split: ratios must sum to 1");
  if (samples.empty()) throw ValidationError("make_split: empty sample list");

  DatasetSplit split;
  split.seed = seed;
  Rng rng = Rng(seed).derive("make_split");

  // Membership by sample id; 0=train, 1=val, 2=test.
  std::map<std::string, int> assignment;

  if (key == PartitionKey::sample) {
    std::vector<size_t> order(samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    const size_t n = samples.size();
    // Largest-remainder apportionment keeps the counts exact.
    size_t counts[3];
    double rema[3];
    size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
      const double exact = ratios[k] * static_cast<double>(n);
      counts[k] = static_cast<size_t>(std::floor(exact));
      rema[k] = exact - std::floor(exact);
      assigned += counts[k];
    }
    while (assigned < n) {
      int best = 0;
      for (int k = 1; k < 3; ++k) {
        if (rema[k] > rema[best]) best = k;
      }
      ++counts[best];
      rema[best] = -1.0;
      ++assigned;
    }
    size_t at = 0;
    for (int k = 0; k < 3; ++k) {
      for (size_t i = 0; i < counts[k]; ++i) {
        assignment[samples[order[at++]].id] = k;
      }
    }
  } else {
    std::map<std::string, size_t> project_sizes;
    for (const auto& s : samples) ++project_sizes[s.meta.project];

    std::vector<std::string> projects;
    for (const auto& [p, _] : project_sizes) projects.push_back(p);

    int non_empty = 0;
    for (double r : ratios) {
      if (r > 0.0) ++non_empty;
    }
    if (projects.size() < static_cast<size_t>(non_empty)) {
      throw ValidationError("make_split: " + std::to_string(projects.size()) +
                            " project(s) cannot fill " + std::to_string(non_empty) +
                            " non-empty splits");
    }

    rng.shuffle(projects);
    const double n = static_cast<double>(samples.size());
    double deficit[3] = {ratios[0] * n, ratios[1] * n, ratios[2] * n};
    int project_count[3] = {0, 0, 0};
    size_t remaining = projects.size();
    for (const auto& p : projects) {
      // Make sure every split receives at least one project.
      int empty_needing = 0;
      for (int k = 0; k < 3; ++k) {
        if (project_count[k] == 0) ++empty_needing;
      }
      int best = -1;
      for (int k = 0; k < 3; ++k) {
        const bool eligible = (static_cast<size_t>(empty_needing) < remaining) || project_count[k] == 0;
        if (!eligible) continue;
        if (best < 0 || deficit[k] > deficit[best]) best = k;
      }
      for (const auto& s : samples) {
        if (s.meta.project == p) assignment[s.id] = best;
      }
      deficit[best] -= static_cast<double>(project_sizes[p]);
      ++project_count[best];
      --remaining;
    }
  }

  for (const auto& s : samples) {
    auto it = assignment.find(s.id);
    if (it == assignment.end()) continue;
    switch (it->second) {
      case 0: split.train.push_back(s.id); break;
      case 1: split.validation.push_back(s.id); break;
      default: split.test.push_back(s.id); break;
    }
  }
  return split;
}

std::string split_to_json(const DatasetSplit& split) {
  json j;
  j["seed"] = split.seed;
  j["train"] = split.train;
  j["validation"] = split.validation;
  j["test"] = split.test;
  return j.dump(2);
}

DatasetSplit split_from_json(const std::string& text) {
  json j = json::parse(text);
  DatasetSplit s;
  s.seed = j.value("seed", 0ull);
  s.train = j.at("train").get<std::vector<std::string>>();
  s.validation = j.at("validation").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  return s;
}

void save_split(const DatasetSplit& split, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write split file: " + path);
  out << split_to_json(split) << '\n';
}

DatasetSplit load_split(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open split file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return split_from_json(ss.str());
}

std::vector<PatchSample> select_samples(const std::vector<PatchSample>& all,
                                        const std::vector<std::string>& ids) {
  std::set<std::string> want(ids.begin(), ids.end());
  std::vector<PatchSample> out;
  for (const auto& s : all) {
    if (want.erase(s.id)) out.push_back(s);
  }
  if (!want.empty()) {
    throw ValidationError("select_samples: id '" + *want.begin() + "' not in dataset");
  }
  return out;
}

}  // namespace spd::data
