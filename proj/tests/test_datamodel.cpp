#include "doctest.h"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "spd/datamodel.hpp"
#include "spd/errors.hpp"
#include "spd/rng.hpp"
#include "spd/synthgen.hpp"

using namespace spd;
namespace fs = std::filesystem;

namespace {

data::PatchSample tiny_sample(const std::string& id, int label = 0,
                              const std::string& project = "p0",
                              const std::string& opt = "O0") {
  data::PatchSample s;
  s.id = id;
  s.label = label;
  s.meta.project = project;
  s.meta.opt_level = opt;
  s.pre_pseudo = "int f() { return 1; }";
  s.post_pseudo = "int f() { return 2; }";
  data::BasicBlock a{"A", {"mov r1, 1", "ret"}};
  data::BasicBlock b{"B", {"ret"}};
  s.pre_cfg.blocks = {a};
  s.post_cfg.blocks = {a, b};
  s.post_cfg.edges = {{"A", "B"}};
  return s;
}

std::string temp_path(const std::string& stem) {
  return (fs::temp_directory_path() / stem).string();
}

}  // namespace

TEST_CASE("single record round-trips through a file") {
  const std::string path = temp_path("dm_single.jsonl");
  data::save_dataset({tiny_sample("s1", 1)}, path);
  const auto r = data::load_dataset(path);
  REQUIRE(r.samples.size() == 1);
  const auto& s = r.samples[0];
  CHECK(s.id == "s1");
  CHECK(s.label == 1);
  CHECK(s.pre_pseudo == "int f() { return 1; }");
  CHECK(s.post_cfg.edges.size() == 1);
  fs::remove(path);
}

TEST_CASE("strict load rejects a record missing post_pseudo, naming the field") {
  const std::string path = temp_path("dm_missing.jsonl");
  {
    std::ofstream out(path);
    out << R"({"schema_version":1,"id":"x","label":0,"meta":{"project":"p","opt_level":"O0","cwe":[]},)"
        << R"("pre_pseudo":"a","pre_cfg":{"nodes":[{"id":"A","text":["ret"]}],"edges":[]},)"
        << R"("post_cfg":{"nodes":[{"id":"A","text":["ret"]}],"edges":[]}})" << "\n";
  }
  try {
    data::load_dataset(path, true);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("post_pseudo") != std::string::npos);
  }
  fs::remove(path);
}

TEST_CASE("lenient load skips and counts invalid records") {
  const std::string path = temp_path("dm_lenient.jsonl");
  {
    std::ofstream out(path);
    out << data::sample_to_json_line(tiny_sample("a")) << "\n";
    out << data::sample_to_json_line(tiny_sample("b")) << "\n";
    out << "{\"schema_version\":1,\"id\":\"broken\"}\n";
    out << data::sample_to_json_line(tiny_sample("c")) << "\n";
  }
  const auto r = data::load_dataset(path, false);
  CHECK(r.samples.size() == 3);
  CHECK(r.skipped == 1);
  // The same file fails a strict load.
  CHECK_THROWS_AS(data::load_dataset(path, true), ValidationError);
  fs::remove(path);
}

TEST_CASE("schema version mismatch is fatal even in lenient mode") {
  const std::string path = temp_path("dm_version.jsonl");
  {
    std::ofstream out(path);
    std::string line = data::sample_to_json_line(tiny_sample("a"));
    line.replace(line.find("\"schema_version\":1"), 18, "\"schema_version\":9");
    out << line << "\n";
  }
  CHECK_THROWS_AS(data::load_dataset(path, false), ValidationError);
  fs::remove(path);
}

TEST_CASE("round trip preserves fields, unicode and unknown keys") {
  const std::string path = temp_path("dm_round.jsonl");
  auto s1 = tiny_sample("u1");
  s1.pre_pseudo = "int f() { /* caf\xc3\xa9 \xe2\x9c\x93 */ return 0; }";
  s1.extra_json = R"({"commit":"abc123","note":7})";
  auto s2 = tiny_sample("u2", 1, "projB", "Os");
  s2.meta.cwe = {"CWE-125", "CWE-787"};

  data::save_dataset({s1, s2}, path);
  const auto r = data::load_dataset(path);
  REQUIRE(r.samples.size() == 2);
  CHECK(r.samples[0].pre_pseudo == s1.pre_pseudo);
  CHECK(r.samples[0].extra_json.find("abc123") != std::string::npos);
  CHECK(r.samples[1].meta.cwe == s2.meta.cwe);
  CHECK(r.samples[1].meta.opt_level == "Os");

  // Second generation of the file is byte-identical (stable serialization).
  const std::string path2 = temp_path("dm_round2.jsonl");
  data::save_dataset(r.samples, path2);
  std::ifstream f1(path), f2(path2);
  std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(c1 == c2);
  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("empty dataset round-trips") {
  const std::string path = temp_path("dm_empty.jsonl");
  data::save_dataset({}, path);
  CHECK(data::load_dataset(path).samples.empty());
  fs::remove(path);
}

TEST_CASE("missing file raises IoError") {
  CHECK_THROWS_AS(data::load_dataset(temp_path("no_such_file.jsonl")), IoError);
}

TEST_CASE("cfg validation catches the named invariants") {
  data::Cfg cfg;
  CHECK_THROWS_AS(data::validate_cfg(cfg), ValidationError);  // no blocks
  cfg.blocks = {{"A", {"ret"}}, {"A", {"nop"}}};
  CHECK_THROWS_AS(data::validate_cfg(cfg), ValidationError);  // duplicate id
  cfg.blocks = {{"A", {"ret"}}};
  cfg.edges = {{"A", "Z"}};
  CHECK_THROWS_AS(data::validate_cfg(cfg), ValidationError);  // dangling edge
  cfg.edges = {{"A", "A"}, {"A", "A"}};
  CHECK_THROWS_AS(data::validate_cfg(cfg), ValidationError);  // duplicate edge
  cfg.edges = {{"A", "A"}};
  CHECK_NOTHROW(data::validate_cfg(cfg));

  auto s = tiny_sample("v");
  s.meta.opt_level = "O9";
  CHECK_THROWS_AS(data::validate_sample(s), ValidationError);
  s = tiny_sample("v");
  s.label = 2;
  CHECK_THROWS_AS(data::validate_sample(s), ValidationError);
  s = tiny_sample("v");
  s.post_pseudo.clear();
  CHECK_THROWS_AS(data::validate_sample(s), ValidationError);
}

TEST_CASE("dataset_stats trivial averages") {
  // One sample: pre and post both 2 nodes / 1 edge.
  auto s = tiny_sample("s");
  s.pre_cfg = s.post_cfg;
  auto rows = data::dataset_stats({s}, data::GroupBy::none);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].avg_nodes == doctest::Approx(2.0));
  CHECK(rows[0].avg_edges == doctest::Approx(1.0));

  // Two samples with node counts {2, 4}: average 3.0.
  auto s2 = tiny_sample("s2");
  s2.pre_cfg.blocks = {{"A", {"ret"}}, {"B", {"ret"}}, {"C", {"ret"}}, {"D", {"ret"}}};
  s2.pre_cfg.edges.clear();
  s2.post_cfg = s2.pre_cfg;
  rows = data::dataset_stats({s, s2}, data::GroupBy::none);
  CHECK(rows[0].avg_nodes == doctest::Approx(3.0));

  // Token counts are byte counts of the pseudo-code under the byte tokenizer.
  auto s3 = tiny_sample("s3");
  s3.pre_pseudo = "abcd";
  s3.post_pseudo = "efghij";
  rows = data::dataset_stats({s3}, data::GroupBy::none);
  CHECK(rows[0].avg_pseudo_tokens == doctest::Approx(5.0));

  CHECK_THROWS_AS(data::dataset_stats({}, data::GroupBy::none), ValidationError);
}

TEST_CASE("dataset_stats is permutation invariant and grouping works") {
  synth::GenConfig gc;
  gc.n_samples = 24;
  gc.seed = 5;
  auto samples = synth::gen_dataset(gc);
  auto rows1 = data::dataset_stats(samples, data::GroupBy::project);

  Rng rng(3);
  rng.shuffle(samples);
  auto rows2 = data::dataset_stats(samples, data::GroupBy::project);
  REQUIRE(rows1.size() == rows2.size());
  for (size_t i = 0; i < rows1.size(); ++i) {
    CHECK(rows1[i].group == rows2[i].group);
    CHECK(rows1[i].avg_nodes == doctest::Approx(rows2[i].avg_nodes));
    CHECK(rows1[i].avg_pseudo_tokens == doctest::Approx(rows2[i].avg_pseudo_tokens));
  }
}

TEST_CASE("make_split is deterministic and exact") {
  std::vector<data::PatchSample> samples;
  for (int i = 0; i < 10; ++i) samples.push_back(tiny_sample("s" + std::to_string(i)));

  const auto a = data::make_split(samples, 0.8, 0.1, 0.1, 7);
  const auto b = data::make_split(samples, 0.8, 0.1, 0.1, 7);
  CHECK(a.train == b.train);
  CHECK(a.validation == b.validation);
  CHECK(a.test == b.test);
  CHECK(a.train.size() == 8);
  CHECK(a.validation.size() == 1);
  CHECK(a.test.size() == 1);

  CHECK_THROWS_AS(data::make_split(samples, 0.5, 0.5, 0.5, 7), ValidationError);
  CHECK_THROWS_AS(data::make_split(samples, 0.8, 0.2, -0.1, 7), ValidationError);
}

TEST_CASE("project partition confines each project to one split") {
  std::vector<data::PatchSample> samples;
  for (int i = 0; i < 30; ++i) {
    samples.push_back(
        tiny_sample("s" + std::to_string(i), 0, "proj" + std::to_string(i % 3)));
  }
  const auto split =
      data::make_split(samples, 0.6, 0.2, 0.2, 11, data::PartitionKey::project);

  auto project_of = [&](const std::string& id) {
    for (const auto& s : samples) {
      if (s.id == id) return s.meta.project;
    }
    return std::string();
  };
  std::map<std::string, std::set<int>> where;
  for (const auto& id : split.train) where[project_of(id)].insert(0);
  for (const auto& id : split.validation) where[project_of(id)].insert(1);
  for (const auto& id : split.test) where[project_of(id)].insert(2);
  for (const auto& [proj, splits] : where) {
    CHECK(splits.size() == 1);
  }

  // Two projects cannot fill three non-empty splits.
  std::vector<data::PatchSample> two;
  for (int i = 0; i < 8; ++i) {
    two.push_back(tiny_sample("t" + std::to_string(i), 0, "proj" + std::to_string(i % 2)));
  }
  CHECK_THROWS_AS(data::make_split(two, 0.6, 0.2, 0.2, 1, data::PartitionKey::project),
                  ValidationError);
}

TEST_CASE("split disjointness holds over random datasets") {
  Rng rng(123);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(40));
    const int n_projects = 3 + static_cast<int>(rng.below(5));
    std::vector<data::PatchSample> samples;
    for (int i = 0; i < n; ++i) {
      samples.push_back(tiny_sample("r" + std::to_string(i), 0,
                                    "proj" + std::to_string(rng.below(
                                        static_cast<uint64_t>(n_projects)))));
    }
    const auto key = trial % 2 == 0 ? data::PartitionKey::sample : data::PartitionKey::project;
    data::DatasetSplit split;
    try {
      split = data::make_split(samples, 0.7, 0.15, 0.15, rng.next_u64(), key);
    } catch (const ValidationError&) {
      continue;  // fewer distinct projects than splits; legitimately rejected
    }
    std::set<std::string> seen;
    size_t total = 0;
    for (const auto* part : {&split.train, &split.validation, &split.test}) {
      for (const auto& id : *part) {
        CHECK(seen.insert(id).second);  // pairwise disjoint
        ++total;
      }
    }
    CHECK(total == samples.size());
  }
}

TEST_CASE("split file round-trip and sample selection") {
  std::vector<data::PatchSample> samples;
  for (int i = 0; i < 6; ++i) samples.push_back(tiny_sample("k" + std::to_string(i)));
  const auto split = data::make_split(samples, 0.5, 0.25, 0.25, 9);
  const std::string path = temp_path("dm_split.json");
  data::save_split(split, path);
  const auto loaded = data::load_split(path);
  CHECK(loaded.train == split.train);
  CHECK(loaded.seed == split.seed);
  fs::remove(path);

  const auto train = data::select_samples(samples, split.train);
  CHECK(train.size() == split.train.size());
  CHECK_THROWS_AS(data::select_samples(samples, {"missing"}), ValidationError);
}
