#include "doctest.h"

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "spd/cli.hpp"

namespace fs = std::filesystem;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path dir;
  TempDir() {
    dir = fs::temp_directory_path() / ("spd_cli_test_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~TempDir() { fs::remove_all(dir); }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

// Mini training config sized for test speed, not quality.
const char* kMiniConfig =
    "seed = 11\n"
    "holdout_val = 0.2\n"
    "stage1.epochs = 1\n"
    "stage1.lr = 1e-3\n"
    "stage1.batch = 4\n"
    "stage1.patience = 2\n"
    "stage2.epochs = 1\n"
    "stage2.lr = 1e-3\n"
    "stage2.batch = 4\n"
    "stage2.patience = 3\n"
    "model.n_layers = 1\n"
    "model.n_heads = 2\n"
    "model.d_model = 16\n"
    "model.d_ff = 32\n"
    "model.max_positions = 512\n"
    "model.max_len = 384\n"
    "graph.layers = 2\n"
    "graph.dim = 8\n"
    "graph.out_dim = 12\n"
    "graph.encoder = hash_bag\n"
    "graph.buckets = 64\n"
    "fusion.layers = all\n";

}  // namespace

TEST_CASE("unknown subcommand and missing options are usage errors") {
  CHECK(spd::cli::run({"no-such-command"}) == 1);
  CHECK(spd::cli::run({"gen-toy"}) == 1);  // --out required
  CHECK(spd::cli::run({}) == 1);
}

TEST_CASE("gen-toy then validate exits zero; missing file exits one") {
  TempDir tmp;
  const std::string data = tmp / "toy.jsonl";
  CHECK(spd::cli::run({"gen-toy", "--n", "12", "--mode", "mixed", "--seed", "3", "--out",
                       data}) == 0);
  CHECK(spd::cli::run({"validate", "--data", data}) == 0);
  CHECK(spd::cli::run({"validate", "--data", tmp / "absent.jsonl"}) == 1);

  // A corrupted line fails strict validation but passes lenient counting.
  {
    std::ofstream out(data, std::ios::app);
    out << "{\"schema_version\":1,\"id\":\"bad\"}\n";
  }
  CHECK(spd::cli::run({"validate", "--data", data}) == 1);
  CHECK(spd::cli::run({"validate", "--data", data, "--lenient"}) == 0);
}

TEST_CASE("stats and split subcommands") {
  TempDir tmp;
  const std::string data = tmp / "toy.jsonl";
  REQUIRE(spd::cli::run({"gen-toy", "--n", "20", "--seed", "5", "--out", data}) == 0);
  CHECK(spd::cli::run({"stats", "--data", data, "--group-by", "project", "--out",
                       tmp / "stats.txt"}) == 0);
  CHECK(slurp(tmp / "stats.txt").find("avg_nodes") != std::string::npos);

  CHECK(spd::cli::run({"split", "--data", data, "--ratios", "0.6,0.2,0.2", "--seed", "4",
                       "--by", "project", "--out", tmp / "split.json"}) == 0);
  CHECK(slurp(tmp / "split.json").find("\"train\"") != std::string::npos);
  CHECK(spd::cli::run({"split", "--data", data, "--ratios", "oops", "--out",
                       tmp / "split2.json"}) == 1);
}

TEST_CASE("parse-asm prints blocks, edges and diffs") {
  TempDir tmp;
  const std::string a = tmp / "a.s";
  const std::string b = tmp / "b.s";
  {
    std::ofstream out(a);
    out << "entry:\n  cmp r1, 0\n  jz done\n  add r1, 1\ndone:\n  ret\n";
  }
  {
    std::ofstream out(b);
    out << "entry:\n  cmp r1, 0\n  jz done\n  add r1, 2\ndone:\n  ret\n";
  }
  CHECK(spd::cli::run({"parse-asm", "--in", a}) == 0);
  CHECK(spd::cli::run({"parse-asm", "--in", a, "--json"}) == 0);
  CHECK(spd::cli::run({"parse-asm", "--in", a, "--diff", b, "--json"}) == 0);
  CHECK(spd::cli::run({"parse-asm", "--in", tmp / "missing.s"}) == 1);

  const std::string bad = tmp / "bad.s";
  {
    std::ofstream out(bad);
    out << "x:\n  jmp nowhere\n";
  }
  CHECK(spd::cli::run({"parse-asm", "--in", bad}) == 1);
}

TEST_CASE("full pipeline is deterministic: identical report bytes across reruns") {
  TempDir tmp;
  const std::string data = tmp / "train.jsonl";
  const std::string test_data = tmp / "test.jsonl";
  const std::string config = tmp / "train.conf";
  {
    std::ofstream out(config);
    out << kMiniConfig;
  }
  REQUIRE(spd::cli::run({"gen-toy", "--n", "16", "--mode", "mixed", "--ratio", "0.5", "--seed",
                         "9", "--out", data}) == 0);
  REQUIRE(spd::cli::run({"gen-toy", "--n", "10", "--mode", "mixed", "--ratio", "0.5", "--seed",
                         "10", "--out", test_data}) == 0);

  auto run_pipeline = [&](const std::string& tag) {
    const std::string ck1 = tmp / ("s1_" + tag + ".ckpt");
    const std::string ck2 = tmp / ("s2_" + tag + ".ckpt");
    const std::string out_dir = tmp / ("eval_" + tag);
    REQUIRE(spd::cli::run({"train-stage1", "--config", config, "--data", data, "--out", ck1,
                           "--quiet"}) == 0);
    REQUIRE(spd::cli::run({"train-stage2", "--config", config, "--data", data, "--init", ck1,
                           "--out", ck2, "--quiet"}) == 0);
    REQUIRE(spd::cli::run({"eval", "--checkpoint", ck2, "--data", test_data, "--group-by",
                           "opt_level", "--out", out_dir, "--plot"}) == 0);
    return out_dir;
  };

  const std::string d1 = run_pipeline("a");
  const std::string d2 = run_pipeline("b");
  for (const char* name : {"/metrics.json", "/metrics.txt", "/predictions.jsonl",
                           "/accuracy.svg", "/f1.svg"}) {
    CHECK(slurp(d1 + name) == slurp(d2 + name));
  }

  // Checkpoint bytes are identical too.
  CHECK(slurp(tmp / "s2_a.ckpt") == slurp(tmp / "s2_b.ckpt"));

  // cka runs on the trained checkpoint.
  CHECK(spd::cli::run({"cka", "--checkpoint", tmp / "s2_a.ckpt", "--data", test_data, "--out",
                       tmp / "cka.txt"}) == 0);
  const std::string cka_text = slurp(tmp / "cka.txt");
  CHECK(cka_text.size() > 0);

  // Joint-ablation diagnostics command writes its JSON log.
  CHECK(spd::cli::run({"train-joint", "--config", config, "--data", data, "--out",
                       tmp / "joint.json", "--quiet"}) == 0);
  CHECK(slurp(tmp / "joint.json").find("grad_cosines") != std::string::npos);
}
