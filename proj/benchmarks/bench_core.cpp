#include <benchmark/benchmark.h>

#include "spd/asmcfg.hpp"
#include "spd/graphbranch.hpp"
#include "spd/llmbranch.hpp"
#include "spd/metrics.hpp"
#include "spd/rng.hpp"
#include "spd/synthgen.hpp"

namespace {

spd::synth::GenConfig toy_config() {
  spd::synth::GenConfig cfg;
  cfg.n_samples = 8;
  cfg.min_blocks = 4;
  cfg.max_blocks = 10;
  cfg.seed = 7;
  return cfg;
}

void BM_BuildCfg(benchmark::State& state) {
  const auto sample = spd::synth::gen_sample(toy_config(), 0);
  std::string listing;
  for (const auto& b : sample.pre_cfg.blocks) {
    listing += b.id + ":\n";
    for (const auto& ins : b.instructions) listing += "  " + ins + "\n";
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(spd::asmcfg::build_cfg(spd::asmcfg::parse_listing(listing)));
  }
}
BENCHMARK(BM_BuildCfg);

void BM_Tokenize(benchmark::State& state) {
  const auto sample = spd::synth::gen_sample(toy_config(), 0);
  const std::string prompt = spd::lm::build_prompt(sample);
  for (auto _ : state) {
    benchmark::DoNotOptimize(spd::lm::tokenize(prompt, 1024));
  }
}
BENCHMARK(BM_Tokenize);

void BM_EncodePair(benchmark::State& state) {
  spd::Rng rng(11);
  spd::graph::GraphBranchConfig cfg;
  cfg.dim = static_cast<int>(state.range(0));
  cfg.encoder.dim = cfg.dim;
  cfg.out_dim = 2 * cfg.dim;
  auto branch = spd::graph::GraphBranch::make(cfg, rng);
  const auto sample = spd::synth::gen_sample(toy_config(), 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        spd::graph::encode_pair_values(branch, sample.pre_cfg, sample.post_cfg, sample.id));
  }
}
BENCHMARK(BM_EncodePair)->Arg(32)->Arg(128);

void BM_LmForward(benchmark::State& state) {
  spd::Rng rng(13);
  spd::lm::MiniLmConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = static_cast<int>(state.range(0));
  cfg.n_heads = 4;
  cfg.d_ff = 4 * cfg.d_model;
  auto lm = spd::lm::MiniLm::make(cfg, rng);
  const auto sample = spd::synth::gen_sample(toy_config(), 2);
  const auto ids = spd::lm::tokenize(spd::lm::build_prompt(sample), 256);
  for (auto _ : state) {
    benchmark::DoNotOptimize(spd::lm::forward(lm, ids));
  }
}
BENCHMARK(BM_LmForward)->Arg(64)->Arg(128);

void BM_LinearCka(benchmark::State& state) {
  spd::Rng rng(17);
  const Eigen::Index n = state.range(0);
  spd::ad::Mat x(n, 16), y(n, 16);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < 16; ++j) {
      x(i, j) = rng.normal();
      y(i, j) = rng.normal();
    }
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(spd::eval::linear_cka(x, y));
  }
}
BENCHMARK(BM_LinearCka)->Arg(64)->Arg(512);

}  // namespace

BENCHMARK_MAIN();
