#include <benchmark/benchmark.h>

#include "bootrl/sampler.hpp"

using namespace bootrl;

namespace {

lm::ModelConfig bench_config(int context = 1536) {
  lm::ModelConfig cfg;
  cfg.context_length = context;
  cfg.vocab_size = textkit::vocab().size();
  return cfg;
}

std::vector<int> tokens_of(std::size_t n, uint64_t seed) {
  Rng rng(seed);
  std::vector<int> out(n);
  for (auto& t : out) t = static_cast<int>(rng.uniform_int(3, 98));
  return out;
}

void BM_Forward(benchmark::State& state) {
  const auto params = lm::Parameters::init(bench_config(), 1, "policy");
  const auto tokens = tokens_of(static_cast<std::size_t>(state.range(0)), 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(lm::forward(params, tokens));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(128)->Arg(256)->Arg(512);

void BM_LmLossBackward(benchmark::State& state) {
  const auto params = lm::Parameters::init(bench_config(), 3, "policy");
  const auto tokens = tokens_of(static_cast<std::size_t>(state.range(0)), 4);
  std::vector<uint8_t> mask(tokens.size(), 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(lm::lm_loss(params, tokens, mask));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_LmLossBackward)->Arg(128)->Arg(256)->Arg(512);

void BM_Decode(benchmark::State& state) {
  const auto params = lm::Parameters::init(bench_config(), 5, "policy");
  const auto prompt = tokens_of(200, 6);
  lm::SamplerConfig cfg;
  cfg.temperature = 1.0f;
  cfg.top_p = 1.0f;
  cfg.max_new_tokens = static_cast<int>(state.range(0));
  cfg.seed = 7;
  for (auto _ : state) {
    benchmark::DoNotOptimize(lm::sample(params, prompt, cfg));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Decode)->Arg(64)->Arg(256);

void BM_Prefill(benchmark::State& state) {
  const auto params = lm::Parameters::init(bench_config(), 8, "policy");
  const auto prompt = tokens_of(static_cast<std::size_t>(state.range(0)), 9);
  for (auto _ : state) {
    lm::KvCache cache = lm::KvCache::make(params.config);
    benchmark::DoNotOptimize(lm::prefill(params, prompt, cache));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Prefill)->Arg(256)->Arg(1024);

}  // namespace

BENCHMARK_MAIN();
