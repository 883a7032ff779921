#include <benchmark/benchmark.h>

#include "disgenib/data.hpp"
#include "disgenib/fsl.hpp"
#include "disgenib/model.hpp"

namespace {

using namespace dgib;

struct Setup {
  BaseNovelSplit split;
  DisGenModel model;
};

Setup make_setup() {
  auto split = split_base_novel(synth_make(SynthConfig{}, 0), last_classes(20, 5));
  ModelDims dims;
  dims.d_x = split.base.dim();
  dims.d_a = 8;
  dims.d_z = 8;
  dims.classes = split.base.classes();
  DisGenModel m = DisGenModel::init(dims, 0);
  return {std::move(split), std::move(m)};
}

// 20 episodes of 5-way 1-shot; range(0) selects baseline (0) or augmented (1).
void BM_EvalEpisodes(benchmark::State& state) {
  const Setup s = make_setup();
  EvalSpec spec;
  spec.episodes = 20;
  const bool baseline = state.range(0) == 0;
  const auto threads = static_cast<std::size_t>(state.range(1));
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        eval_episodes(s.model, s.split.novel, spec, AugmentConfig{}, baseline, nullptr, &s.split.base, 0, threads));
  }
}
BENCHMARK(BM_EvalEpisodes)->Args({0, 1})->Args({1, 1})->Args({1, 4})->Unit(benchmark::kMillisecond);

void BM_SampleEpisode(benchmark::State& state) {
  const Dataset ds = synth_make(SynthConfig{}, 0);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(sample_episode(ds, 5, 1, 15, seed++));
}
BENCHMARK(BM_SampleEpisode);

}  // namespace
