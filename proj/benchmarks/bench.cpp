#include <benchmark/benchmark.h>

#include "prefrl/discriminator.hpp"
#include "prefrl/env.hpp"
#include "prefrl/mlp.hpp"
#include "prefrl/policy.hpp"
#include "prefrl/reward_model.hpp"

using namespace prefrl;

namespace {

Vec uniform(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec v(n);
  for (double& x : v) x = u(rng);
  return v;
}

void BM_MlpForward(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const MlpModel model = make_mlp({4, width, width, 1}, OutputTransform::identity, 1);
  const Vec input = uniform(4, 2);
  for (auto _ : state) benchmark::DoNotOptimize(forward(model, input));
}
BENCHMARK(BM_MlpForward)->Arg(64)->Arg(256);

void BM_MlpBackward(benchmark::State& state) {
  const auto width = static_cast<std::size_t>(state.range(0));
  const MlpModel model = make_mlp({4, width, width, 1}, OutputTransform::identity, 1);
  const Vec input = uniform(4, 2);
  const Vec upstream{1.0};
  for (auto _ : state) benchmark::DoNotOptimize(backward(model, input, upstream));
}
BENCHMARK(BM_MlpBackward)->Arg(64)->Arg(256);

// Forward plus backward over a batch of rows; compare per-row cost with BM_MlpBackward.
void BM_MlpBatch(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const MlpModel model = make_mlp({4, 64, 64, 1}, OutputTransform::identity, 1);
  const Vec inputs = uniform(rows * 4, 2);
  const Vec upstream(rows, 1.0);
  Vec grad(model.params.size());
  BatchTrace trace;
  for (auto _ : state) {
    forward_batch(model, inputs, rows, trace);
    accumulate_gradient_batch(model, trace, upstream, grad);
    benchmark::DoNotOptimize(grad.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows));
}
BENCHMARK(BM_MlpBatch)->Arg(32)->Arg(256);

void BM_DiscriminatorScore(benchmark::State& state) {
  const Discriminator disc = make_discriminator(25, 2, 2, 3);
  Segment segment;
  segment.states = uniform(50, 4);
  segment.actions = uniform(50, 5);
  segment.state_dim = 2;
  segment.action_dim = 2;
  for (auto _ : state) benchmark::DoNotOptimize(score(disc, segment));
}
BENCHMARK(BM_DiscriminatorScore);

void BM_Rollout(benchmark::State& state) {
  const Environment env = Environment::point_goal();
  const PolicyLearner learner = make_policy_learner(env.spec(), 4);
  RolloutOptions options;
  options.workers = static_cast<std::size_t>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(rollout(learner, env, 6, ++seed, options));
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * 6 * env.spec().horizon));
}
BENCHMARK(BM_Rollout)->Arg(1)->Arg(6)->UseRealTime()->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
