#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "pclformer/metrics.hpp"
#include "pclformer/ops.hpp"
#include "pclformer/postprocess.hpp"
#include "pclformer/random.hpp"
#include "pclformer/tensor.hpp"
#include "pclformer/transformer.hpp"

using namespace pclformer;

namespace {

Tensor random_tensor(CounterRng& rng, Shape shape, bool requires_grad = false) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-1.0, 1.0);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

BlockConfig block(std::size_t t, std::size_t n, std::size_t d) {
  BlockConfig b;
  b.d_model = d;
  b.n_heads = 4;
  b.n_layers = 1;
  b.mlp_hidden = 2 * d;
  b.t_len = t;
  b.n_tokens = n;
  return b;
}

std::vector<Prediction> random_predictions(CounterRng& rng, std::size_t n) {
  std::vector<Prediction> out;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = rng.uniform(0.0, 2000.0);
    out.push_back({"v" + std::to_string(rng.uniform_int(0, 9)), s, s + rng.uniform(16.0, 128.0),
                   static_cast<int>(rng.uniform_int(1, 4)), rng.uniform(0.0, 1.0)});
  }
  return out;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  CounterRng rng(1);
  const auto a = random_tensor(rng, {n, n}), b = random_tensor(rng, {n, n});
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(ops::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

static void BM_TemporalAttention(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const std::size_t n = 4, d = 32;
  CounterRng rng(2);
  const auto q = random_tensor(rng, {t * n, d}), k = random_tensor(rng, {t * n, d}), v = random_tensor(rng, {t * n, d});
  const auto plan = temporal_plan(t, n, 4);
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(ops::attention(q, k, v, plan));
}
BENCHMARK(BM_TemporalAttention)->Arg(16)->Arg(64);

static void BM_EncoderForward(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const auto cfg = block(t, 4, 32);
  ParameterStore store;
  EncoderBlock enc(ParamInit(store, 3, "enc"), cfg);
  CounterRng rng(3);
  const auto x = random_tensor(rng, {t * 4, 32});
  NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(enc.forward(x));
}
BENCHMARK(BM_EncoderForward)->Arg(16)->Arg(64);

static void BM_EncoderForwardBackward(benchmark::State& state) {
  const auto t = static_cast<std::size_t>(state.range(0));
  const auto cfg = block(t, 4, 32);
  ParameterStore store;
  EncoderBlock enc(ParamInit(store, 4, "enc"), cfg);
  CounterRng rng(4);
  const auto x = random_tensor(rng, {t * 4, 32}, true);
  for (auto _ : state) {
    backward(ops::sum(enc.forward(x)));
    for (auto& p : store.tensors()) p.zero_grad();
  }
}
BENCHMARK(BM_EncoderForwardBackward)->Arg(16)->Arg(64);

static void BM_Nms(benchmark::State& state) {
  CounterRng rng(5);
  const auto preds = random_predictions(rng, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(nms(preds, 0.4));
}
BENCHMARK(BM_Nms)->Arg(100)->Arg(1000);

static void BM_AveragePrecision(benchmark::State& state) {
  CounterRng rng(6);
  const auto preds = random_predictions(rng, static_cast<std::size_t>(state.range(0)));
  std::vector<GroundTruth> gts;
  for (int i = 0; i < 200; ++i) {
    const long s = rng.uniform_int(0, 2000);
    gts.push_back({"v" + std::to_string(rng.uniform_int(0, 9)), {s, s + rng.uniform_int(16, 128), 1}});
  }
  std::vector<Prediction> one_class;
  for (auto p : preds) {
    p.c = 1;
    one_class.push_back(p);
  }
  for (auto _ : state) benchmark::DoNotOptimize(average_precision(one_class, gts, 0.5));
}
BENCHMARK(BM_AveragePrecision)->Arg(100)->Arg(1000);
BENCHMARK_MAIN();
