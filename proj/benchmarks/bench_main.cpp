#include <benchmark/benchmark.h>

#include "protoaudit/metrics/metrics.hpp"
#include "protoaudit/numerics/ops.hpp"
#include "protoaudit/prp/relevance.hpp"
#include "protoaudit/sourcebench/generator.hpp"
#include "protoaudit/sourcebench/mixer.hpp"
#include "protoaudit/trainer/trainer.hpp"

using namespace protoaudit;
using numerics::Tensor;

namespace {

Tensor filled(numerics::Shape shape, std::uint64_t seed) {
  numerics::Rng rng(seed);
  Tensor t(std::move(shape));
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

const sourcebench::Pools& pools() {
  static const sourcebench::Pools p = [] {
    sourcebench::GeneratorConfig g;
    g.pool_size = 8;
    g.val_size = 1;
    g.test_size = 4;
    return sourcebench::generate_pools(g);
  }();
  return p;
}

const protonet::ProtoNetModel& projected_model() {
  static const protonet::ProtoNetModel m = [] {
    auto model = protonet::ProtoNetModel::create({}, 42);
    model.project_prototypes(sourcebench::mix_train(sourcebench::MixSpec(50), pools()));
    return model;
  }();
  return m;
}

const Tensor& image() {
  return pools().at(sourcebench::Hospital::kH1, sourcebench::kPositive, sourcebench::Split::kTest)[0].pixels;
}

void BM_Conv2dForward(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto x = filled({c, 32, 32}, 1);
  const auto k = filled({2 * c, c, 3, 3}, 2);
  const auto b = filled({2 * c}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(numerics::conv2d_forward(x, k, &b, numerics::Conv2dGeometry{1, 1}));
}
BENCHMARK(BM_Conv2dForward)->Arg(8)->Arg(16)->Arg(32);

void BM_ModelForward(benchmark::State& state) {
  const auto& model = projected_model();
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(image()));
}
BENCHMARK(BM_ModelForward);

void BM_ObjectiveGradient(benchmark::State& state) {
  const auto& model = projected_model();
  const trainer::LossCoefficients coef;
  for (auto _ : state) benchmark::DoNotOptimize(trainer::evaluate_objective(model, image(), 1, coef, true));
}
BENCHMARK(BM_ObjectiveGradient);

void BM_PrpMap(benchmark::State& state) {
  const auto& model = projected_model();
  for (auto _ : state) benchmark::DoNotOptimize(prp::prp_map(model, image(), 3));
}
BENCHMARK(BM_PrpMap);

void BM_UpsampleHeatmap(benchmark::State& state) {
  const auto& model = projected_model();
  for (auto _ : state) benchmark::DoNotOptimize(prp::upsample_heatmap(model, image(), 3));
}
BENCHMARK(BM_UpsampleHeatmap);

void BM_Projection(benchmark::State& state) {
  const auto train = sourcebench::mix_train(sourcebench::MixSpec(50), pools());
  auto model = protonet::ProtoNetModel::create({}, 42);
  for (auto _ : state) model.project_prototypes(train);
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(train.size()));
}
BENCHMARK(BM_Projection);

void BM_Faithfulness(benchmark::State& state) {
  const auto& model = projected_model();
  const auto test = sourcebench::build_test(sourcebench::TestVariant::kTest5050, pools());
  const auto method = state.range(0) ? prp::Method::kPrp : prp::Method::kUpsample;
  for (auto _ : state) benchmark::DoNotOptimize(metrics::faithfulness(model, test, method, 7));
}
BENCHMARK(BM_Faithfulness)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
