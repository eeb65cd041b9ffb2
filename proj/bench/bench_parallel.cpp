// Serial reference against the OpenMP kernels for ensemble training and
// ensemble curvature. The workers argument is the OpenMP thread count; the
// outputs are identical at every count, only wall time differs.

#include <benchmark/benchmark.h>

#include "curvlink/curvature.hpp"
#include "curvlink/data.hpp"
#include "curvlink/trainer.hpp"

using namespace curvlink;

namespace {

struct Fixture {
  Dataset S;
  ModelSpec spec;
  TrainConfig train;
  MaskSet masks;
  std::vector<Model> models;
  CurvParams curv;

  Fixture() {
    GenSpec g;
    g.n_classes = 3;
    g.dim = 16;
    g.head_per_class = 100;
    g.tail_subpops = {{0, 4, 6.0, 1}, {1, 4, 6.0, 2}};
    g.seed = 1;
    S = generate(g);
    spec.layer_dims = {16, 64, 3};
    train.epochs = 3;
    train.batch_size = 32;
    train.lr = 0.2;
    train.lr_drop_epochs = {};
    masks = subsample_masks(S.size(), 0.7, 16, 2);
    for (int k = 0; k < 16; ++k) models.push_back(mlp_init(spec, static_cast<std::uint64_t>(k)));
    curv.n = 10;
    curv.h = 1e-3;
    curv.seed = 3;
    curv.mode = CurvMode::kNormalized;
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

void BM_TrainEnsembleSerial(benchmark::State& state) {
  const Fixture& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(train_ensemble_serial(f.spec, f.S, f.masks, f.train));
}

void BM_TrainEnsembleParallel(benchmark::State& state) {
  const Fixture& f = fixture();
  const int workers = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(train_ensemble(f.spec, f.S, f.masks, f.train, workers));
}

void BM_CurvatureSerial(benchmark::State& state) {
  const Fixture& f = fixture();
  for (auto _ : state) benchmark::DoNotOptimize(ensemble_curvature_serial(f.models, f.S, f.curv));
}

void BM_CurvatureParallel(benchmark::State& state) {
  const Fixture& f = fixture();
  const int workers = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(ensemble_curvature(f.models, f.S, f.curv, workers));
}

}  // namespace

BENCHMARK(BM_TrainEnsembleSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_TrainEnsembleParallel)->Arg(1)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_CurvatureSerial)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_CurvatureParallel)->Arg(1)->Arg(2)->Arg(4)->Arg(8)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
