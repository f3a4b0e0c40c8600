// Serial reference vs OpenMP kernels. Run with CITE_THREADS or
// OMP_NUM_THREADS to pick the parallel width.
#include <benchmark/benchmark.h>

#include <random>

#include "cite/assignment.hpp"
#include "cite/evaluation.hpp"
#include "cite/kernels.hpp"
#include "cite/parallel.hpp"
#include "cite/sampling.hpp"
#include "cite/synthetic.hpp"

namespace {

using namespace cite;

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  Matrix m(r, c);
  for (double& v : m.data()) v = nd(rng);
  return m;
}

void BM_GemmSerial(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const Matrix a = random_matrix(n, 256, 1), b = random_matrix(256, 256, 2);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::serial::gemm(a, kernels::Trans::kNo, b, kernels::Trans::kNo));
  st.SetItemsProcessed(st.iterations() * static_cast<long>(n));
}

void BM_GemmParallel(benchmark::State& st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const Matrix a = random_matrix(n, 256, 1), b = random_matrix(256, 256, 2);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::gemm(a, kernels::Trans::kNo, b, kernels::Trans::kNo));
  st.SetItemsProcessed(st.iterations() * static_cast<long>(n));
}

// Weight-gradient shape: A^T B over the batch.
void BM_GemmTransSerial(benchmark::State& st) {
  const Matrix a = random_matrix(512, 128, 3), b = random_matrix(512, 64, 4);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::serial::gemm(a, kernels::Trans::kYes, b, kernels::Trans::kNo));
}

void BM_GemmTransParallel(benchmark::State& st) {
  const Matrix a = random_matrix(512, 128, 3), b = random_matrix(512, 64, 4);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::gemm(a, kernels::Trans::kYes, b, kernels::Trans::kNo));
}

void BM_ColumnSumsSerial(benchmark::State& st) {
  const Matrix x = random_matrix(4096, 256, 5);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::serial::column_sums(x));
}

void BM_ColumnSumsParallel(benchmark::State& st) {
  const Matrix x = random_matrix(4096, 256, 5);
  for (auto _ : st) benchmark::DoNotOptimize(kernels::column_sums(x));
}

void BM_KMeansAssignSerial(benchmark::State& st) {
  const Matrix x = random_matrix(20000, 64, 6), c = random_matrix(12, 64, 7);
  for (auto _ : st) benchmark::DoNotOptimize(serial::kmeans_assign_all(x, c));
}

void BM_KMeansAssignParallel(benchmark::State& st) {
  const Matrix x = random_matrix(20000, 64, 6), c = random_matrix(12, 64, 7);
  for (auto _ : st) benchmark::DoNotOptimize(kmeans_assign_all(x, c));
}

const GroundingDataset& bench_data() {
  static const GroundingDataset ds = [] {
    SynthConfig c;
    c.train_images = 300;
    c.copies_per_region = 4;
    return gen_synthetic(c);
  }();
  return ds;
}

// Whole-split evaluation and mining; range(0) = thread cap (1 = serial).
void BM_EvaluateSplit(benchmark::State& st) {
  const GroundingDataset& ds = bench_data();
  GroundingModel model;
  ModelConfig mc;
  mc.region_dim = ds.region_features.dim();
  mc.phrase_dim = ds.phrase_features.dim();
  mc.embed_dim = 64;
  mc.num_embeddings = 4;
  model.params = init_model(mc);
  model.assigner = PhraseAssigner::learned(4);
  const auto idx = ds.split_indices(Split::kTrain);
  const int saved = thread_count();
  set_thread_count(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(accuracy(ds, idx, model_scorer(model, ds, 0), 0));
  set_thread_count(saved);
}

void BM_MineSplit(benchmark::State& st) {
  const GroundingDataset& ds = bench_data();
  const auto idx = ds.split_indices(Split::kTrain);
  const int saved = thread_count();
  set_thread_count(static_cast<int>(st.range(0)));
  for (auto _ : st) benchmark::DoNotOptimize(mine_split(ds, idx, 0, 1));
  set_thread_count(saved);
}

BENCHMARK(BM_GemmSerial)->Arg(256)->Arg(1024);
BENCHMARK(BM_GemmParallel)->Arg(256)->Arg(1024)->UseRealTime();
BENCHMARK(BM_GemmTransSerial);
BENCHMARK(BM_GemmTransParallel)->UseRealTime();
BENCHMARK(BM_ColumnSumsSerial);
BENCHMARK(BM_ColumnSumsParallel)->UseRealTime();
BENCHMARK(BM_KMeansAssignSerial);
BENCHMARK(BM_KMeansAssignParallel)->UseRealTime();
BENCHMARK(BM_EvaluateSplit)->Arg(1)->Arg(0)->UseRealTime()->Unit(benchmark::kMillisecond);
BENCHMARK(BM_MineSplit)->Arg(1)->Arg(0)->UseRealTime()->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
