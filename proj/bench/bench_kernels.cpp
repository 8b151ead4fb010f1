// Serial reference kernels against the OpenMP ones on Cora-sized inputs.
#include <benchmark/benchmark.h>

#include "vrgcn/kernels.hpp"
#include "vrgcn/model.hpp"
#include "vrgcn/synth.hpp"

namespace {

using namespace vrgcn;

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(rows, cols);
  for (double& v : m.values()) v = n(rng);
  return m;
}

const PropagationMatrix& graph() {
  static const PropagationMatrix p = build_propagation(random_graph(2708, 4.0 / 2707, 1, 2, 7));
  return p;
}

template <Matrix (*Spmm)(const SparseMatrix&, const Matrix&)>
void bm_spmm(benchmark::State& state) {
  const Matrix h = random_matrix(graph().num_nodes(), static_cast<std::size_t>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(Spmm(graph().matrix(), h));
  state.counters["nnz"] = static_cast<double>(graph().matrix().nnz());
}

template <Matrix (*Gemm)(const Matrix&, const Matrix&)>
void bm_gemm(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(2708, k, 2);
  const Matrix b = random_matrix(k, 16, 3);
  for (auto _ : state) benchmark::DoNotOptimize(Gemm(a, b));
}

}  // namespace

BENCHMARK(bm_spmm<kernels::serial::spmm>)->Name("spmm/serial")->Arg(16)->Arg(128)->Arg(1433);
BENCHMARK(bm_spmm<kernels::spmm>)->Name("spmm/openmp")->Arg(16)->Arg(128)->Arg(1433);
BENCHMARK(bm_gemm<kernels::serial::gemm>)->Name("gemm/serial")->Arg(16)->Arg(128)->Arg(1433);
BENCHMARK(bm_gemm<kernels::gemm>)->Name("gemm/openmp")->Arg(16)->Arg(128)->Arg(1433);

int main(int argc, char** argv) {
  kernels::configure_threads_from_env();
  benchmark::Initialize(&argc, argv);
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
}
