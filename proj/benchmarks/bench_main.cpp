#include <benchmark/benchmark.h>

#include <numeric>

#include "tst/model.hpp"
#include "tst/ops.hpp"
#include "tst/random.hpp"

using namespace tst;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  Tensor t(shape);
  for (auto& v : t.values()) v = static_cast<Real>(uniform(rng, -1.0, 1.0));
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor a = random_tensor({n, n}, 1), b = random_tensor({n, n}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).values().data());
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128)->Arg(256);

void BM_Linear(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  Tensor x = random_tensor({32, 64, d}, 3), w = random_tensor({d, d}, 4), b = random_tensor({d}, 5);
  for (auto _ : state) benchmark::DoNotOptimize(linear(x, w, b).values().data());
}
BENCHMARK(BM_Linear)->Arg(64)->Arg(128);

ModelConfig bench_config(std::size_t w) {
  ModelConfig c;
  c.input_dim = 12;
  c.max_len = w;
  c.d_model = 128;
  c.n_heads = 8;
  c.n_blocks = 3;
  c.d_ff = 256;
  c.dropout = 0.1;
  c.head = {HeadKind::Classification, 9};
  return c;
}

void BM_EncodeEval(benchmark::State& state) {
  const auto w = static_cast<std::size_t>(state.range(0));
  TSTModel model(bench_config(w), 7);
  Tensor x = random_tensor({32, w, 12}, 8);
  std::vector<std::size_t> lengths(32, w);
  for (auto _ : state) {
    NoGradScope no_grad;
    benchmark::DoNotOptimize(model.forward(x, lengths, Mode::Eval).values().data());
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_EncodeEval)->Arg(29)->Arg(128);

void BM_TrainStep(benchmark::State& state) {
  const auto w = static_cast<std::size_t>(state.range(0));
  TSTModel model(bench_config(w), 9);
  Tensor x = random_tensor({32, w, 12}, 10);
  std::vector<std::size_t> lengths(32, w);
  Rng rng = make_rng(11);
  for (auto _ : state) {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(model.forward(x, lengths, Mode::Train, &rng));
    backward(loss);
    for (auto& p : model.parameters()) p.tensor.zero_grad();
  }
  state.SetItemsProcessed(state.iterations() * 32);
}
BENCHMARK(BM_TrainStep)->Arg(29)->Arg(128);

}  // namespace

BENCHMARK_MAIN();
