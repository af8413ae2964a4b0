// Serial reference vs OpenMP path for the two hot loops: per-example
// gradient accumulation and evaluation scoring.

#include <benchmark/benchmark.h>

#include <numeric>

#include "htad/pipeline.hpp"

using namespace htad;

namespace {

struct Fixture {
  Dataset train, test;
  DiagnosisVocab vocab;

  Fixture() {
    SyntheticSpec spec;
    spec.patients = 600;
    spec.test_patients = 100;
    const auto d = generate_synthetic(spec);
    const auto types = record_types(d.records);
    vocab = d.vocab;
    train = make_dataset(d.records, d.train_targets, d.series, d.series_channels, types);
    test = make_dataset(d.records, d.test_targets, d.series, d.series_channels, types);
  }

  RunConfig config(Task task) const {
    RunConfig c;
    c.embedding_dim = 64;
    c.attention_dim = 32;
    c.series_hidden = 16;
    c.candidates = 10;
    c.training.task = task;
    c.training.batch_size = 64;
    return c;
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

Execution exec_of(const benchmark::State& state) { return state.range(0) == 0 ? Execution::serial : Execution::parallel; }

void BM_SupervisedStep(benchmark::State& state) {
  const auto& fx = fixture();
  ModelBundle bundle = ModelBundle::create(fx.config(Task::phenotype), fx.train, fx.vocab, {});
  Trainer trainer(bundle, fx.train, exec_of(state));
  std::vector<std::size_t> batch(64);
  std::iota(batch.begin(), batch.end(), 0);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.supervised_step(batch));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(batch.size()));
}

void BM_EvaluateRank(benchmark::State& state) {
  const auto& fx = fixture();
  const ModelBundle bundle = ModelBundle::create(fx.config(Task::rank), fx.train, fx.vocab, {});
  for (auto _ : state) benchmark::DoNotOptimize(evaluate(bundle, fx.test, exec_of(state)).patients);
}

}  // namespace

// Argument 0 is the serial reference, 1 the OpenMP path.
BENCHMARK(BM_SupervisedStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_EvaluateRank)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
