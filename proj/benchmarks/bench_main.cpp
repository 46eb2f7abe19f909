#include <benchmark/benchmark.h>

#include <fstream>
#include <iterator>
#include <random>

#include "lastmile/assistant.hpp"
#include "lastmile/eval.hpp"
#include "lastmile/guardrails.hpp"
#include "lastmile/retrieval.hpp"

using namespace lastmile;

namespace {

const std::filesystem::path kRoot = LASTMILE_SOURCE_DIR;

// Fixture manual replicated under distinct names to grow the corpus.
std::vector<ManualDocument> corpus(int copies) {
  const auto base = load_manual_dir(kRoot / "fixtures" / "manuals");
  std::vector<ManualDocument> docs;
  for (int i = 0; i < copies; ++i) {
    for (auto d : base) {
      d.logical_name += std::to_string(i);
      d.source_file = d.logical_name + ".md";
      docs.push_back(std::move(d));
    }
  }
  return docs;
}

void BM_RetrieveLexical(benchmark::State& state) {
  const auto catalog = resolve_latest(corpus(static_cast<int>(state.range(0))));
  const RetrievalIndex index(catalog);
  const RetrievalConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(retrieve("The door won't open after the measurement.", index, cfg));
  }
  state.counters["chunks"] = static_cast<double>(index.chunks().size());
}
BENCHMARK(BM_RetrieveLexical)->Arg(1)->Arg(10)->Arg(100);

void BM_RetrieveHashingEmbedding(benchmark::State& state) {
  const auto catalog = resolve_latest(corpus(static_cast<int>(state.range(0))));
  RetrievalIndex index(catalog);
  HashingEmbedder embedder;
  index.attach_embeddings(embedder);
  const RetrievalConfig cfg;
  for (auto _ : state) {
    benchmark::DoNotOptimize(retrieve("How do I set the sample?", index, cfg, &embedder));
  }
}
BENCHMARK(BM_RetrieveHashingEmbedding)->Arg(1)->Arg(10);

void BM_MannWhitney(benchmark::State& state) {
  std::mt19937 rng(1);
  std::uniform_int_distribution<int> v(0, 40);
  std::vector<double> xs(static_cast<std::size_t>(state.range(0))), ys(xs.size() + 5);
  for (auto& x : xs) x = v(rng) / 40.0;
  for (auto& y : ys) y = v(rng) / 40.0;
  for (auto _ : state) benchmark::DoNotOptimize(mann_whitney_u(xs, ys));
}
BENCHMARK(BM_MannWhitney)->Arg(8)->Arg(20)->Arg(45)->Arg(200);

void BM_ValidatePatternA(benchmark::State& state) {
  const std::string answer =
      "Run the Shutdown command manually or press X-ray OFF to stop the X-rays. Then press the "
      "yellow DOOR LOCK button to unlock the door and open it.\n\xF0\x9F\x94\x97 Reference: Miniflex.md";
  for (auto _ : state) {
    benchmark::DoNotOptimize(validate_response(answer, ResponseMode::retrieval, Language::en));
  }
}
BENCHMARK(BM_ValidatePatternA);

void BM_ValidateAdvisory(benchmark::State& state) {
  std::ifstream in(kRoot / "fixtures" / "advisory_report_en.txt");
  const std::string report((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (auto _ : state) {
    benchmark::DoNotOptimize(validate_response(report, ResponseMode::instructional, Language::en));
  }
}
BENCHMARK(BM_ValidateAdvisory);

void BM_FixtureEvaluation(benchmark::State& state) {
  const auto data = load_dataset(kRoot / "fixtures" / "table_s1.jsonl");
  for (auto _ : state) benchmark::DoNotOptimize(run_evaluation(data, {}));
}
BENCHMARK(BM_FixtureEvaluation);

}  // namespace

BENCHMARK_MAIN();
