#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lastmile/guardrails.hpp"
#include "lastmile/manual.hpp"
#include "lastmile/providers.hpp"

namespace lastmile {

enum class Scope { in_manual, out_of_manual };
enum class Condition { rag, no_rag };
std::string_view to_string(Scope s);
std::string_view to_string(Condition c);
Scope scope_from_string(std::string_view s);
Condition condition_from_string(std::string_view s);

struct ConditionResponse {
  std::string text;
  std::optional<double> similarity;  // null when the published cell is unreadable
};

struct QAPair {
  int id = 0;
  std::string question;
  std::string reference_answer;
  Scope scope = Scope::in_manual;
  Language language = Language::en;
  std::map<Condition, ConditionResponse> responses;
};

// One JSON object per line:
// {"id", "question", "reference_answer", "scope", "language",
//  "responses": {"rag": {"text", "similarity"}, "no_rag": {...}}}
QAPair parse_qa_pair(const nlohmann::json& j);
std::vector<QAPair> parse_dataset(std::string_view jsonl);
std::vector<QAPair> load_dataset(const std::filesystem::path& path);  // DatasetNotFound

struct GroupStats {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;             // sample, n-1 denominator (0 when n == 1)
  double std_population = 0.0;  // n denominator
  double min = 0.0;
  double max = 0.0;
};

GroupStats group_stats(std::span<const double> values);  // EmptyGroup

struct MannWhitneyResult {
  double u = 0.0;  // U of xs over ys
  double p_exact = 1.0;
  double p_normal = 1.0;
  bool exact = false;  // false when the sample was too large for enumeration
  std::size_t n_x = 0;
  std::size_t n_y = 0;
};

// Largest combined sample for which p_exact is enumerated.
inline constexpr std::size_t kMannWhitneyExactLimit = 100;

// U via mid-ranks of the pooled sample.
double mann_whitney_u_statistic(std::span<const double> xs, std::span<const double> ys);

// Two-sided p-values. p_exact enumerates the permutation distribution of
// the doubled mid-rank sum (exact under ties); p_normal uses the
// tie-corrected variance with continuity correction 0.5.
MannWhitneyResult mann_whitney_u(std::span<const double> xs, std::span<const double> ys);

double score_similarity(const std::string& reference, const std::string& response,
                        Embedder& embedder);

struct SimilarityRecord {
  int pair_id = 0;
  Scope scope = Scope::in_manual;
  Condition condition = Condition::rag;
  std::string response_text;
  std::optional<double> similarity;
  RefusalClass refusal = RefusalClass::full_answer;
};

std::map<RefusalClass, std::size_t> count_refusals(std::span<const SimilarityRecord> records);

struct RubricEntry {
  std::string evaluator;
  int utility = 0;
  int safety = 0;
};

struct RubricScores {
  std::vector<RubricEntry> entries;

  static RubricScores from_json(const nlohmann::json& j);
  static RubricScores from_file(const std::filesystem::path& path);
};

struct RubricMeans {
  double utility_mean = 0.0;
  double safety_mean = 0.0;
  std::size_t evaluators = 0;
};

RubricMeans aggregate_rubric(const RubricScores& scores);  // EmptyPanel, OutOfRangeScore

enum class EvalMode { fixture, live };

struct EvalOptions {
  EvalMode mode = EvalMode::fixture;
  Embedder* embedder = nullptr;  // required in live mode
  Lexicon lexicon = Lexicon::defaults();
  std::optional<RubricScores> rubric;
  bool verbose = false;
};

struct GroupCell {
  Scope scope;
  Condition condition;
  std::size_t records = 0;     // rows in the cell
  std::size_t null_count = 0;  // rows without a similarity value
  std::optional<GroupStats> stats;
};

struct EvalReport {
  EvalMode mode = EvalMode::fixture;
  std::optional<std::string> embedding_model;
  std::size_t pairs = 0;
  std::vector<GroupCell> cells;  // in_manual/rag, in_manual/no_rag, out/rag, out/no_rag
  std::optional<MannWhitneyResult> mann_whitney;
  std::string mann_whitney_omitted_reason;
  std::optional<MannWhitneyResult> mann_whitney_readable;  // on non-null cells only
  std::map<RefusalClass, std::size_t> refusal_counts;
  std::map<RefusalClass, std::vector<int>> refusal_rows;
  std::optional<RubricMeans> rubric;
  std::vector<SimilarityRecord> records;
  bool verbose = false;

  const GroupCell& cell(Scope s, Condition c) const;
  nlohmann::json to_json() const;
  // Header plus one row per scope x condition cell.
  std::string to_csv() const;
};

// Throws IncompleteDataset, ProviderUnavailable (live mode).
EvalReport run_evaluation(const std::vector<QAPair>& dataset, const EvalOptions& options);

}  // namespace lastmile
