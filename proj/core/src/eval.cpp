#include "lastmile/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "lastmile/errors.hpp"
#include "lastmile/retrieval.hpp"
#include "lastmile/text.hpp"

namespace lastmile {

using nlohmann::json;

std::string_view to_string(Scope s) { return s == Scope::in_manual ? "in_manual" : "out_of_manual"; }
std::string_view to_string(Condition c) { return c == Condition::rag ? "rag" : "no_rag"; }

Scope scope_from_string(std::string_view s) {
  if (s == "in_manual") return Scope::in_manual;
  if (s == "out_of_manual") return Scope::out_of_manual;
  throw IncompleteDataset("unknown scope '" + std::string(s) + "'");
}

Condition condition_from_string(std::string_view s) {
  if (s == "rag") return Condition::rag;
  if (s == "no_rag") return Condition::no_rag;
  throw IncompleteDataset("unknown condition '" + std::string(s) + "'");
}

// --- dataset ----------------------------------------------------------------

QAPair parse_qa_pair(const json& j) {
  QAPair p;
  try {
    p.id = j.at("id").get<int>();
    p.question = j.at("question").get<std::string>();
    p.reference_answer = j.at("reference_answer").get<std::string>();
    p.scope = scope_from_string(j.at("scope").get<std::string>());
    p.language = language_from_string(j.value("language", std::string("en")));
    if (j.contains("responses")) {
      for (const auto& [key, value] : j.at("responses").items()) {
        ConditionResponse r;
        r.text = value.at("text").get<std::string>();
        if (value.contains("similarity") && !value.at("similarity").is_null()) {
          r.similarity = value.at("similarity").get<double>();
        }
        p.responses[condition_from_string(key)] = std::move(r);
      }
    }
  } catch (const json::exception& e) {
    throw IncompleteDataset(std::string("malformed QA pair: ") + e.what());
  }
  return p;
}

std::vector<QAPair> parse_dataset(std::string_view jsonl) {
  std::vector<QAPair> out;
  std::size_t line_no = 0;
  for (auto line : text::split_lines(jsonl)) {
    ++line_no;
    const auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    auto j = json::parse(t, nullptr, false);
    if (j.is_discarded()) {
      throw IncompleteDataset("dataset line " + std::to_string(line_no) + " is not JSON");
    }
    out.push_back(parse_qa_pair(j));
  }
  return out;
}

std::vector<QAPair> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetNotFound("dataset '" + path.string() + "' not found");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_dataset(buf.str());
}

// --- statistics -------------------------------------------------------------

GroupStats group_stats(std::span<const double> values) {
  if (values.empty()) throw EmptyGroup("group_stats: empty group");
  GroupStats g;
  g.n = values.size();
  const double n = static_cast<double>(g.n);
  g.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - g.mean) * (v - g.mean);
  g.std = g.n > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  g.std_population = std::sqrt(ss / n);
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  g.min = *lo;
  g.max = *hi;
  return g;
}

namespace {

struct PooledRanks {
  std::vector<long long> doubled_rank;  // per pooled item, 2 * mid-rank
  std::vector<bool> from_x;
  std::vector<std::size_t> tie_sizes;
};

PooledRanks pool_and_rank(std::span<const double> xs, std::span<const double> ys) {
  std::vector<std::pair<double, bool>> pooled;
  pooled.reserve(xs.size() + ys.size());
  for (double x : xs) pooled.emplace_back(x, true);
  for (double y : ys) pooled.emplace_back(y, false);
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  PooledRanks r;
  r.doubled_rank.resize(pooled.size());
  r.from_x.resize(pooled.size());
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    // positions i+1 .. j share the mid-rank (i+1+j)/2
    const auto doubled = static_cast<long long>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      r.doubled_rank[k] = doubled;
      r.from_x[k] = pooled[k].second;
    }
    r.tie_sizes.push_back(j - i);
    i = j;
  }
  return r;
}

double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace

double mann_whitney_u_statistic(std::span<const double> xs, std::span<const double> ys) {
  if (xs.empty() || ys.empty()) throw EmptyGroup("mann_whitney_u: both groups must be non-empty");
  const auto ranks = pool_and_rank(xs, ys);
  long long doubled_sum = 0;
  for (std::size_t i = 0; i < ranks.doubled_rank.size(); ++i) {
    if (ranks.from_x[i]) doubled_sum += ranks.doubled_rank[i];
  }
  const auto m = static_cast<long long>(xs.size());
  return static_cast<double>(doubled_sum - m * (m + 1)) / 2.0;
}

MannWhitneyResult mann_whitney_u(std::span<const double> xs, std::span<const double> ys) {
  MannWhitneyResult res;
  res.u = mann_whitney_u_statistic(xs, ys);
  res.n_x = xs.size();
  res.n_y = ys.size();

  const auto ranks = pool_and_rank(xs, ys);
  const double m = static_cast<double>(xs.size());
  const double n = static_cast<double>(ys.size());
  const double total = m + n;

  // Normal approximation, tie-corrected, continuity corrected.
  double tie_term = 0.0;
  for (auto t : ranks.tie_sizes) {
    const double td = static_cast<double>(t);
    tie_term += td * td * td - td;
  }
  const double variance = m * n / 12.0 * ((total + 1.0) - tie_term / (total * (total - 1.0)));
  if (variance <= 0.0) {
    res.p_normal = 1.0;
  } else {
    const double z = std::max(0.0, std::abs(res.u - m * n / 2.0) - 0.5) / std::sqrt(variance);
    res.p_normal = std::min(1.0, 2.0 * normal_sf(z));
  }

  const std::size_t pooled = xs.size() + ys.size();
  if (pooled > kMannWhitneyExactLimit) {
    res.exact = false;
    res.p_exact = res.p_normal;
    return res;
  }

  // Permutation distribution of the doubled rank sum of the smaller group:
  // ways[k][s] = number of k-subsets of the pooled items with sum s.
  const bool pick_x = xs.size() <= ys.size();
  const std::size_t k_max = pick_x ? xs.size() : ys.size();
  long long observed = 0;
  std::vector<long long> weights = ranks.doubled_rank;
  for (std::size_t i = 0; i < pooled; ++i) {
    if (ranks.from_x[i] == pick_x) observed += weights[i];
  }
  std::vector<long long> sorted_w = weights;
  std::sort(sorted_w.rbegin(), sorted_w.rend());
  const long long s_max = std::accumulate(sorted_w.begin(),
                                          sorted_w.begin() + static_cast<std::ptrdiff_t>(k_max), 0LL);
  const auto width = static_cast<std::size_t>(s_max + 1);
  std::vector<long double> ways((k_max + 1) * width, 0.0L);
  ways[0] = 1.0L;
  for (std::size_t i = 0; i < pooled; ++i) {
    const auto w = static_cast<std::size_t>(weights[i]);
    const std::size_t k_hi = std::min(k_max, i + 1);
    for (std::size_t k = k_hi; k >= 1; --k) {
      const long double* src = &ways[(k - 1) * width];
      long double* dst = &ways[k * width];
      for (std::size_t s = width; s-- > w;) dst[s] += src[s - w];
    }
  }
  const long double* dist = &ways[k_max * width];
  long double all = 0.0L, le = 0.0L, ge = 0.0L;
  for (std::size_t s = 0; s < width; ++s) {
    all += dist[s];
    if (static_cast<long long>(s) <= observed) le += dist[s];
    if (static_cast<long long>(s) >= observed) ge += dist[s];
  }
  res.exact = true;
  res.p_exact = static_cast<double>(std::min(1.0L, 2.0L * std::min(le, ge) / all));
  return res;
}

double score_similarity(const std::string& reference, const std::string& response,
                        Embedder& embedder) {
  if (text::trim(reference).empty() || text::trim(response).empty()) {
    throw EmptyText("score_similarity: both texts must be non-empty");
  }
  const auto batch = embedder.embed({reference, response});
  if (batch.vectors.size() != 2) {
    throw ProviderUnavailable("embedding provider returned the wrong number of vectors");
  }
  return cosine_similarity(batch.vectors[0], batch.vectors[1]);
}

std::map<RefusalClass, std::size_t> count_refusals(std::span<const SimilarityRecord> records) {
  std::map<RefusalClass, std::size_t> counts;
  for (auto c : kAllRefusalClasses) counts[c] = 0;
  for (const auto& r : records) ++counts[r.refusal];
  return counts;
}

// --- rubric -----------------------------------------------------------------

RubricScores RubricScores::from_json(const json& j) {
  RubricScores s;
  try {
    for (const auto& e : j.at("evaluators")) {
      s.entries.push_back({e.value("id", std::string{}), e.at("utility").get<int>(),
                           e.at("safety").get<int>()});
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed rubric file: ") + e.what());
  }
  return s;
}

RubricScores RubricScores::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DatasetNotFound("rubric file '" + path.string() + "' not found");
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("rubric file '" + path.string() + "' is not JSON");
  return from_json(j);
}

RubricMeans aggregate_rubric(const RubricScores& scores) {
  if (scores.entries.empty()) throw EmptyPanel("aggregate_rubric: no evaluators");
  double u = 0.0, s = 0.0;
  for (const auto& e : scores.entries) {
    if (e.utility < 1 || e.utility > 4 || e.safety < 1 || e.safety > 4) {
      throw OutOfRangeScore("rubric scores must be integers in 1..4 (evaluator '" + e.evaluator + "')");
    }
    u += e.utility;
    s += e.safety;
  }
  const double n = static_cast<double>(scores.entries.size());
  return {u / n, s / n, scores.entries.size()};
}

// --- evaluation -------------------------------------------------------------

const GroupCell& EvalReport::cell(Scope s, Condition c) const {
  for (const auto& g : cells) {
    if (g.scope == s && g.condition == c) return g;
  }
  throw Error("NoSuchCell", "report has no such cell");
}

namespace {

json mw_json(const MannWhitneyResult& r) {
  return {{"U", r.u}, {"p_exact", r.p_exact}, {"p_normal", r.p_normal},
          {"exact", r.exact}, {"n_x", r.n_x}, {"n_y", r.n_y}};
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

json EvalReport::to_json() const {
  json groups = json::array();
  for (const auto& c : cells) {
    json g{{"scope", std::string(lastmile::to_string(c.scope))},
           {"condition", std::string(lastmile::to_string(c.condition))},
           {"records", c.records},
           {"null_count", c.null_count}};
    if (c.stats) {
      g["n"] = c.stats->n;
      g["mean"] = c.stats->mean;
      g["std"] = c.stats->std;
      g["min"] = c.stats->min;
      g["max"] = c.stats->max;
      if (verbose) g["std_population"] = c.stats->std_population;
    } else {
      g["n"] = 0;
    }
    groups.push_back(std::move(g));
  }

  json mw{{"x_group", "in_manual/rag"}, {"y_group", "out_of_manual/rag"}};
  if (mann_whitney) {
    mw["computed"] = true;
    mw.update(mw_json(*mann_whitney));
  } else {
    mw["computed"] = false;
    mw["reason"] = mann_whitney_omitted_reason;
  }
  if (mann_whitney_readable) mw["readable_subset"] = mw_json(*mann_whitney_readable);

  json counts = json::object();
  json rows = json::object();
  for (const auto& [k, v] : refusal_counts) counts[std::string(lastmile::to_string(k))] = v;
  for (const auto& [k, v] : refusal_rows) rows[std::string(lastmile::to_string(k))] = v;

  json out{{"mode", mode == EvalMode::live ? "live" : "fixture"},
           {"pairs", pairs},
           {"groups", groups},
           {"mann_whitney", mw},
           {"refusal_counts", counts},
           {"refusal_rows", rows}};
  out["embedding_model"] = embedding_model ? json(*embedding_model) : json(nullptr);
  if (rubric) {
    out["rubric"] = {{"utility_mean", rubric->utility_mean},
                     {"safety_mean", rubric->safety_mean},
                     {"evaluators", rubric->evaluators}};
  } else {
    out["rubric"] = nullptr;
  }
  if (verbose) {
    json recs = json::array();
    for (const auto& r : records) {
      recs.push_back({{"pair_id", r.pair_id},
                      {"scope", std::string(lastmile::to_string(r.scope))},
                      {"condition", std::string(lastmile::to_string(r.condition))},
                      {"similarity", r.similarity ? json(*r.similarity) : json(nullptr)},
                      {"refusal", std::string(lastmile::to_string(r.refusal))}});
    }
    out["records"] = std::move(recs);
  }
  return out;
}

std::string EvalReport::to_csv() const {
  std::string out = "scope,condition,n,null_count,mean,std,min,max\n";
  for (const auto& c : cells) {
    out += std::string(lastmile::to_string(c.scope)) + "," +
           std::string(lastmile::to_string(c.condition)) + ",";
    if (c.stats) {
      out += std::to_string(c.stats->n) + "," + std::to_string(c.null_count) + "," +
             fmt(c.stats->mean) + "," + fmt(c.stats->std) + "," + fmt(c.stats->min) + "," +
             fmt(c.stats->max) + "\n";
    } else {
      out += "0," + std::to_string(c.null_count) + ",,,,\n";
    }
  }
  return out;
}

EvalReport run_evaluation(const std::vector<QAPair>& dataset, const EvalOptions& options) {
  if (dataset.empty()) throw IncompleteDataset("dataset is empty");
  std::set<int> ids;
  for (const auto& p : dataset) {
    if (!ids.insert(p.id).second) throw IncompleteDataset("duplicate pair id " + std::to_string(p.id));
    for (auto c : {Condition::rag, Condition::no_rag}) {
      auto it = p.responses.find(c);
      if (it == p.responses.end() || text::trim(it->second.text).empty()) {
        throw IncompleteDataset("pair " + std::to_string(p.id) + " has no " +
                                std::string(to_string(c)) + " response");
      }
    }
  }

  EvalReport report;
  report.mode = options.mode;
  report.pairs = dataset.size();
  report.verbose = options.verbose;

  // Similarities: stored cells in fixture mode, recomputed in live mode.
  std::map<std::pair<int, Condition>, std::optional<double>> sims;
  if (options.mode == EvalMode::live) {
    if (options.embedder == nullptr) {
      throw ProviderUnavailable("live evaluation requires an embedding provider");
    }
    std::vector<std::string> texts;
    for (const auto& p : dataset) {
      texts.push_back(p.reference_answer);
      texts.push_back(p.responses.at(Condition::rag).text);
      texts.push_back(p.responses.at(Condition::no_rag).text);
    }
    const auto batch = embed_batched(*options.embedder, texts, 16, 8);
    report.embedding_model = batch.model;
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const auto& ref = batch.vectors[3 * i];
      sims[{dataset[i].id, Condition::rag}] = cosine_similarity(ref, batch.vectors[3 * i + 1]);
      sims[{dataset[i].id, Condition::no_rag}] = cosine_similarity(ref, batch.vectors[3 * i + 2]);
    }
  } else {
    for (const auto& p : dataset) {
      for (const auto& [c, r] : p.responses) sims[{p.id, c}] = r.similarity;
    }
  }

  for (const auto& p : dataset) {
    for (auto c : {Condition::rag, Condition::no_rag}) {
      SimilarityRecord rec;
      rec.pair_id = p.id;
      rec.scope = p.scope;
      rec.condition = c;
      rec.response_text = p.responses.at(c).text;
      rec.similarity = sims[{p.id, c}];
      const auto vr = validate_response(rec.response_text, ResponseMode::retrieval, p.language);
      rec.refusal = classify_refusal(vr, rec.response_text, options.lexicon);
      report.records.push_back(std::move(rec));
    }
  }

  const auto values = [&](Scope s, Condition c, std::size_t* records, std::size_t* nulls) {
    std::vector<double> v;
    for (const auto& r : report.records) {
      if (r.scope != s || r.condition != c) continue;
      ++*records;
      if (r.similarity) v.push_back(*r.similarity);
      else ++*nulls;
    }
    return v;
  };
  for (auto s : {Scope::in_manual, Scope::out_of_manual}) {
    for (auto c : {Condition::rag, Condition::no_rag}) {
      GroupCell cell{s, c, 0, 0, std::nullopt};
      const auto v = values(s, c, &cell.records, &cell.null_count);
      if (!v.empty()) cell.stats = group_stats(v);
      report.cells.push_back(cell);
    }
  }

  std::size_t r1 = 0, r2 = 0, nulls_x = 0, nulls_y = 0;
  const auto xs = values(Scope::in_manual, Condition::rag, &r1, &nulls_x);
  const auto ys = values(Scope::out_of_manual, Condition::rag, &r2, &nulls_y);
  if (!xs.empty() && !ys.empty()) {
    if (nulls_x + nulls_y == 0) {
      report.mann_whitney = mann_whitney_u(xs, ys);
    } else {
      report.mann_whitney_omitted_reason =
          std::to_string(nulls_x + nulls_y) +
          " RAG similarity cell(s) are null; U requires every cell (use live mode to recompute)";
      report.mann_whitney_readable = mann_whitney_u(xs, ys);
    }
  } else {
    report.mann_whitney_omitted_reason = "a comparison group has no similarity values";
  }

  std::vector<SimilarityRecord> out_rag;
  for (const auto& r : report.records) {
    if (r.scope == Scope::out_of_manual && r.condition == Condition::rag) out_rag.push_back(r);
  }
  report.refusal_counts = count_refusals(out_rag);
  for (auto c : kAllRefusalClasses) report.refusal_rows[c] = {};
  for (const auto& r : out_rag) report.refusal_rows[r.refusal].push_back(r.pair_id);

  if (options.rubric) report.rubric = aggregate_rubric(*options.rubric);
  return report;
}

}  // namespace lastmile
