#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "lastmile/manual.hpp"
#include "lastmile/providers.hpp"

namespace lastmile {

struct Chunk {
  std::string doc;          // logical name
  std::string source_file;  // file the section was read from
  std::string section_id;
  std::string text;         // "<id> <title>\n<body>"
  std::set<std::string> tags;
  std::optional<std::vector<double>> embedding;
};

// One chunk per section, in section order.
std::vector<Chunk> chunk_document(const ManualDocument& doc);

// a.b / (|a||b|). Throws DimensionMismatch / ZeroVector.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

// Case-folded terms split on whitespace and ASCII punctuation, English stop
// words removed; runs of Japanese scalars become overlapping bigrams.
std::vector<std::string> tokenize_terms(std::string_view text);
bool is_stop_word(std::string_view lowered_term);

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

// BM25 corpus statistics over a fixed chunk list.
class LexicalIndex {
 public:
  LexicalIndex() = default;
  explicit LexicalIndex(const std::vector<Chunk>& chunks, Bm25Params params = {});

  // Score of chunk `i` against the query's unique terms. 0 when no query
  // term occurs in the chunk.
  double score(std::string_view query, std::size_t i) const;
  double score_terms(const std::vector<std::string>& unique_query_terms, std::size_t i) const;
  double idf(const std::string& term) const;

  std::size_t size() const { return doc_terms_.size(); }
  double average_length() const { return avg_len_; }

 private:
  Bm25Params params_;
  std::vector<std::map<std::string, std::size_t>> doc_terms_;
  std::vector<std::size_t> doc_len_;
  std::map<std::string, std::size_t> doc_freq_;
  double avg_len_ = 0.0;
};

enum class ScoreMethod { embedding, lexical };
std::string_view to_string(ScoreMethod m);

struct RetrievalHit {
  Chunk chunk;
  double score = 0.0;
  ScoreMethod method = ScoreMethod::lexical;
};

struct RetrievalConfig {
  std::size_t top_k = 4;
  double grounding_threshold = 0.35;
  bool lexical_fallback = true;

  // Throws ConfigError.
  void validate() const;
};

// Chunks of every resolved document plus lexical statistics and, once
// attached, chunk embeddings tagged with their model id.
class RetrievalIndex {
 public:
  RetrievalIndex() = default;
  explicit RetrievalIndex(const ManualCatalog& catalog, Bm25Params params = {});

  // Embeds all chunks; replaces any earlier embeddings. Throws
  // ProviderUnavailable (index unchanged) or DimensionMismatch.
  void attach_embeddings(Embedder& embedder, std::size_t batch_size = 16,
                         std::size_t max_inflight = 8);

  const std::vector<Chunk>& chunks() const { return chunks_; }
  const LexicalIndex& lexical() const { return lexical_; }
  bool has_embeddings() const { return embedding_model_.has_value(); }
  const std::optional<std::string>& embedding_model() const { return embedding_model_; }
  std::size_t embedding_dimension() const { return dimension_; }

 private:
  std::vector<Chunk> chunks_;
  LexicalIndex lexical_;
  std::optional<std::string> embedding_model_;
  std::size_t dimension_ = 0;
};

double lexical_score(std::string_view query, const Chunk& chunk, const RetrievalIndex& index);

// Ranking: score descending, then (doc, section_id) ascending. Lexical
// mode only returns chunks with a positive score. With an embedder the
// query is embedded with it; a model id differing from the index's throws
// MixedEmbeddingModel. Provider failures fall back to lexical scoring when
// config.lexical_fallback, else rethrow ProviderUnavailable.
std::vector<RetrievalHit> retrieve(std::string_view query, const RetrievalIndex& index,
                                   const RetrievalConfig& config, Embedder* embedder = nullptr);

// Full ranking without the top_k cut (shared by retrieve and tooling).
std::vector<RetrievalHit> rank_all(std::string_view query, const RetrievalIndex& index,
                                   Embedder* embedder, bool lexical_fallback);

enum class Grounding { grounded, ungrounded };

// Ungrounded iff no hits, or the best embedding score < threshold, or the
// best lexical score is 0.
Grounding grounding_gate(const std::vector<RetrievalHit>& hits, const RetrievalConfig& config);

}  // namespace lastmile
