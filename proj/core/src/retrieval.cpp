#include "lastmile/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "lastmile/errors.hpp"
#include "lastmile/text.hpp"

namespace lastmile {

namespace {

const std::unordered_set<std::string_view>& stop_words() {
  static const std::unordered_set<std::string_view> kWords = {
      "a", "about", "after", "again", "all", "am", "an", "and", "any", "are", "as", "at",
      "be", "been", "before", "being", "both", "but", "by", "can", "could", "d", "did",
      "do", "does", "doing", "don", "during", "each", "few", "for", "from", "further",
      "had", "has", "have", "having", "he", "her", "here", "hers", "him", "his", "how",
      "i", "if", "in", "into", "is", "it", "its", "itself", "just", "ll", "m", "me",
      "might", "more", "most", "must", "my", "no", "nor", "not", "now", "of", "off", "on",
      "once", "only", "or", "other", "our", "ours", "out", "over", "own", "re", "s",
      "same", "shall", "she", "should", "so", "some", "such", "t", "than", "that", "the",
      "their", "theirs", "them", "then", "there", "these", "they", "this", "those",
      "through", "to", "too", "under", "until", "up", "ve", "very", "was", "we", "were",
      "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with",
      "won", "would", "you", "your", "yours"};
  return kWords;
}

bool is_term_scalar(char32_t cp) {
  if (cp < 0x80) return std::isalnum(static_cast<int>(cp)) != 0;
  return text::is_word_scalar(cp) && !text::is_japanese_scalar(cp);
}

}  // namespace

bool is_stop_word(std::string_view lowered_term) { return stop_words().contains(lowered_term); }

std::vector<std::string> tokenize_terms(std::string_view input) {
  std::vector<std::string> terms;
  std::string word;
  std::vector<char32_t> ja_run;

  const auto flush_word = [&] {
    if (!word.empty() && !is_stop_word(word)) terms.push_back(word);
    word.clear();
  };
  const auto flush_run = [&] {
    if (ja_run.size() == 1) {
      terms.push_back(text::encode_utf8(ja_run[0]));
    } else {
      for (std::size_t i = 0; i + 1 < ja_run.size(); ++i) {
        terms.push_back(text::encode_utf8(ja_run[i]) + text::encode_utf8(ja_run[i + 1]));
      }
    }
    ja_run.clear();
  };

  for (char32_t cp : text::decode_utf8(input)) {
    if (text::is_japanese_scalar(cp)) {
      flush_word();
      ja_run.push_back(cp);
      continue;
    }
    if (!ja_run.empty()) flush_run();
    if (is_term_scalar(cp)) {
      if (cp < 0x80) {
        word.push_back(static_cast<char>(std::tolower(static_cast<int>(cp))));
      } else {
        word += text::encode_utf8(cp);
      }
    } else {
      flush_word();
    }
  }
  flush_word();
  if (!ja_run.empty()) flush_run();
  return terms;
}

std::vector<Chunk> chunk_document(const ManualDocument& doc) {
  std::vector<Chunk> chunks;
  chunks.reserve(doc.sections.size());
  for (const auto& s : doc.sections) {
    Chunk c;
    c.doc = doc.logical_name;
    c.source_file = doc.source_file;
    c.section_id = s.id;
    c.text = s.title.empty() ? s.id + "\n" + s.body : s.id + " " + s.title + "\n" + s.body;
    c.tags = s.tags;
    chunks.push_back(std::move(c));
  }
  return chunks;
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionMismatch("cosine_similarity: dimensions " + std::to_string(a.size()) +
                            " and " + std::to_string(b.size()));
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw ZeroVector("cosine_similarity: zero-norm vector");
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

LexicalIndex::LexicalIndex(const std::vector<Chunk>& chunks, Bm25Params params)
    : params_(params) {
  doc_terms_.reserve(chunks.size());
  std::size_t total = 0;
  for (const auto& c : chunks) {
    std::map<std::string, std::size_t> tf;
    const auto terms = tokenize_terms(c.text);
    for (const auto& t : terms) ++tf[t];
    for (const auto& [t, _] : tf) ++doc_freq_[t];
    doc_len_.push_back(terms.size());
    total += terms.size();
    doc_terms_.push_back(std::move(tf));
  }
  avg_len_ = chunks.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(chunks.size());
}

double LexicalIndex::idf(const std::string& term) const {
  const auto it = doc_freq_.find(term);
  const double df = it == doc_freq_.end() ? 0.0 : static_cast<double>(it->second);
  const double n = static_cast<double>(doc_terms_.size());
  return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

double LexicalIndex::score_terms(const std::vector<std::string>& unique_query_terms,
                                 std::size_t i) const {
  const auto& tf_map = doc_terms_.at(i);
  const double len = static_cast<double>(doc_len_[i]);
  const double norm = avg_len_ > 0.0 ? len / avg_len_ : 0.0;
  double s = 0.0;
  for (const auto& term : unique_query_terms) {
    const auto it = tf_map.find(term);
    if (it == tf_map.end()) continue;
    const double tf = static_cast<double>(it->second);
    s += idf(term) * tf * (params_.k1 + 1.0) /
         (tf + params_.k1 * (1.0 - params_.b + params_.b * norm));
  }
  return s;
}

double LexicalIndex::score(std::string_view query, std::size_t i) const {
  auto terms = tokenize_terms(query);
  std::sort(terms.begin(), terms.end());
  terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
  return score_terms(terms, i);
}

std::string_view to_string(ScoreMethod m) {
  return m == ScoreMethod::embedding ? "embedding" : "lexical";
}

void RetrievalConfig::validate() const {
  if (top_k < 1) throw ConfigError("retrieval top_k must be >= 1");
  if (!(grounding_threshold >= 0.0 && grounding_threshold <= 1.0)) {
    throw ConfigError("retrieval grounding_threshold must lie in [0, 1]");
  }
}

RetrievalIndex::RetrievalIndex(const ManualCatalog& catalog, Bm25Params params) {
  for (const auto& [name, doc] : catalog.resolved()) {
    auto c = chunk_document(doc);
    chunks_.insert(chunks_.end(), std::make_move_iterator(c.begin()),
                   std::make_move_iterator(c.end()));
  }
  lexical_ = LexicalIndex(chunks_, params);
}

void RetrievalIndex::attach_embeddings(Embedder& embedder, std::size_t batch_size,
                                       std::size_t max_inflight) {
  std::vector<std::string> texts;
  texts.reserve(chunks_.size());
  for (const auto& c : chunks_) texts.push_back(c.text);
  auto batch = embed_batched(embedder, texts, batch_size, max_inflight);
  if (batch.vectors.size() != chunks_.size()) {
    throw ProviderUnavailable("embedding provider returned " +
                              std::to_string(batch.vectors.size()) + " vectors for " +
                              std::to_string(chunks_.size()) + " chunks");
  }
  for (const auto& v : batch.vectors) {
    if (v.size() != batch.dimension) {
      throw DimensionMismatch("embedding provider returned a vector of dimension " +
                              std::to_string(v.size()) + ", expected " +
                              std::to_string(batch.dimension));
    }
  }
  for (std::size_t i = 0; i < chunks_.size(); ++i) chunks_[i].embedding = std::move(batch.vectors[i]);
  embedding_model_ = batch.model;
  dimension_ = batch.dimension;
}

double lexical_score(std::string_view query, const Chunk& chunk, const RetrievalIndex& index) {
  const auto& chunks = index.chunks();
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    if (chunks[i].doc == chunk.doc && chunks[i].section_id == chunk.section_id) {
      return index.lexical().score(query, i);
    }
  }
  // Chunk outside the index: score it against the index's corpus statistics.
  auto merged = index.chunks();
  merged.push_back(chunk);
  LexicalIndex with_chunk(merged);
  return with_chunk.score(query, merged.size() - 1);
}

namespace {

bool hit_order(const RetrievalHit& a, const RetrievalHit& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.chunk.doc != b.chunk.doc) return a.chunk.doc < b.chunk.doc;
  return a.chunk.section_id < b.chunk.section_id;
}

std::vector<RetrievalHit> rank_lexical(std::string_view query, const RetrievalIndex& index) {
  auto terms = tokenize_terms(query);
  std::sort(terms.begin(), terms.end());
  terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
  std::vector<RetrievalHit> hits;
  const auto& chunks = index.chunks();
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    const double s = index.lexical().score_terms(terms, i);
    if (s > 0.0) hits.push_back({chunks[i], s, ScoreMethod::lexical});
  }
  return hits;
}

std::vector<RetrievalHit> rank_embedding(std::string_view query, const RetrievalIndex& index,
                                         Embedder& embedder) {
  if (index.embedding_model() != embedder.model()) {
    throw MixedEmbeddingModel("query embedder model '" + embedder.model() +
                              "' differs from index model '" +
                              index.embedding_model().value_or("<none>") + "'");
  }
  auto batch = embedder.embed({std::string(query)});
  if (batch.model != *index.embedding_model()) {
    throw MixedEmbeddingModel("provider answered with model '" + batch.model +
                              "', index was built with '" + *index.embedding_model() + "'");
  }
  if (batch.vectors.size() != 1 || batch.vectors[0].size() != index.embedding_dimension()) {
    throw DimensionMismatch("query embedding dimension does not match the index");
  }
  const auto& q = batch.vectors[0];
  const bool q_zero = std::all_of(q.begin(), q.end(), [](double v) { return v == 0.0; });
  std::vector<RetrievalHit> hits;
  for (const auto& c : index.chunks()) {
    const auto& v = *c.embedding;
    const bool c_zero = std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
    const double s = (q_zero || c_zero) ? 0.0 : cosine_similarity(q, v);
    hits.push_back({c, s, ScoreMethod::embedding});
  }
  return hits;
}

}  // namespace

std::vector<RetrievalHit> rank_all(std::string_view query, const RetrievalIndex& index,
                                   Embedder* embedder, bool lexical_fallback) {
  std::vector<RetrievalHit> hits;
  if (embedder == nullptr) {
    hits = rank_lexical(query, index);
  } else if (!index.has_embeddings()) {
    if (!lexical_fallback) {
      throw ProviderUnavailable("chunk embeddings unavailable and lexical fallback disabled");
    }
    hits = rank_lexical(query, index);
  } else {
    try {
      hits = rank_embedding(query, index, *embedder);
    } catch (const ProviderUnavailable&) {
      if (!lexical_fallback) throw;
      hits = rank_lexical(query, index);
    }
  }
  std::sort(hits.begin(), hits.end(), hit_order);
  return hits;
}

std::vector<RetrievalHit> retrieve(std::string_view query, const RetrievalIndex& index,
                                   const RetrievalConfig& config, Embedder* embedder) {
  if (index.chunks().empty()) return {};
  auto hits = rank_all(query, index, embedder, config.lexical_fallback);
  if (hits.size() > config.top_k) hits.resize(config.top_k);
  return hits;
}

Grounding grounding_gate(const std::vector<RetrievalHit>& hits, const RetrievalConfig& config) {
  if (hits.empty()) return Grounding::ungrounded;
  const auto best = std::max_element(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
    return a.score < b.score;
  });
  if (best->method == ScoreMethod::embedding) {
    return best->score < config.grounding_threshold ? Grounding::ungrounded : Grounding::grounded;
  }
  return best->score > 0.0 ? Grounding::grounded : Grounding::ungrounded;
}

}  // namespace lastmile
