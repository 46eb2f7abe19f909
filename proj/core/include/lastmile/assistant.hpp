#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lastmile/guardrails.hpp"
#include "lastmile/manual.hpp"
#include "lastmile/providers.hpp"
#include "lastmile/retrieval.hpp"

namespace lastmile {

struct Query {
  std::string text;
  ResponseMode mode = ResponseMode::retrieval;
  Language language = Language::en;
  std::chrono::system_clock::time_point received_at;

  // Trims, detects the language and stamps the time. Throws InvalidQuery
  // for blank text.
  static Query make(std::string_view text, ResponseMode mode = ResponseMode::retrieval);
};

// The two system prompt templates, loaded verbatim from disk.
struct PromptTemplates {
  std::string retrieval;
  std::string instructional;

  // Reads retrieval_prompt.txt and instructional_prompt.txt from `dir`.
  static PromptTemplates load(const std::filesystem::path& dir);
  const std::string& for_mode(ResponseMode mode) const;
};

struct ContextBlock {
  std::string file;
  std::string section_id;
  std::string text;

  bool operator==(const ContextBlock&) const = default;
};

struct PromptBundle {
  std::string system_prompt;  // a template, unmodified
  std::vector<ContextBlock> context;
  std::string user_text;
  std::string corrective_note;  // set on regeneration attempts

  // "[<file> Section <id>] <text>" blocks, blank-line separated, then
  // "Question: <user_text>".
  std::string render_user_message() const;
  ChatRequest to_request() const;
};

PromptBundle assemble_prompt(const Query& query, const std::vector<RetrievalHit>& hits,
                             const PromptTemplates& templates);

// Immutable knowledge snapshot shared by concurrent requests.
struct KnowledgeBase {
  ManualCatalog catalog;
  RetrievalIndex index;

  static std::shared_ptr<const KnowledgeBase> build(std::vector<ManualDocument> docs,
                                                    Embedder* embedder = nullptr,
                                                    std::size_t max_inflight = 8);
};

// Holder for the current snapshot; writers swap in a fresh one.
class KnowledgeStore {
 public:
  explicit KnowledgeStore(std::shared_ptr<const KnowledgeBase> initial);
  std::shared_ptr<const KnowledgeBase> current() const;
  void replace(std::shared_ptr<const KnowledgeBase> next);

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const KnowledgeBase> current_;
};

struct GroundedAnswer {
  std::string body;
  Pattern pattern = Pattern::B;
  RefusalClass refusal = RefusalClass::explicit_refusal;
  Language language = Language::en;
  std::vector<Reference> references;
  std::vector<RetrievalHit> hits;
  std::size_t provider_calls = 0;   // chat provider attempts
  std::size_t embedding_calls = 0;  // query embeddings requested
  bool fallback_used = false;
  std::vector<std::string> warnings;  // soft violations of the accepted body

  nlohmann::json to_json() const;
};

struct AssistantConfig {
  RetrievalConfig retrieval;
  int max_regenerations = 2;
  std::size_t instructional_max_sections = 16;

  void validate() const;
};

// Reference checks against the catalog: unknown files, superseded
// versions and missing sections become hard violations.
std::vector<std::string> check_references(const std::vector<Reference>& refs,
                                          const ManualCatalog& catalog);

class Assistant {
 public:
  Assistant(PromptTemplates templates, Lexicon lexicon, AssistantConfig config,
            std::shared_ptr<ChatProvider> chat, std::shared_ptr<Embedder> embedder = nullptr);

  // Anomaly short-circuit, then retrieval and the grounding gate, then
  // generation with validate/regenerate, falling back to Pattern B in
  // retrieval mode. Throws ProviderUnavailable, AdvisoryValidationFailed.
  GroundedAnswer answer(const Query& query, const KnowledgeBase& kb) const;

  const Lexicon& lexicon() const { return lexicon_; }
  const PromptTemplates& templates() const { return templates_; }
  const AssistantConfig& config() const { return config_; }
  Embedder* embedder() const { return embedder_.get(); }
  ChatProvider* chat() const { return chat_.get(); }

 private:
  std::vector<RetrievalHit> instructional_context(const std::vector<RetrievalHit>& hits,
                                                  const KnowledgeBase& kb) const;

  PromptTemplates templates_;
  Lexicon lexicon_;
  AssistantConfig config_;
  std::shared_ptr<ChatProvider> chat_;
  std::shared_ptr<Embedder> embedder_;
};

}  // namespace lastmile
