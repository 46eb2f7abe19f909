#include "lastmile/assistant.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "lastmile/errors.hpp"
#include "lastmile/text.hpp"

namespace lastmile {

using nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read '" + p.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string join(const std::vector<std::string>& v, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out.append(sep);
    out.append(v[i]);
  }
  return out;
}

GroundedAnswer fixed_answer(std::string_view body, Pattern pattern, RefusalClass refusal,
                            Language lang) {
  GroundedAnswer a;
  a.body = std::string(body);
  a.pattern = pattern;
  a.refusal = refusal;
  a.language = lang;
  return a;
}

}  // namespace

Query Query::make(std::string_view raw, ResponseMode mode) {
  const auto t = text::trim(raw);
  if (t.empty()) throw InvalidQuery("question must be non-empty");
  Query q;
  q.text = std::string(t);
  q.mode = mode;
  q.language = detect_language(q.text);
  q.received_at = std::chrono::system_clock::now();
  return q;
}

PromptTemplates PromptTemplates::load(const std::filesystem::path& dir) {
  PromptTemplates t;
  t.retrieval = read_file(dir / "retrieval_prompt.txt");
  t.instructional = read_file(dir / "instructional_prompt.txt");
  return t;
}

const std::string& PromptTemplates::for_mode(ResponseMode mode) const {
  return mode == ResponseMode::instructional ? instructional : retrieval;
}

std::string PromptBundle::render_user_message() const {
  std::string out;
  for (const auto& block : context) {
    out += "[" + block.file + " Section " + block.section_id + "] " + block.text + "\n\n";
  }
  out += "Question: " + user_text;
  return out;
}

ChatRequest PromptBundle::to_request() const {
  ChatRequest r;
  r.system = corrective_note.empty() ? system_prompt : system_prompt + "\n\n" + corrective_note;
  r.user = render_user_message();
  return r;
}

PromptBundle assemble_prompt(const Query& query, const std::vector<RetrievalHit>& hits,
                             const PromptTemplates& templates) {
  PromptBundle b;
  b.system_prompt = templates.for_mode(query.mode);
  b.user_text = query.text;
  b.context.reserve(hits.size());
  for (const auto& h : hits) {
    b.context.push_back({h.chunk.source_file, h.chunk.section_id, h.chunk.text});
  }
  return b;
}

std::shared_ptr<const KnowledgeBase> KnowledgeBase::build(std::vector<ManualDocument> docs,
                                                          Embedder* embedder,
                                                          std::size_t max_inflight) {
  auto kb = std::make_shared<KnowledgeBase>();
  kb->catalog = resolve_latest(std::move(docs));
  kb->index = RetrievalIndex(kb->catalog);
  if (embedder != nullptr && !kb->index.chunks().empty()) {
    try {
      kb->index.attach_embeddings(*embedder, 16, max_inflight);
    } catch (const ProviderUnavailable&) {
      // Index stays lexical-only; retrieve() decides whether that is allowed.
    }
  }
  return kb;
}

KnowledgeStore::KnowledgeStore(std::shared_ptr<const KnowledgeBase> initial)
    : current_(std::move(initial)) {}

std::shared_ptr<const KnowledgeBase> KnowledgeStore::current() const {
  std::lock_guard lock(mu_);
  return current_;
}

void KnowledgeStore::replace(std::shared_ptr<const KnowledgeBase> next) {
  std::lock_guard lock(mu_);
  current_ = std::move(next);
}

json GroundedAnswer::to_json() const {
  json refs = json::array();
  for (const auto& r : references) refs.push_back(lastmile::to_json(r));
  json hit_list = json::array();
  for (const auto& h : hits) {
    hit_list.push_back({{"doc", h.chunk.doc},
                        {"source_file", h.chunk.source_file},
                        {"section_id", h.chunk.section_id},
                        {"score", h.score},
                        {"method", std::string(lastmile::to_string(h.method))}});
  }
  return {{"body", body},
          {"pattern", std::string(lastmile::to_string(pattern))},
          {"refusal", std::string(lastmile::to_string(refusal))},
          {"language", std::string(lastmile::to_string(language))},
          {"references", refs},
          {"hits", hit_list},
          {"provider_calls", provider_calls},
          {"embedding_calls", embedding_calls},
          {"fallback_used", fallback_used},
          {"warnings", warnings}};
}

void AssistantConfig::validate() const {
  retrieval.validate();
  if (max_regenerations < 0) throw ConfigError("max_regenerations must be >= 0");
  if (instructional_max_sections < 1) throw ConfigError("instructional_max_sections must be >= 1");
}

std::vector<std::string> check_references(const std::vector<Reference>& refs,
                                          const ManualCatalog& catalog) {
  std::vector<std::string> violations;
  const auto add = [&](std::string_view id) {
    if (std::find(violations.begin(), violations.end(), id) == violations.end()) {
      violations.emplace_back(id);
    }
  };
  for (const auto& ref : refs) {
    const auto* doc = catalog.lookup_file(ref.file);
    if (doc == nullptr) {
      const auto name = parse_manual_name(ref.file);
      const auto* latest = catalog.latest(name.logical_name);
      add(latest != nullptr && latest->version > name.version ? rule::stale_reference
                                                               : rule::unknown_reference);
      continue;
    }
    for (const auto& id : ref.sections) {
      if (doc->find_section(id) == nullptr) add(rule::unknown_section);
    }
  }
  return violations;
}

Assistant::Assistant(PromptTemplates templates, Lexicon lexicon, AssistantConfig config,
                     std::shared_ptr<ChatProvider> chat, std::shared_ptr<Embedder> embedder)
    : templates_(std::move(templates)),
      lexicon_(std::move(lexicon)),
      config_(config),
      chat_(std::move(chat)),
      embedder_(std::move(embedder)) {
  config_.validate();
}

std::vector<RetrievalHit> Assistant::instructional_context(const std::vector<RetrievalHit>& hits,
                                                           const KnowledgeBase& kb) const {
  if (hits.empty()) return {};
  const auto& best_doc = hits.front().chunk.doc;
  std::vector<RetrievalHit> out;
  for (const auto& c : kb.index.chunks()) {
    if (c.doc != best_doc) continue;
    auto it = std::find_if(hits.begin(), hits.end(), [&](const RetrievalHit& h) {
      return h.chunk.doc == c.doc && h.chunk.section_id == c.section_id;
    });
    out.push_back(it != hits.end() ? *it : RetrievalHit{c, 0.0, hits.front().method});
    if (out.size() >= config_.instructional_max_sections) break;
  }
  return out;
}

GroundedAnswer Assistant::answer(const Query& query, const KnowledgeBase& kb) const {
  const auto lang = query.language;

  if (detect_anomaly_query(query.text, lang, lexicon_)) {
    return fixed_answer(anomaly_response(lang), Pattern::anomaly, RefusalClass::safety_warning,
                        lang);
  }

  Embedder* embedder = embedder_.get();
  const bool embeds = embedder != nullptr && kb.index.has_embeddings();
  auto hits = retrieve(query.text, kb.index, config_.retrieval, embedder);
  const auto grounding = grounding_gate(hits, config_.retrieval);

  if (query.mode == ResponseMode::retrieval && grounding == Grounding::ungrounded) {
    auto a = fixed_answer(pattern_b(lang), Pattern::B, RefusalClass::explicit_refusal, lang);
    a.hits = std::move(hits);
    a.embedding_calls = embeds ? 1 : 0;
    return a;
  }

  if (!chat_) throw ProviderUnavailable("no chat provider configured");

  auto context_hits = query.mode == ResponseMode::instructional
                          ? (grounding == Grounding::grounded ? instructional_context(hits, kb)
                                                              : std::vector<RetrievalHit>{})
                          : hits;
  auto bundle = assemble_prompt(query, context_hits, templates_);

  GroundedAnswer result;
  result.language = lang;
  result.hits = std::move(hits);
  result.embedding_calls = embeds ? 1 : 0;

  std::vector<std::string> last_violations;
  for (int attempt = 0; attempt <= config_.max_regenerations; ++attempt) {
    const auto reply = chat_->generate(bundle.to_request());
    result.provider_calls += reply.attempts;
    auto report = validate_response(reply.content, query.mode, lang);
    if (report.pattern == Pattern::A || report.pattern == Pattern::advisory) {
      for (auto& v : check_references(report.references, kb.catalog)) {
        report.violations.push_back(std::move(v));
      }
      if (report.has_hard_violation()) report.pattern = Pattern::malformed;
    }
    if (report.pattern != Pattern::malformed) {
      result.body = reply.content;
      result.pattern = report.pattern;
      result.references = report.references;
      result.refusal = classify_refusal(report, reply.content, lexicon_);
      for (const auto& v : report.violations) {
        if (!is_hard_rule(v)) result.warnings.push_back(v);
      }
      return result;
    }
    last_violations = report.violations;
    bundle.corrective_note =
        "Correction required: the previous output broke these rules: " +
        join(last_violations, ", ") +
        ". Output exactly one permitted pattern and nothing else.";
  }

  if (query.mode == ResponseMode::instructional) {
    throw AdvisoryValidationFailed("advisory output still malformed after " +
                                   std::to_string(config_.max_regenerations) +
                                   " regeneration(s): " + join(last_violations, ", "));
  }
  result.body = std::string(pattern_b(lang));
  result.pattern = Pattern::B;
  result.refusal = RefusalClass::explicit_refusal;
  result.references.clear();
  result.fallback_used = true;
  return result;
}

}  // namespace lastmile
