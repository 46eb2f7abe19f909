#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "lastmile/manual.hpp"

namespace lastmile {

enum class ResponseMode { retrieval, instructional };
std::string_view to_string(ResponseMode mode);
ResponseMode response_mode_from_string(std::string_view s);

enum class Pattern { A, B, anomaly, advisory, malformed };
std::string_view to_string(Pattern p);

enum class RefusalClass { explicit_refusal, safety_warning, partial_with_escalation, full_answer };
std::string_view to_string(RefusalClass c);
RefusalClass refusal_class_from_string(std::string_view s);
inline constexpr RefusalClass kAllRefusalClasses[] = {
    RefusalClass::explicit_refusal, RefusalClass::safety_warning,
    RefusalClass::partial_with_escalation, RefusalClass::full_answer};

// Fixed responses. Emitted byte-for-byte, never paraphrased.
namespace fixed {
inline constexpr std::string_view pattern_b_en =
    "The information is not found in the procedure manual. Please check with the faculty member.";
inline constexpr std::string_view pattern_b_ja =
    "\xE3\x83\x9E\xE3\x83\x8B\xE3\x83\xA5\xE3\x82\xA2\xE3\x83\xAB\xE3\x81\xAB\xE8\xA8\x98"
    "\xE8\xBC\x89\xE3\x81\x8C\xE3\x81\x82\xE3\x82\x8A\xE3\x81\xBE\xE3\x81\x9B\xE3\x82\x93"
    "\xE3\x80\x82\xE6\x95\x99\xE5\x93\xA1\xE3\x81\xAB\xE7\xA2\xBA\xE8\xAA\x8D\xE3\x81\x97"
    "\xE3\x81\xA6\xE3\x81\x8F\xE3\x81\xA0\xE3\x81\x95\xE3\x81\x84\xE3\x80\x82";
inline constexpr std::string_view anomaly_en =
    "\xE2\x9A\xA0 There may be an anomaly. Immediately stop the operation and report it to the "
    "faculty member.";
inline constexpr std::string_view anomaly_ja =
    "\xE2\x9A\xA0 \xE7\x95\xB0\xE5\xB8\xB8\xE3\x81\xAE\xE5\x8F\xAF\xE8\x83\xBD\xE6\x80\xA7"
    "\xE3\x81\x8C\xE3\x81\x82\xE3\x82\x8A\xE3\x81\xBE\xE3\x81\x99\xE3\x80\x82\xE7\x9B\xB4"
    "\xE3\x81\xA1\xE3\x81\xAB\xE6\x93\x8D\xE4\xBD\x9C\xE3\x82\x92\xE4\xB8\xAD\xE6\xAD\xA2"
    "\xE3\x81\x97\xE3\x80\x81\xE6\x95\x99\xE5\x93\xA1\xE3\x81\xAB\xE5\xA0\xB1\xE5\x91\x8A"
    "\xE3\x81\x97\xE3\x81\xA6\xE3\x81\x8F\xE3\x81\xA0\xE3\x81\x95\xE3\x81\x84\xE3\x80\x82";
}  // namespace fixed

std::string_view pattern_b(Language lang);
std::string_view anomaly_response(Language lang);

// Stable violation ids (public report schema, see docs/violations.md).
namespace rule {
// Pattern A, hard
inline constexpr std::string_view over_length = "over_length";
inline constexpr std::string_view bullet_list = "bullet_list";
inline constexpr std::string_view missing_reference = "missing_reference";
inline constexpr std::string_view multiple_references = "multiple_references";
inline constexpr std::string_view reference_not_last = "reference_not_last";
inline constexpr std::string_view bad_reference_format = "bad_reference_format";
inline constexpr std::string_view multiple_paragraphs = "multiple_paragraphs";
inline constexpr std::string_view empty_body = "empty_body";
// Pattern A, soft
inline constexpr std::string_view short_answer = "short";
inline constexpr std::string_view above_soft_band = "above_soft_band";
// Advisory, hard
inline constexpr std::string_view missing_disclaimer = "missing_disclaimer";
inline constexpr std::string_view missing_training_notice = "missing_training_notice";
inline constexpr std::string_view missing_risk_section = "missing_risk_section";
inline constexpr std::string_view missing_procedure_section = "missing_procedure_section";
inline constexpr std::string_view missing_citation = "missing_citation";
inline constexpr std::string_view section_order = "section_order";
// Catalog cross-checks (added by the assistant), hard
inline constexpr std::string_view unknown_reference = "unknown_reference";
inline constexpr std::string_view stale_reference = "stale_reference";
inline constexpr std::string_view unknown_section = "unknown_section";
}  // namespace rule

bool is_hard_rule(std::string_view rule_id);

struct Reference {
  std::string file;
  std::vector<std::string> sections;

  bool operator==(const Reference&) const = default;
};

struct ValidationReport {
  Pattern pattern = Pattern::malformed;
  Language language = Language::en;
  std::size_t length_units = 0;
  std::vector<std::string> violations;
  std::vector<Reference> references;

  bool has_hard_violation() const;
};

nlohmann::json to_json(const ValidationReport& r);
nlohmann::json to_json(const Reference& r);

// ja iff the text holds a Hiragana, Katakana or CJK ideograph scalar.
// Throws EmptyText for blank input.
Language detect_language(std::string_view text);

// Words (en) or non-space scalars (ja), reference lines excluded.
std::size_t count_length(std::string_view text, Language lang);

inline constexpr std::size_t kMaxWordsEn = 50;
inline constexpr std::size_t kMinWordsEn = 30;
inline constexpr std::size_t kMaxCharsJa = 100;
inline constexpr std::size_t kSoftMaxCharsJa = 80;
inline constexpr std::size_t kMinCharsJa = 30;

// Pure: no catalog access. Fixed responses are recognised in both modes.
ValidationReport validate_response(std::string_view raw, ResponseMode mode, Language lang);

// Parenthesised citations such as "(/Miniflex.docx, Section 1-1, 8-3)".
std::vector<Reference> extract_citations(std::string_view text);

// Operator-editable phrase lists, per language. Matching is
// case-insensitive substring.
struct Lexicon {
  std::map<Language, std::vector<std::string>> anomaly;
  std::map<Language, std::vector<std::string>> escalation;
  std::map<Language, std::vector<std::string>> safety_stop;

  static Lexicon defaults();
  // {"anomaly": {"en": [...], "ja": [...]}, "escalation": {...}, "safety_stop": {...}}
  static Lexicon from_json(const nlohmann::json& j);
  static Lexicon from_file(const std::string& path);
  nlohmann::json to_json() const;

  bool operator==(const Lexicon&) const = default;
};

// Checks the lexicon lists of every language, so mixed-language queries
// still trip the anomaly short-circuit.
bool detect_anomaly_query(std::string_view query, Language lang, const Lexicon& lexicon);

// Precedence: B > anomaly/safety stop > partial with escalation > full.
RefusalClass classify_refusal(const ValidationReport& report, std::string_view raw,
                              const Lexicon& lexicon);

}  // namespace lastmile
