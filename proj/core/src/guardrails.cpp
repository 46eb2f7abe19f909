#include "lastmile/guardrails.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <regex>

#include "lastmile/errors.hpp"
#include "lastmile/text.hpp"

namespace lastmile {

using nlohmann::json;

namespace {

constexpr std::string_view kLinkMarker = "\xF0\x9F\x94\x97";  // U+1F517
constexpr std::string_view kSectionMarker = "\xE2\x96\xA0";   // U+25A0
constexpr std::string_view kRefLabelEn = "Reference:";
constexpr std::string_view kRefLabelJa = "\xE5\x8F\x82\xE7\x85\xA7:";            // 参照:
constexpr std::string_view kRefLabelJaWide = "\xE5\x8F\x82\xE7\x85\xA7\xEF\xBC\x9A";  // 参照：
constexpr std::string_view kDisclaimerEn = "[IMPORTANT]";
constexpr std::string_view kDisclaimerJa = "\xE3\x80\x90\xE9\x87\x8D\xE8\xA6\x81\xE3\x80\x91";  // 【重要】
constexpr std::string_view kTrainingEn = "in-person";
constexpr std::string_view kTrainingJa = "\xE5\xAF\xBE\xE9\x9D\xA2";  // 対面
constexpr std::string_view kRiskEn = "risk assessment";
constexpr std::string_view kRiskJa =
    "\xE3\x83\xAA\xE3\x82\xB9\xE3\x82\xAF\xE3\x82\xA2\xE3\x82\xBB\xE3\x82\xB9\xE3\x83\xA1"
    "\xE3\x83\xB3\xE3\x83\x88";  // リスクアセスメント
constexpr std::string_view kProcedureEn = "procedure";
constexpr std::string_view kProcedureJa = "\xE6\x89\x8B\xE9\xA0\x86";  // 手順

bool contains_ci(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return false;
  return text::ascii_lower(haystack).find(text::ascii_lower(needle)) != std::string::npos;
}

bool is_reference_line(std::string_view line) {
  return text::starts_with(text::trim(line), kLinkMarker);
}

bool is_bullet_line(std::string_view line) {
  static const std::regex kEnumerated(R"(^[0-9]+\.(\s|$))");
  // • ・ ● ◦ ‣
  static constexpr std::string_view kBullets[] = {"\xE2\x80\xA2", "\xE3\x83\xBB", "\xE2\x97\x8F",
                                                  "\xE2\x97\xA6", "\xE2\x80\xA3"};
  const auto t = text::trim(line);
  if (t.empty()) return false;
  if (t.front() == '-' || t.front() == '*') return true;
  for (auto b : kBullets) {
    if (text::starts_with(t, b)) return true;
  }
  return std::regex_search(std::string(t), kEnumerated);
}

std::string strip_reference_lines(std::string_view s) {
  std::string out;
  bool first = true;
  for (auto line : text::split_lines(s)) {
    if (is_reference_line(line)) continue;
    if (!first) out.push_back('\n');
    out.append(line);
    first = false;
  }
  return out;
}

// Parses "🔗 Reference: <file>" (en) / "🔗 参照: <file>" (ja).
std::optional<std::string> parse_reference_line(std::string_view line, Language lang) {
  auto t = text::trim(line);
  t.remove_prefix(kLinkMarker.size());
  t = text::trim(t);
  std::string_view rest;
  if (lang == Language::en && text::starts_with(t, kRefLabelEn)) {
    rest = t.substr(kRefLabelEn.size());
  } else if (lang == Language::ja && text::starts_with(t, kRefLabelJa)) {
    rest = t.substr(kRefLabelJa.size());
  } else if (lang == Language::ja && text::starts_with(t, kRefLabelJaWide)) {
    rest = t.substr(kRefLabelJaWide.size());
  } else {
    return std::nullopt;
  }
  rest = text::trim(rest);
  if (rest.empty()) return std::nullopt;
  return std::string(rest);
}

void add_violation(ValidationReport& r, std::string_view id) {
  if (std::find(r.violations.begin(), r.violations.end(), id) == r.violations.end()) {
    r.violations.emplace_back(id);
  }
}

void validate_pattern_a(std::string_view raw, ValidationReport& r) {
  const auto lines = text::split_lines(raw);
  std::vector<std::size_t> ref_lines;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (is_reference_line(lines[i])) ref_lines.push_back(i);
  }
  std::size_t last_nonempty = lines.size();
  for (std::size_t i = lines.size(); i-- > 0;) {
    if (!text::trim(lines[i]).empty()) {
      last_nonempty = i;
      break;
    }
  }

  std::size_t body_end = lines.size();
  if (ref_lines.empty()) {
    add_violation(r, rule::missing_reference);
  } else {
    if (ref_lines.size() > 1) add_violation(r, rule::multiple_references);
    const auto ref = ref_lines.back();
    if (ref != last_nonempty) add_violation(r, rule::reference_not_last);
    body_end = ref_lines.front();
    if (auto file = parse_reference_line(lines[ref], r.language)) {
      r.references.push_back({*file, {}});
    } else {
      add_violation(r, rule::bad_reference_format);
    }
  }

  std::vector<std::string_view> body;
  for (std::size_t i = 0; i < body_end; ++i) body.push_back(lines[i]);
  while (!body.empty() && text::trim(body.front()).empty()) body.erase(body.begin());
  while (!body.empty() && text::trim(body.back()).empty()) body.pop_back();
  if (body.empty()) add_violation(r, rule::empty_body);
  for (auto line : body) {
    if (text::trim(line).empty()) add_violation(r, rule::multiple_paragraphs);
    if (is_bullet_line(line)) add_violation(r, rule::bullet_list);
  }

  r.length_units = count_length(raw, r.language);
  if (r.language == Language::en) {
    if (r.length_units > kMaxWordsEn) add_violation(r, rule::over_length);
    else if (r.length_units < kMinWordsEn) add_violation(r, rule::short_answer);
  } else {
    if (r.length_units > kMaxCharsJa) add_violation(r, rule::over_length);
    else if (r.length_units > kSoftMaxCharsJa) add_violation(r, rule::above_soft_band);
    else if (r.length_units < kMinCharsJa) add_violation(r, rule::short_answer);
  }
}

void validate_advisory(std::string_view raw, ValidationReport& r) {
  const auto lines = text::split_lines(raw);
  std::optional<std::size_t> disclaimer, first_section, training, risk, procedure;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto t = text::trim(lines[i]);
    if (!disclaimer && (text::starts_with(t, kDisclaimerEn) || text::starts_with(t, kDisclaimerJa))) {
      disclaimer = i;
    }
    const bool section = text::starts_with(t, kSectionMarker);
    if (section && !first_section) first_section = i;
    if (!first_section && !training && (contains_ci(t, kTrainingEn) || contains_ci(t, kTrainingJa))) {
      training = i;
    }
    if (section && !risk && (contains_ci(t, kRiskEn) || contains_ci(t, kRiskJa))) risk = i;
    if (section && !procedure && (contains_ci(t, kProcedureEn) || contains_ci(t, kProcedureJa))) {
      procedure = i;
    }
  }
  if (!disclaimer) add_violation(r, rule::missing_disclaimer);
  if (!training) add_violation(r, rule::missing_training_notice);
  if (!risk) add_violation(r, rule::missing_risk_section);
  if (!procedure) add_violation(r, rule::missing_procedure_section);
  if ((disclaimer && training && *disclaimer > *training) ||
      (disclaimer && first_section && *disclaimer > *first_section) ||
      (risk && procedure && *risk > *procedure)) {
    add_violation(r, rule::section_order);
  }
  r.references = extract_citations(raw);
  if (r.references.empty()) add_violation(r, rule::missing_citation);
  r.length_units = count_length(raw, r.language);
}

std::optional<std::size_t> first_sentence_with(const std::vector<std::string>& sentences,
                                               const std::vector<std::string>& phrases) {
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    for (const auto& p : phrases) {
      if (contains_ci(sentences[i], p)) return i;
    }
  }
  return std::nullopt;
}

std::vector<std::string> all_languages(const std::map<Language, std::vector<std::string>>& m) {
  std::vector<std::string> out;
  for (const auto& [_, v] : m) out.insert(out.end(), v.begin(), v.end());
  return out;
}

}  // namespace

std::string_view to_string(ResponseMode mode) {
  return mode == ResponseMode::instructional ? "instructional" : "retrieval";
}

ResponseMode response_mode_from_string(std::string_view s) {
  if (s == "retrieval") return ResponseMode::retrieval;
  if (s == "instructional") return ResponseMode::instructional;
  throw Error("InvalidMode", "unknown mode '" + std::string(s) + "'");
}

std::string_view to_string(Pattern p) {
  switch (p) {
    case Pattern::A: return "A";
    case Pattern::B: return "B";
    case Pattern::anomaly: return "anomaly";
    case Pattern::advisory: return "advisory";
    case Pattern::malformed: return "malformed";
  }
  return "malformed";
}

std::string_view to_string(RefusalClass c) {
  switch (c) {
    case RefusalClass::explicit_refusal: return "explicit_refusal";
    case RefusalClass::safety_warning: return "safety_warning";
    case RefusalClass::partial_with_escalation: return "partial_with_escalation";
    case RefusalClass::full_answer: return "full_answer";
  }
  return "full_answer";
}

RefusalClass refusal_class_from_string(std::string_view s) {
  for (auto c : kAllRefusalClasses) {
    if (to_string(c) == s) return c;
  }
  throw Error("InvalidRefusalClass", "unknown refusal class '" + std::string(s) + "'");
}

std::string_view pattern_b(Language lang) {
  return lang == Language::ja ? fixed::pattern_b_ja : fixed::pattern_b_en;
}

std::string_view anomaly_response(Language lang) {
  return lang == Language::ja ? fixed::anomaly_ja : fixed::anomaly_en;
}

bool is_hard_rule(std::string_view id) {
  return id != rule::short_answer && id != rule::above_soft_band;
}

bool ValidationReport::has_hard_violation() const {
  return std::any_of(violations.begin(), violations.end(),
                     [](const std::string& v) { return is_hard_rule(v); });
}

json to_json(const Reference& r) { return {{"file", r.file}, {"sections", r.sections}}; }

json to_json(const ValidationReport& r) {
  json refs = json::array();
  for (const auto& ref : r.references) refs.push_back(to_json(ref));
  return {{"pattern", std::string(to_string(r.pattern))},
          {"language", std::string(to_string(r.language))},
          {"length_units", r.length_units},
          {"violations", r.violations},
          {"hard_violation", r.has_hard_violation()},
          {"references", refs}};
}

Language detect_language(std::string_view s) {
  if (text::trim(s).empty()) throw EmptyText("detect_language: empty text");
  for (char32_t cp : text::decode_utf8(s)) {
    if (text::is_japanese_scalar(cp)) return Language::ja;
  }
  return Language::en;
}

std::size_t count_length(std::string_view s, Language lang) {
  const auto body = strip_reference_lines(s);
  std::size_t n = 0;
  if (lang == Language::ja) {
    for (char32_t cp : text::decode_utf8(body)) {
      if (!text::is_unicode_space(cp)) ++n;
    }
    return n;
  }
  bool in_token = false;
  bool token_has_word = false;
  for (char32_t cp : text::decode_utf8(body)) {
    if (text::is_unicode_space(cp)) {
      if (in_token && token_has_word) ++n;
      in_token = token_has_word = false;
      continue;
    }
    in_token = true;
    token_has_word = token_has_word || text::is_word_scalar(cp);
  }
  if (in_token && token_has_word) ++n;
  return n;
}

std::vector<Reference> extract_citations(std::string_view s) {
  static const std::regex kCitation(
      R"((?:\(|\xEF\xBC\x88)\s*/?([^(),\n]+?)\s*,\s*Sections?\s+([0-9]+-[0-9]+(?:\s*,\s*[0-9]+-[0-9]+)*)\s*(?:\)|\xEF\xBC\x89))");
  static const std::regex kSectionId(R"([0-9]+-[0-9]+)");
  std::vector<Reference> out;
  const std::string str(s);
  for (auto it = std::sregex_iterator(str.begin(), str.end(), kCitation);
       it != std::sregex_iterator(); ++it) {
    const auto file = std::string(text::trim((*it)[1].str()));
    auto ref = std::find_if(out.begin(), out.end(), [&](const Reference& r) { return r.file == file; });
    if (ref == out.end()) {
      out.push_back({file, {}});
      ref = std::prev(out.end());
    }
    const auto ids = (*it)[2].str();
    for (auto m = std::sregex_iterator(ids.begin(), ids.end(), kSectionId);
         m != std::sregex_iterator(); ++m) {
      if (std::find(ref->sections.begin(), ref->sections.end(), m->str()) == ref->sections.end()) {
        ref->sections.push_back(m->str());
      }
    }
  }
  return out;
}

ValidationReport validate_response(std::string_view raw, ResponseMode mode, Language lang) {
  ValidationReport r;
  r.language = lang;
  if (raw == pattern_b(lang)) {
    r.pattern = Pattern::B;
    r.length_units = count_length(raw, lang);
    return r;
  }
  if (raw == anomaly_response(lang) || raw == fixed::anomaly_en) {
    r.pattern = Pattern::anomaly;
    r.length_units = count_length(raw, lang);
    return r;
  }
  if (mode == ResponseMode::retrieval) {
    validate_pattern_a(raw, r);
    r.pattern = r.has_hard_violation() ? Pattern::malformed : Pattern::A;
  } else {
    validate_advisory(raw, r);
    r.pattern = r.has_hard_violation() ? Pattern::malformed : Pattern::advisory;
  }
  return r;
}

Lexicon Lexicon::defaults() {
  Lexicon l;
  l.anomaly[Language::en] = {"smoke", "burning", "unusual sound", "unusual smell",
                             "error message", "sparks"};
  l.anomaly[Language::ja] = {"\xE7\x85\x99",                                   // 煙
                             "\xE7\x95\xB0\xE9\x9F\xB3",                       // 異音
                             "\xE7\x95\xB0\xE8\x87\xAD",                       // 異臭
                             "\xE3\x82\xA8\xE3\x83\xA9\xE3\x83\xBC",           // エラー
                             "\xE7\x81\xAB\xE8\x8A\xB1",                       // 火花
                             "\xE5\xA4\x89\xE3\x81\xAA\xE9\x9F\xB3",           // 変な音
                             "\xE5\xA4\x89\xE3\x81\xAA\xE3\x81\xAB\xE3\x81\x8A\xE3\x81\x84",  // 変なにおい
                             "\xE7\x84\xA6\xE3\x81\x92\xE8\x87\xAD"};          // 焦げ臭
  l.escalation[Language::en] = {"contact the faculty member", "contact the administrator",
                                "check with the faculty member", "contact the instructor",
                                "consult the faculty member"};
  l.escalation[Language::ja] = {"\xE6\x95\x99\xE5\x93\xA1\xE3\x81\xAB",              // 教員に
                                "\xE7\xAE\xA1\xE7\x90\x86\xE8\x80\x85\xE3\x81\xAB"};  // 管理者に
  l.safety_stop[Language::en] = {"Immediately stop", "report it to the faculty member",
                                 "contact the faculty member immediately",
                                 "contact the administrator immediately"};
  l.safety_stop[Language::ja] = {
      "\xE7\x9B\xB4\xE3\x81\xA1\xE3\x81\xAB\xE6\x93\x8D\xE4\xBD\x9C\xE3\x82\x92\xE4\xB8\xAD"
      "\xE6\xAD\xA2",                                                  // 直ちに操作を中止
      "\xE3\x81\x99\xE3\x81\x90\xE3\x81\xAB\xE6\x95\x99\xE5\x93\xA1"};  // すぐに教員
  return l;
}

Lexicon Lexicon::from_json(const json& j) {
  Lexicon l;
  const auto read = [&](const char* key, std::map<Language, std::vector<std::string>>& into) {
    if (!j.contains(key)) throw ConfigError(std::string("lexicon is missing '") + key + "'");
    for (const auto& [lang, list] : j.at(key).items()) {
      into[language_from_string(lang)] = list.get<std::vector<std::string>>();
    }
  };
  try {
    read("anomaly", l.anomaly);
    read("escalation", l.escalation);
    read("safety_stop", l.safety_stop);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed lexicon: ") + e.what());
  }
  return l;
}

Lexicon Lexicon::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open lexicon file '" + path + "'");
  auto j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("lexicon file '" + path + "' is not JSON");
  return from_json(j);
}

json Lexicon::to_json() const {
  const auto dump = [](const std::map<Language, std::vector<std::string>>& m) {
    json o = json::object();
    for (const auto& [lang, v] : m) o[std::string(lastmile::to_string(lang))] = v;
    return o;
  };
  return {{"anomaly", dump(anomaly)}, {"escalation", dump(escalation)},
          {"safety_stop", dump(safety_stop)}};
}

bool detect_anomaly_query(std::string_view query, Language lang, const Lexicon& lexicon) {
  (void)lang;
  for (const auto& phrase : all_languages(lexicon.anomaly)) {
    if (contains_ci(query, phrase)) return true;
  }
  return false;
}

RefusalClass classify_refusal(const ValidationReport& report, std::string_view raw,
                              const Lexicon& lexicon) {
  if (report.pattern == Pattern::B) return RefusalClass::explicit_refusal;
  if (report.pattern == Pattern::anomaly) return RefusalClass::safety_warning;
  const auto sentences = text::split_sentences(strip_reference_lines(raw));
  if (auto idx = first_sentence_with(sentences, all_languages(lexicon.safety_stop)); idx && *idx <= 1) {
    return RefusalClass::safety_warning;
  }
  if (auto idx = first_sentence_with(sentences, all_languages(lexicon.escalation)); idx && *idx >= 1) {
    return RefusalClass::partial_with_escalation;
  }
  return RefusalClass::full_answer;
}

}  // namespace lastmile
