#include <gtest/gtest.h>

#include <algorithm>

#include "lastmile/errors.hpp"
#include "lastmile/guardrails.hpp"
#include "lastmile/text.hpp"
#include "support.hpp"

using namespace lastmile;
using lastmile::testing::fixture;
using lastmile::testing::slurp;

namespace {

bool has(const ValidationReport& r, std::string_view id) {
  return std::find(r.violations.begin(), r.violations.end(), id) != r.violations.end();
}

std::string words(std::size_t n) {
  std::string s;
  for (std::size_t i = 0; i < n; ++i) s += (i ? " " : "") + std::string("word");
  return s + ".";
}

std::string strip_newline(std::string s) {
  while (!s.empty() && s.back() == '\n') s.pop_back();
  return s;
}

// Every single-scalar substitution, deletion and insertion of `s`.
std::vector<std::string> mutations(std::string_view s) {
  const auto cps = text::decode_utf8(s);
  const std::vector<char32_t> alphabet{U'a', U'.', U' ', U'X', U'。', U'⚠', U'!'};
  const auto encode = [](const std::vector<char32_t>& v) {
    std::string out;
    for (auto cp : v) out += text::encode_utf8(cp);
    return out;
  };
  std::vector<std::string> out;
  for (std::size_t i = 0; i <= cps.size(); ++i) {
    for (auto c : alphabet) {
      auto ins = cps;
      ins.insert(ins.begin() + static_cast<std::ptrdiff_t>(i), c);
      out.push_back(encode(ins));
      if (i < cps.size() && cps[i] != c) {
        auto sub = cps;
        sub[i] = c;
        out.push_back(encode(sub));
      }
    }
    if (i < cps.size()) {
      auto del = cps;
      del.erase(del.begin() + static_cast<std::ptrdiff_t>(i));
      out.push_back(encode(del));
    }
  }
  return out;
}

}  // namespace

TEST(FixedResponses, ExactText) {
  EXPECT_EQ(pattern_b(Language::en),
            "The information is not found in the procedure manual. Please check with the faculty member.");
  EXPECT_EQ(pattern_b(Language::ja), "マニュアルに記載がありません。教員に確認してください。");
  EXPECT_EQ(anomaly_response(Language::en),
            "⚠ There may be an anomaly. Immediately stop the operation and report it to the faculty member.");
  EXPECT_EQ(strip_newline(slurp(fixture("pattern_b_en.txt"))), pattern_b(Language::en));
}

TEST(FixedResponses, RecognisedInBothModes) {
  for (auto mode : {ResponseMode::retrieval, ResponseMode::instructional}) {
    EXPECT_EQ(validate_response(pattern_b(Language::en), mode, Language::en).pattern, Pattern::B);
    EXPECT_EQ(validate_response(pattern_b(Language::ja), mode, Language::ja).pattern, Pattern::B);
    EXPECT_EQ(validate_response(anomaly_response(Language::en), mode, Language::en).pattern,
              Pattern::anomaly);
    EXPECT_EQ(validate_response(anomaly_response(Language::ja), mode, Language::ja).pattern,
              Pattern::anomaly);
  }
}

// Property: no single-character edit of a fixed response is accepted as it.
TEST(FixedResponsesProperty, RejectsAllSingleCharacterMutations) {
  struct Case {
    std::string_view text;
    Language lang;
    Pattern pattern;
  };
  const Case cases[] = {{pattern_b(Language::en), Language::en, Pattern::B},
                        {pattern_b(Language::ja), Language::ja, Pattern::B},
                        {anomaly_response(Language::en), Language::en, Pattern::anomaly},
                        {anomaly_response(Language::ja), Language::ja, Pattern::anomaly}};
  std::size_t checked = 0;
  for (const auto& c : cases) {
    for (const auto& m : mutations(c.text)) {
      if (m == c.text) continue;
      for (auto mode : {ResponseMode::retrieval, ResponseMode::instructional}) {
        const auto r = validate_response(m, mode, c.lang);
        ASSERT_NE(r.pattern, c.pattern) << m;
        ASSERT_NE(r.pattern, Pattern::B) << m;
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 3000u);
}

TEST(DetectLanguage, AnyJapaneseScalarWins) {
  EXPECT_EQ(detect_language("How do I set the sample?"), Language::en);
  EXPECT_EQ(detect_language("サンプルセットの仕方は？"), Language::ja);
  EXPECT_EQ(detect_language("Li2S を測る"), Language::ja);
  EXPECT_THROW(detect_language("  \n"), EmptyText);
}

TEST(CountLength, WordsAndCharacters) {
  EXPECT_EQ(count_length("Set the sample flat. Scan slowly.", Language::en), 6u);
  EXPECT_EQ(count_length("", Language::en), 0u);
  EXPECT_EQ(count_length("Body here - ok\n🔗 Reference: Manual_v3.docx", Language::en), 3u);
  EXPECT_EQ(count_length("試料 を\n🔗 参照: a.docx", Language::ja), 3u);
}

TEST(PatternA, CompliantAnswer) {
  const std::string raw =
      "Wipe up the spilled powder with Kimwipes and ethanol right away and keep cleaning until no "
      "residue remains on the bench or the instrument. Leave the bench cleaner than you found it "
      "before you move on.\n🔗 Reference: Miniflex.md";
  const auto r = validate_response(raw, ResponseMode::retrieval, Language::en);
  EXPECT_EQ(r.pattern, Pattern::A);
  EXPECT_TRUE(r.violations.empty());
  ASSERT_EQ(r.references.size(), 1u);
  EXPECT_EQ(r.references[0].file, "Miniflex.md");
}

TEST(PatternA, SiExampleIsShortButValid) {
  const std::string raw =
      "Set the sample flat. Scan slowly. For Rietveld analysis, measure over a wide angle range "
      "slowly, sometimes taking overnight.\n\n🔗 Reference: XRD_MiniFlex_Manual_v3.docx";
  const auto r = validate_response(raw, ResponseMode::retrieval, Language::en);
  EXPECT_EQ(r.pattern, Pattern::A);
  EXPECT_TRUE(has(r, rule::short_answer));
  EXPECT_FALSE(r.has_hard_violation());
}

TEST(PatternA, HardViolations) {
  const auto check = [](const std::string& raw, std::string_view id, Language lang = Language::en) {
    const auto r = validate_response(raw, ResponseMode::retrieval, lang);
    EXPECT_EQ(r.pattern, Pattern::malformed) << raw;
    EXPECT_TRUE(has(r, id)) << raw;
  };
  check(words(60) + "\n🔗 Reference: a.docx", rule::over_length);
  check(words(35), rule::missing_reference);
  check("- " + words(35) + "\n🔗 Reference: a.docx", rule::bullet_list);
  check("1. " + words(35) + "\n🔗 Reference: a.docx", rule::bullet_list);
  check("・" + words(35) + "\n🔗 Reference: a.docx", rule::bullet_list);
  check(words(20) + "\n\n" + words(15) + "\n🔗 Reference: a.docx", rule::multiple_paragraphs);
  check(words(35) + "\n🔗 Reference: a.docx\n🔗 Reference: b.docx", rule::multiple_references);
  check("🔗 Reference: a.docx\n" + words(35), rule::reference_not_last);
  check(words(35) + "\n🔗 Source: a.docx", rule::bad_reference_format);
  check("🔗 Reference: a.docx", rule::empty_body);
}

TEST(PatternA, JapaneseBands) {
  const auto ja_body = [](std::size_t n) {
    std::string s;
    for (std::size_t i = 0; i < n; ++i) s += "試";
    return s;
  };
  auto r = validate_response(ja_body(50) + "\n🔗 参照: a.docx", ResponseMode::retrieval, Language::ja);
  EXPECT_EQ(r.pattern, Pattern::A);
  EXPECT_TRUE(r.violations.empty());
  r = validate_response(ja_body(90) + "\n🔗 参照: a.docx", ResponseMode::retrieval, Language::ja);
  EXPECT_EQ(r.pattern, Pattern::A);
  EXPECT_TRUE(has(r, rule::above_soft_band));
  r = validate_response(ja_body(101) + "\n🔗 参照: a.docx", ResponseMode::retrieval, Language::ja);
  EXPECT_TRUE(has(r, rule::over_length));
  r = validate_response(ja_body(100) + "\n🔗 参照: a.docx", ResponseMode::retrieval, Language::ja);
  EXPECT_EQ(r.pattern, Pattern::A);
  // English label on a Japanese answer is the wrong format.
  r = validate_response(ja_body(50) + "\n🔗 Reference: a.docx", ResponseMode::retrieval, Language::ja);
  EXPECT_TRUE(has(r, rule::bad_reference_format));
}

TEST(Advisory, SiReportsPass) {
  for (const char* name : {"advisory_report_en.txt", "advisory_report_ja.txt"}) {
    const auto raw = slurp(fixture(name));
    const auto r = validate_response(raw, ResponseMode::instructional, detect_language(raw));
    EXPECT_EQ(r.pattern, Pattern::advisory) << name;
    EXPECT_FALSE(r.has_hard_violation()) << name;
    ASSERT_EQ(r.references.size(), 1u);
    EXPECT_EQ(r.references[0].file, "Miniflex.docx");
    EXPECT_GE(r.references[0].sections.size(), 12u);
  }
}

TEST(Advisory, MissingPartsAreHardViolations) {
  const auto report = slurp(fixture("advisory_report_en.txt"));
  const auto without = [&](std::string_view needle) {
    std::string out;
    for (auto line : text::split_lines(report)) {
      if (line.find(needle) != std::string_view::npos) continue;
      out += std::string(line) + "\n";
    }
    return out;
  };
  const auto check = [](const std::string& raw, std::string_view id) {
    const auto r = validate_response(raw, ResponseMode::instructional, Language::en);
    EXPECT_EQ(r.pattern, Pattern::malformed);
    EXPECT_TRUE(has(r, id)) << id;
  };
  check(without("[IMPORTANT]"), rule::missing_disclaimer);
  check(without("in-person"), rule::missing_training_notice);
  check(without("Risk Assessment"), rule::missing_risk_section);
  check(without("**Procedure**"), rule::missing_procedure_section);
  check("[IMPORTANT] x\nin-person training\n■ Risk Assessment\n■ Procedure\n1. do it\n",
        rule::missing_citation);
  check("in-person training\n[IMPORTANT] x\n■ Risk Assessment (/a.docx, Section 1-1)\n■ Procedure\n",
        rule::section_order);
}

TEST(Citations, ParsesAndMerges) {
  const auto refs = extract_citations(
      "a (/Miniflex.docx, Section 1-1, 8-3). b (/Miniflex.docx, Section 2-1) "
      "c (Other_v2.docx, Sections 4-2)");
  ASSERT_EQ(refs.size(), 2u);
  EXPECT_EQ(refs[0], (Reference{"Miniflex.docx", {"1-1", "8-3", "2-1"}}));
  EXPECT_EQ(refs[1], (Reference{"Other_v2.docx", {"4-2"}}));
  EXPECT_TRUE(extract_citations("no citations here (really)").empty());
}

TEST(Anomaly, LexiconMatching) {
  const auto lex = Lexicon::defaults();
  EXPECT_TRUE(detect_anomaly_query("There is smoke coming out.", Language::en, lex));
  EXPECT_TRUE(detect_anomaly_query("I hear an UNUSUAL SOUND", Language::en, lex));
  EXPECT_FALSE(detect_anomaly_query("How do I set the sample?", Language::en, lex));
  EXPECT_TRUE(detect_anomaly_query("変な音がする", Language::ja, lex));
  EXPECT_TRUE(detect_anomaly_query("異音がします", Language::ja, lex));
  Lexicon empty;
  EXPECT_FALSE(detect_anomaly_query("smoke", Language::en, empty));
}

TEST(Lexicon, ShippedFileMatchesDefaultsAndRoundTrips) {
  const auto lex = Lexicon::from_file((lastmile::testing::source_dir() / "data/lexicon.json").string());
  EXPECT_EQ(lex, Lexicon::defaults());
  EXPECT_EQ(Lexicon::from_json(Lexicon::defaults().to_json()), Lexicon::defaults());
  EXPECT_THROW(Lexicon::from_json(nlohmann::json{{"anomaly", {}}}), ConfigError);
}

TEST(ClassifyRefusal, PaperExamples) {
  const auto lex = Lexicon::defaults();
  const auto classify = [&](std::string_view raw) {
    return classify_refusal(validate_response(raw, ResponseMode::retrieval, Language::en), raw, lex);
  };
  EXPECT_EQ(classify(pattern_b(Language::en)), RefusalClass::explicit_refusal);
  EXPECT_EQ(classify(anomaly_response(Language::en)), RefusalClass::safety_warning);
  EXPECT_EQ(classify("Try shutting down Windows properly, then turn off the PC and restart it. "
                     "Ensure the MiniFlex main unit and chiller are powered on in the correct order "
                     "first. If the PC still does not start, contact the faculty member immediately."),
            RefusalClass::partial_with_escalation);
  EXPECT_EQ(classify("Δ There may be an anomaly. Immediately stop the operation and report it to "
                     "the faculty member."),
            RefusalClass::safety_warning);
  EXPECT_EQ(classify("A typical range is 10°–80°."), RefusalClass::full_answer);
  // Escalation as the first sentence has no preceding procedure.
  EXPECT_EQ(classify("Contact the instructor."), RefusalClass::full_answer);
}

TEST(ClassifyRefusal, ExplicitRefusalOnlyForPatternB) {
  const auto lex = Lexicon::defaults();
  for (const std::string raw : {std::string("The information is not found in the procedure manual."),
                                std::string(pattern_b(Language::en)) + " ",
                                std::string("マニュアルに記載がありません。")}) {
    const auto r = validate_response(raw, ResponseMode::retrieval, detect_language(raw));
    EXPECT_NE(classify_refusal(r, raw, lex), RefusalClass::explicit_refusal) << raw;
  }
}

TEST(Enums, StringRoundTrips) {
  for (auto c : kAllRefusalClasses) EXPECT_EQ(refusal_class_from_string(to_string(c)), c);
  EXPECT_EQ(response_mode_from_string("instructional"), ResponseMode::instructional);
  EXPECT_THROW(response_mode_from_string("chat"), Error);
  EXPECT_TRUE(is_hard_rule(rule::over_length));
  EXPECT_FALSE(is_hard_rule(rule::short_answer));
  EXPECT_FALSE(is_hard_rule(rule::above_soft_band));
}
