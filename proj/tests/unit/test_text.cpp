#include <gtest/gtest.h>

#include "lastmile/text.hpp"

namespace t = lastmile::text;

TEST(Utf8, RoundTripsMixedScalars) {
  const std::string s = "A\xC3\xA9\xE3\x81\x82\xF0\x9F\x94\x97";  // A é あ 🔗
  const auto cps = t::decode_utf8(s);
  ASSERT_EQ(cps.size(), 4u);
  EXPECT_EQ(cps[0], U'A');
  EXPECT_EQ(cps[1], U'é');
  EXPECT_EQ(cps[2], U'あ');
  EXPECT_EQ(cps[3], U'\U0001F517');
  std::string back;
  for (auto cp : cps) back += t::encode_utf8(cp);
  EXPECT_EQ(back, s);
}

TEST(Utf8, InvalidBytesBecomeReplacement) {
  EXPECT_FALSE(t::is_valid_utf8("\xC3"));
  EXPECT_FALSE(t::is_valid_utf8("\xFF\xFE"));
  EXPECT_TRUE(t::is_valid_utf8("plain"));
  const auto cps = t::decode_utf8("a\xFF" "b");
  ASSERT_EQ(cps.size(), 3u);
  EXPECT_EQ(cps[1], U'�');
}

TEST(Utf8, JapaneseClasses) {
  EXPECT_TRUE(t::is_hiragana(U'あ'));
  EXPECT_TRUE(t::is_katakana(U'マ'));
  EXPECT_TRUE(t::is_cjk_ideograph(U'教'));
  EXPECT_FALSE(t::is_japanese_scalar(U'a'));
  EXPECT_FALSE(t::is_japanese_scalar(U'。'));  // ideographic full stop
}

TEST(Text, TrimAndLower) {
  EXPECT_EQ(t::trim("  a b \n"), "a b");
  EXPECT_EQ(t::trim(" \t "), "");
  EXPECT_EQ(t::ascii_lower("AbC-\xC3\x89"), "abc-\xC3\x89");
  EXPECT_TRUE(t::starts_with("## 1-1", "##"));
}

TEST(Text, SplitLinesDropsCarriageReturns) {
  const auto lines = t::split_lines("a\r\nb\n\nc");
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "a");
  EXPECT_EQ(lines[2], "");
  EXPECT_EQ(lines[3], "c");
}

TEST(Text, SplitSentences) {
  auto s = t::split_sentences("Turn it off. Restart it! Done? v1.5 stays");
  ASSERT_EQ(s.size(), 4u);
  EXPECT_EQ(s[0], "Turn it off.");
  EXPECT_EQ(s[3], "v1.5 stays");

  s = t::split_sentences("\xE6\x95\x99\xE5\x93\xA1\xE3\x80\x82\xE7\xA2\xBA\xE8\xAA\x8D");  // 教員。確認
  EXPECT_EQ(s.size(), 2u);
}
