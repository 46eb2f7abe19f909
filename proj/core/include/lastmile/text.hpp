#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

// UTF-8 and line/sentence helpers shared by the parser, the tokenizers and
// the output validator. All functions treat invalid UTF-8 bytes as U+FFFD.
namespace lastmile::text {

std::vector<char32_t> decode_utf8(std::string_view s);
std::string encode_utf8(char32_t cp);
bool is_valid_utf8(std::string_view s);

bool is_hiragana(char32_t cp);
bool is_katakana(char32_t cp);
bool is_cjk_ideograph(char32_t cp);
inline bool is_japanese_scalar(char32_t cp) {
  return is_hiragana(cp) || is_katakana(cp) || is_cjk_ideograph(cp);
}
bool is_unicode_space(char32_t cp);

// Letter or digit for word counting: ASCII alnum, or a non-ASCII scalar
// outside the punctuation/symbol/emoji blocks.
bool is_word_scalar(char32_t cp);

std::string_view trim(std::string_view s);
std::string ascii_lower(std::string_view s);
bool starts_with(std::string_view s, std::string_view prefix);

// Splits on '\n', dropping a trailing '\r' from each line.
std::vector<std::string_view> split_lines(std::string_view s);

// Sentence boundaries: '.', '!', '?' followed by whitespace or end of
// text, the ideographic full stop, and line breaks. Empty pieces dropped.
std::vector<std::string> split_sentences(std::string_view s);

}  // namespace lastmile::text
