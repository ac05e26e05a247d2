#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ragtutor {

// UTF-8 helpers. Invalid bytes decode to U+FFFD so offsets stay defined.
std::u32string utf8_decode(std::string_view text);
std::string utf8_encode(std::u32string_view text);

/// Byte offsets of every code point start, plus a final entry equal to text.size().
std::vector<std::size_t> codepoint_offsets(std::string_view text);

std::string_view trim(std::string_view text);
bool is_blank(std::string_view text);
std::string to_lower_ascii(std::string_view text);
bool is_unicode_space(char32_t c);

/// Lowercased runs of ASCII alphanumerics; everything else separates tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Splits on [.?!] followed by whitespace. Fragments are trimmed; empty ones dropped.
std::vector<std::string> split_sentences(std::string_view text);

std::uint64_t fnv1a64(std::string_view bytes);
std::string sha256_hex(std::string_view bytes);

std::int64_t now_millis();

/// Random 64-bit hex id with a readable prefix, e.g. "quiz-3f9c...".
std::string make_id(std::string_view prefix);

}  // namespace ragtutor
