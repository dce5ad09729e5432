#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace medco::text {

std::string_view trim(std::string_view s);
std::string trim_copy(std::string_view s);

/// ASCII-only lowercase; multi-byte UTF-8 sequences pass through untouched.
std::string ascii_lower(std::string_view s);

bool starts_with(std::string_view s, std::string_view prefix);
bool contains(std::string_view haystack, std::string_view needle);

/// Removes all ASCII and ideographic whitespace.
std::string strip_whitespace(std::string_view s);

std::vector<std::string> split(std::string_view s, char delim);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Decodes UTF-8 into code points. Invalid bytes decode as U+FFFD.
std::vector<char32_t> utf8_decode(std::string_view s);
std::string utf8_encode(char32_t cp);

bool is_cjk(char32_t cp);

/// 64-bit FNV-1a, optionally seeded by folding the seed into the offset basis.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0);
std::string hex64(std::uint64_t v);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace medco::text
