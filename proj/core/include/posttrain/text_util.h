#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace posttrain::text {

bool is_ascii_space(char c);

// Length in bytes of the UTF-8 sequence starting with lead byte `c`.
// Invalid lead bytes count as a single byte.
std::size_t utf8_length(unsigned char c);

// Decodes the code point at `pos`; advances `pos` past it.
char32_t next_code_point(std::string_view s, std::size_t& pos);

// Byte offset of the `index`-th code point (or s.size() when index is past
// the end).
std::size_t byte_offset_of_char(std::string_view s, std::size_t index);

std::string ascii_lower(std::string_view s);

// Simple one-to-one lowercase mapping for Latin-1, Latin Extended-A, Greek
// and Cyrillic capitals; other code points map to themselves.
char32_t simple_lower(char32_t cp);

// ASCII plus simple_lower; bytes of unchanged code points are copied as is.
std::string unicode_lower(std::string_view s);

void append_utf8(std::string& out, char32_t cp);

// Replaces CRLF and lone CR with LF.
std::string normalize_newlines(std::string_view s);

std::vector<std::string_view> split_whitespace(std::string_view s);

std::string read_file(const std::string& path);

// Collapses whitespace runs to one space and trims both ends.
std::string collapse_whitespace(std::string_view s);

}  // namespace posttrain::text
