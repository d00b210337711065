#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace binalign {

// Splits a UTF-8 string into codepoint-sized chunks. Bytes that do not form
// a valid lead sequence are passed through one at a time.
std::vector<std::string> utf8_chars(std::string_view s);

// ASCII whitespace split; never returns empty tokens.
std::vector<std::string> split_whitespace(std::string_view s);

bool is_ascii_space(char c);

// Reads a whole file; throws std::runtime_error on failure.
std::string read_file(const std::string& path);

// Splits file content into lines. A trailing newline does not produce an
// extra empty line. Handles LF and CRLF.
std::vector<std::string> split_lines(std::string_view content);

// Writes content to a temp file in the target directory, then renames it
// over `path` so readers never observe a partial file.
void write_file_atomic(const std::string& path, std::string_view content);

}  // namespace binalign
