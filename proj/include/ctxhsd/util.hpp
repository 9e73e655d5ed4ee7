#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ctxhsd {

std::string sha256_hex(std::string_view data);
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
// Writes through a temporary sibling and renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string to_lower_ascii(std::string_view s);
std::string_view trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
bool starts_with_ci(std::string_view s, std::string_view prefix);

// Word-level tokens: maximal runs of non-space characters.
std::vector<std::string> whitespace_tokens(std::string_view s);

// Lowercased alphanumeric runs (apostrophes kept inside words); used for
// dictionary matching where punctuation should not block a hit.
struct NormToken {
  std::string text;
  std::size_t begin;  // byte offset in source
  std::size_t end;
};
std::vector<NormToken> normalized_tokens(std::string_view s);

std::string base64_encode(std::string_view bytes);

// ISO-8601 UTC timestamp with seconds resolution.
std::string utc_timestamp();

// Formats a fraction as a percentage with one decimal, e.g. 0.0364 -> "3.6%".
std::string format_percent(double fraction, int decimals = 1);

}  // namespace ctxhsd
