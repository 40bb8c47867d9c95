#pragma once

// Small string, number-formatting and file helpers shared across modules.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace avguard::text {

std::string ascii_lower(std::string_view s);
std::string_view trim(std::string_view s);
bool is_word_byte(unsigned char c) noexcept;

/// Whole-word occurrences of `term` in `haystack` as [begin, end) pairs.
/// `haystack` is `text` or its case-folded copy; word boundaries are checked
/// against `text` only where the term itself starts/ends with a word byte.
std::vector<std::pair<std::size_t, std::size_t>> keyword_spans(std::string_view text, std::string_view haystack,
                                                               std::string_view term);

/// Shortest decimal text that reads back to exactly `value`.
std::string shortest_double(double value);

/// Fixed-point rendering with half-away-from-zero rounding at `decimals`.
std::string fixed(double value, int decimals);

/// Fraction in [0,1] rendered as a one-decimal percentage, e.g. 0.8876 -> "88.8%".
std::string percent1(double fraction);

std::uint64_t fnv1a64(std::string_view data) noexcept;
std::string hex64(std::uint64_t value);
std::string sha256_hex(std::string_view data);

/// Ordering where digit runs compare numerically ("q2" < "q10").
bool natural_less(std::string_view a, std::string_view b);

/// UTC timestamp with millisecond precision, e.g. 2024-05-01T12:00:00.123Z.
std::string utc_timestamp_now();

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace avguard::text
