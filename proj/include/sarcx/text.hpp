#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace sarcx::text {

// Version tag recorded alongside every metric report; bump when the
// tokenization rules below change.
inline constexpr const char* kMetricTokenizerVersion = "lower-punct/1";

// Unicode NFC normalization (ICU). Invalid UTF-8 bytes are replaced.
std::string nfc(const std::string& utf8);

// Full-string lowercase in the root locale (ICU).
std::string lower(const std::string& utf8);

// Split on ASCII whitespace runs; no case change.
std::vector<std::string> split_whitespace(std::string_view s);

// Lowercases, splits on whitespace, and separates punctuation runs into
// single-character tokens ("don't" -> don ' t). Used by the metrics module.
std::vector<std::string> metric_tokenize(const std::string& s);

std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ");

} // namespace sarcx::text
