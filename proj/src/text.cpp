#include "sarcx/text.hpp"

#include <cctype>

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/unistr.h>

#include "sarcx/error.hpp"

namespace sarcx::text {

std::string nfc(const std::string& utf8) {
    UErrorCode status = U_ZERO_ERROR;
    const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
    if (U_FAILURE(status)) {
        throw UsageError("ICU NFC normalizer unavailable");
    }
    icu::UnicodeString input = icu::UnicodeString::fromUTF8(utf8);
    icu::UnicodeString normalized = norm->normalize(input, status);
    if (U_FAILURE(status)) {
        throw DataError("NFC normalization failed");
    }
    std::string out;
    normalized.toUTF8String(out);
    return out;
}

std::string lower(const std::string& utf8) {
    icu::UnicodeString s = icu::UnicodeString::fromUTF8(utf8);
    s.toLower(icu::Locale::getRoot());
    std::string out;
    s.toUTF8String(out);
    return out;
}

std::vector<std::string> split_whitespace(std::string_view s) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) i++;
        std::size_t start = i;
        while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) i++;
        if (i > start) tokens.emplace_back(s.substr(start, i - start));
    }
    return tokens;
}

namespace {

bool is_word_byte(unsigned char c) {
    // Multi-byte UTF-8 sequences count as word content.
    return std::isalnum(c) || c >= 0x80;
}

} // namespace

std::vector<std::string> metric_tokenize(const std::string& s) {
    const std::string lowered = lower(s);
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < lowered.size()) {
        const unsigned char c = static_cast<unsigned char>(lowered[i]);
        if (std::isspace(c)) {
            i++;
            continue;
        }
        if (is_word_byte(c)) {
            std::size_t start = i;
            while (i < lowered.size() && is_word_byte(static_cast<unsigned char>(lowered[i]))) i++;
            tokens.emplace_back(lowered.substr(start, i - start));
        } else {
            tokens.emplace_back(1, lowered[i]);
            i++;
        }
    }
    return tokens;
}

std::string join(const std::vector<std::string>& tokens, std::string_view sep) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); i++) {
        if (i > 0) out += sep;
        out += tokens[i];
    }
    return out;
}

} // namespace sarcx::text
