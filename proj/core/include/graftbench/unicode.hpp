#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace graftbench {

/// Decodes UTF-8. Throws ParseError with the byte offset of the first
/// invalid sequence (overlong encodings, surrogates and out-of-range
/// codepoints are rejected).
std::vector<char32_t> utf8_decode(std::string_view s);

/// True iff s is valid UTF-8; on failure *bad_offset (if non-null) gets the
/// byte offset of the first invalid sequence.
bool utf8_valid(std::string_view s, std::size_t* bad_offset = nullptr);

void utf8_append(char32_t cp, std::string& out);
std::string utf8_encode(const std::vector<char32_t>& cps);

/// Canonical composition (NFC). Input must be valid UTF-8.
std::string nfc(std::string_view s);

char32_t to_lower_simple(char32_t cp);
char32_t to_upper_simple(char32_t cp);

/// Per-codepoint simple lowercase of a UTF-8 string (case-fold for lexicon
/// lookup).
std::string fold_case_simple(std::string_view s);

/// True iff the first codepoint of s has an uppercase form equal to itself
/// and a distinct lowercase form (i.e. it is cased and uppercase).
bool starts_uppercase(std::string_view s);

/// Uppercases the first codepoint of a UTF-8 string, leaving the rest.
std::string capitalize_first(std::string_view s);

}  // namespace graftbench
