#include <doctest.h>

#include <string>

#include "graftbench/error.hpp"
#include "graftbench/unicode.hpp"

#include "nfc_oracle.inc"

using namespace graftbench;

TEST_SUITE("unicode") {

TEST_CASE("utf8 round trip") {
    const std::string s = "aé€\U0001F600";
    CHECK(utf8_encode(utf8_decode(s)) == s);
    CHECK(utf8_decode(s).size() == 4);
}

TEST_CASE("utf8 rejects malformed input") {
    auto offset_of = [](std::string_view s) -> long long {
        try {
            (void)utf8_decode(s);
        } catch (const ParseError& e) {
            return e.byte_offset();
        }
        return -1;
    };
    CHECK(offset_of("\x80") == 0);              // stray continuation
    CHECK(offset_of("a\xc3") == 1);             // truncated sequence
    CHECK(offset_of("ab\xc0\xaf") == 2);        // overlong slash
    CHECK(offset_of("\xed\xa0\x80") == 0);      // surrogate
    CHECK(offset_of("\xf5\x80\x80\x80") == 0);  // above U+10FFFF
    CHECK(offset_of("ok") == -1);
    CHECK_FALSE(utf8_valid("\xff"));
    CHECK(utf8_valid("éok"));
}

TEST_CASE("nfc matches the reference implementation") {
    for (const auto& [input, expected] : kNfcOracle) {
        CAPTURE(input);
        CHECK(nfc(input) == expected);
    }
}

TEST_CASE("nfc is idempotent on the oracle set") {
    for (const auto& [input, expected] : kNfcOracle) {
        (void)input;
        CHECK(nfc(expected) == expected);
    }
}

TEST_CASE("simple lowercasing matches the reference") {
    for (const auto& [input, expected] : kLowerOracle) {
        CAPTURE(input);
        CHECK(fold_case_simple(input) == expected);
    }
    CHECK(to_lower_simple(U'A') == U'a');
    CHECK(to_upper_simple(U'a') == U'A');
    CHECK(to_lower_simple(U'1') == U'1');
}

TEST_CASE("case fold and capitalization helpers") {
    CHECK(fold_case_simple("HeLLo") == "hello");
    CHECK(fold_case_simple("État") == "état");
    CHECK(starts_uppercase("Bonjour"));
    CHECK_FALSE(starts_uppercase("bonjour"));
    CHECK_FALSE(starts_uppercase(""));
    CHECK_FALSE(starts_uppercase("123"));
    CHECK(capitalize_first("bonjour") == "Bonjour");
    CHECK(capitalize_first("état") == "État");
    CHECK(capitalize_first("") == "");
}

}  // TEST_SUITE
