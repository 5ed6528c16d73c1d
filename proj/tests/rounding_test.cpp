#include <doctest.h>

#include "graftbench/rounding.hpp"

using namespace graftbench;

TEST_SUITE("rounding") {

TEST_CASE("half up at one decimal") {
    CHECK(round_half_up_1dp(0.25) == doctest::Approx(0.3));
    CHECK(round_half_up_1dp(0.35) == doctest::Approx(0.4));
    CHECK(round_half_up_1dp(0.34) == doctest::Approx(0.3));
    CHECK(round_half_up_1dp(2.0) == doctest::Approx(2.0));
    CHECK(round_half_up_1dp(112.05) == doctest::Approx(112.1));
}

TEST_CASE("half even at one decimal") {
    CHECK(round_half_even_1dp(0.25) == doctest::Approx(0.2));
    CHECK(round_half_even_1dp(0.35) == doctest::Approx(0.4));
    CHECK(round_half_even_1dp(0.45) == doctest::Approx(0.4));
    CHECK(round_half_even_1dp(68.44) == doctest::Approx(68.4));
    CHECK(round_half_even_1dp(68.46) == doctest::Approx(68.5));
}

TEST_CASE("one decimal formatting") {
    CHECK(format_1dp(68.4) == "68.4");
    CHECK(format_1dp(0.0) == "0.0");
    CHECK(format_1dp(220.0) == "220.0");
    CHECK(format_1dp(-3.25) == "-3.2");  // printf ties to even
}

}  // TEST_SUITE
