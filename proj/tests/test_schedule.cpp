#include <cmath>
#include <stdexcept>

#include <doctest.h>

#include "uad/schedule.hpp"

using uad::make_linear_schedule;

TEST_CASE("linear schedule: single step")  // [PAPER] degenerate T=1 case
{
    auto s = make_linear_schedule(1, 0.5, 0.5);
    REQUIRE(s.steps == 1);
    CHECK(s.beta(1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(s.alpha_cum(1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("linear schedule: two-step cumulative product")  // [DERIVED] 0.9*0.7 = 0.63
{
    auto s = make_linear_schedule(2, 0.1, 0.3);
    CHECK(s.beta(1) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(s.beta(2) == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(s.alpha_cum(1) == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(s.alpha_cum(2) == doctest::Approx(0.63).epsilon(1e-12));
}

TEST_CASE("linear schedule: default 1000-step range")  // [PAPER] beta 1e-4 -> 0.02
{
    auto s = make_linear_schedule(1000, 1e-4, 0.02);
    CHECK(s.beta(1) == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(s.beta(1000) == doctest::Approx(0.02).epsilon(1e-12));
    // By the end of the chain almost all signal is destroyed.
    CHECK(s.alpha_cum(1000) < 0.01);

    // [DERIVED] oracle: recompute the cumulative product in log space,
    // independently of the implementation's running product.
    double log_prod = 0.0;
    for (int t = 1; t <= 1000; ++t) {
        double beta = 1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0;
        log_prod += std::log1p(-beta);
    }
    CHECK(s.alpha_cum(1000) == doctest::Approx(std::exp(log_prod)).epsilon(1e-10));
    CHECK(s.alpha_cum(500) > s.alpha_cum(501));  // strictly decreasing
}

TEST_CASE("linear schedule: alpha_cum is strictly decreasing and in (0,1)")
{
    auto s = make_linear_schedule(50, 0.01, 0.3);
    double prev = 1.0;
    for (int t = 1; t <= 50; ++t) {
        double a = s.alpha_cum(t);
        CHECK(a > 0.0);
        CHECK(a < 1.0);
        CHECK(a < prev);
        prev = a;
    }
}

TEST_CASE("linear schedule: argument validation")
{
    CHECK_THROWS_AS(make_linear_schedule(0, 0.1, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(-5, 0.1, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.1, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(10, -0.1, 0.2), std::invalid_argument);
    CHECK_THROWS_AS(make_linear_schedule(10, 0.3, 0.1), std::invalid_argument);
}

TEST_CASE("linear schedule: t bounds checking")
{
    auto s = make_linear_schedule(10, 0.01, 0.1);
    CHECK_THROWS_AS(s.beta(0), std::out_of_range);
    CHECK_THROWS_AS(s.beta(11), std::out_of_range);
    CHECK_THROWS_AS(s.alpha_cum(0), std::out_of_range);
    CHECK_THROWS_AS(s.alpha_cum(11), std::out_of_range);
    CHECK(s.valid_t(1));
    CHECK(s.valid_t(10));
    CHECK_FALSE(s.valid_t(0));
    CHECK_FALSE(s.valid_t(11));
}
