#include "doctest.h"

#include <cmath>

#include "lsvcal/bs.hpp"
#include "lsvcal/rng.hpp"

using namespace lsvcal;

namespace {

// Independent oracle: E[(S_T - K)^+] by Simpson quadrature against the
// lognormal density of X = log S_T ~ N(-sigma^2 T/2, sigma^2 T).
double quadrature_call(double spot, double strike, double ttm, double vol) {
    const double m = std::log(spot) - 0.5 * vol * vol * ttm;
    const double s = vol * std::sqrt(ttm);
    const double lo = m - 12.0 * s, hi = m + 12.0 * s;
    const int n = 20000;  // even
    const double h = (hi - lo) / n;
    auto f = [&](double x) {
        const double payoff = std::max(std::exp(x) - strike, 0.0);
        const double z = (x - m) / s;
        return payoff * std::exp(-0.5 * z * z) / (s * std::sqrt(2.0 * M_PI));
    };
    double acc = f(lo) + f(hi);
    for (int i = 1; i < n; ++i) acc += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

}  // namespace

TEST_CASE("bs_price matches frozen value and quadrature oracle") {
    const OptionSpec atm{1.0, 1.0, 1.0, true};
    const double p = bs_price(atm, 0.2);
    CHECK(p == doctest::Approx(0.0796557).epsilon(1e-5));
    CHECK(p == doctest::Approx(quadrature_call(1, 1, 1, 0.2)).epsilon(1e-8));
    CHECK(bs_price({1.0, 1.3, 0.7, true}, 0.45) ==
          doctest::Approx(quadrature_call(1, 1.3, 0.7, 0.45)).epsilon(1e-8));
}

TEST_CASE("bs_price degenerate cases") {
    CHECK(bs_price({1.0, 0.8, 1.0, true}, 0.0) == doctest::Approx(0.2));
    CHECK(bs_price({1.0, 1.0, 1e-12, true}, 0.2) == doctest::Approx(0.0).epsilon(1e-6));
    // put via parity at zero rate
    const double c = bs_price({1.0, 1.1, 0.5, true}, 0.3);
    const double pt = bs_price({1.0, 1.1, 0.5, false}, 0.3);
    CHECK(pt - c == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("bs_price input validation") {
    CHECK_THROWS_AS(bs_price({-1.0, 1.0, 1.0, true}, 0.2), InvalidInput);
    CHECK_THROWS_AS(bs_price({1.0, 0.0, 1.0, true}, 0.2), InvalidInput);
    CHECK_THROWS_AS(bs_price({1.0, 1.0, -0.5, true}, 0.2), InvalidInput);
    CHECK_THROWS_AS(bs_price({1.0, 1.0, 1.0, true}, -0.2), InvalidInput);
    CHECK_THROWS_AS(bs_price({1.0, 1.0, 1.0, true}, std::nan("")), InvalidInput);
}

TEST_CASE("bs_greeks frozen values and limits") {
    const auto g = bs_greeks({1.0, 1.0, 1.0, true}, 0.2);
    CHECK(g.delta == doctest::Approx(0.539828).epsilon(1e-5));
    CHECK(g.vega == doctest::Approx(0.396953).epsilon(1e-5));
    CHECK(g.price == doctest::Approx(bs_price({1.0, 1.0, 1.0, true}, 0.2)));
    CHECK(bs_greeks({1.0, 1e-6, 1.0, true}, 0.2).delta == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("delta matches finite differences of the price") {
    const double h = 1e-5;
    for (double vol : {0.1, 0.3, 0.8})
        for (double k : {0.7, 1.0, 1.4}) {
            const auto g = bs_greeks({1.0, k, 0.5, true}, vol);
            const double fd = (bs_price({1.0 + h, k, 0.5, true}, vol) -
                               bs_price({1.0 - h, k, 0.5, true}, vol)) /
                              (2.0 * h);
            CHECK(g.delta == doctest::Approx(fd).epsilon(1e-6));
            const double fv = (bs_price({1.0, k, 0.5, true}, vol + h) -
                               bs_price({1.0, k, 0.5, true}, vol - h)) /
                              (2.0 * h);
            CHECK(g.vega == doctest::Approx(fv).epsilon(1e-6));
        }
}

TEST_CASE("bs_price monotone in vol, delta monotone in spot") {
    double prev = bs_price({1.0, 1.1, 0.5, true}, 0.01);
    for (double v = 0.05; v <= 2.0; v += 0.05) {
        const double p = bs_price({1.0, 1.1, 0.5, true}, v);
        CHECK(p > prev);
        prev = p;
    }
    double dprev = bs_greeks({0.5, 1.0, 0.5, true}, 0.3).delta;
    for (double s = 0.6; s <= 2.0; s += 0.1) {
        const double d = bs_greeks({s, 1.0, 0.5, true}, 0.3).delta;
        CHECK(d > dprev);
        dprev = d;
    }
}

TEST_CASE("implied vol round-trip over the full grid") {
    SeqRng rng(42);
    for (int i = 0; i < 300; ++i) {
        const double sigma = rng.uniform(0.01, 3.0);
        const double k = rng.uniform(0.5, 2.0);
        const double t = rng.uniform(0.05, 2.0);
        const OptionSpec opt{1.0, k, t, true};
        const double price = bs_price(opt, sigma);
        if (price <= std::max(1.0 - k, 0.0) + 1e-300) continue;  // at the bound
        // a 1e-8 vol error must be resolvable in the double holding the
        // price, else the inversion is information-limited
        if (1e-8 * bs_greeks(opt, sigma).vega < 16.0 * 2.3e-16 * price) continue;
        const double iv = implied_vol(price, opt);
        CHECK(std::abs(iv - sigma) <= 1e-8);
    }
}

TEST_CASE("implied vol residual and error cases") {
    const OptionSpec opt{1.0, 1.2, 0.5, true};
    const double iv = implied_vol(0.02, opt);
    CHECK(std::abs(bs_price(opt, iv) - 0.02) <= 1e-12);
    // below intrinsic / above spot violate no-arbitrage bounds
    CHECK_THROWS_AS(implied_vol(-0.01, {1.0, 1.0, 1.0, true}), IvOutOfBounds);
    CHECK_THROWS_AS(implied_vol(0.15, {1.0, 0.8, 1.0, true}), IvOutOfBounds);
    CHECK_THROWS_AS(implied_vol(1.01, {1.0, 1.0, 1.0, true}), IvOutOfBounds);
}
