#pragma once

// Black-Scholes prices, greeks and implied volatility in discounted terms
// (zero riskless rate throughout).

#include <cmath>

#include "lsvcal/common.hpp"

namespace lsvcal {

inline double norm_pdf(double x) {
    constexpr double kInvSqrt2Pi = 0.39894228040143267794;
    return kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x * M_SQRT1_2); }

struct OptionSpec {
    double spot;
    double strike;
    double ttm;  // years
    bool is_call = true;
};

struct BsGreeks {
    double price;
    double delta;
    double vega;
};

double bs_price(const OptionSpec& opt, double vol);
BsGreeks bs_greeks(const OptionSpec& opt, double vol);

/// Call delta at arbitrary (spot, vol); the hot path for hedge integrals.
/// No validation: vol <= 0 or ttm <= 0 degenerate to the intrinsic delta.
inline double bs_delta_fast(double spot, double strike, double ttm, double vol,
                            bool is_call) {
    const double st = vol * std::sqrt(ttm);
    double d;
    if (st <= 0.0) {
        d = spot > strike ? 1.0 : 0.0;
    } else {
        d = norm_cdf(std::log(spot / strike) / st + 0.5 * st);
    }
    return is_call ? d : d - 1.0;
}

/// Inverts bs_price; bracketed bisection on [1e-9, 5] refined by Newton
/// steps that are rejected whenever they leave the bracket.
/// Throws IvOutOfBounds when price violates the no-arbitrage bounds.
double implied_vol(double price, const OptionSpec& opt);

}  // namespace lsvcal
