#pragma once

// Parametric local-volatility family used as ground truth, its SDE
// simulation, and synthetic market generation.

#include <cstdint>
#include <string>
#include <vector>

#include "lsvcal/smile.hpp"

namespace lsvcal {

/// Mixture parameters xi = (p1, p2, sigma0, sigma1, sigma2), p0 derived.
/// p0 > 0 is not required (the family takes absolute values).
struct XiParams {
    double p1, p2;
    double sigma0, sigma1, sigma2;

    double p0() const { return 1.0 - p1 - p2; }
    void validate() const;
};

/// Shape constants of the local-vol family (defaults are the working set).
struct FixedShape {
    double gamma1 = 1.1;
    double gamma2 = 20.0;
    double lambda1 = 10.0;
    double lambda2 = 10.0;
    double beta1 = 0.005;
    double beta2 = 0.001;
    double kappa = 0.5;
};

/// Squared local volatility a^2(t, x) at time t > 0 and log-moneyness x.
/// Bounded in [0, 0.5] by construction. Callers substitute t = dt at t = 0.
double local_vol_sq(const XiParams& xi, const FixedShape& shape, double t, double x);

/// Uniform draw from the sampling intervals
/// p1~[0.4,0.5], p2~[0.4,0.7], s0~[0.5,1.7], s1~[0.2,0.4], s2~[0.5,1.7].
XiParams sample_xi(std::uint64_t seed);

/// m copies of xi with independent U[-u, u] noise per component.
std::vector<XiParams> perturb_xi(const XiParams& xi, double u, int m,
                                 std::uint64_t seed);

std::string xi_to_json(const XiParams& xi);
XiParams xi_from_json(const std::string& text);

struct GenOptions {
    double dt = 0.01;
    int jobs = 1;
    FixedShape shape;
    /// Testing hook: > 0 forces a constant volatility (pure Black-Scholes).
    double const_vol_override = -1.0;
};

struct SyntheticMarket {
    SmileGrid grid;
    /// Per maturity: Monte Carlo mean of exp(X_T) (martingale diagnostic)
    /// and its standard error.
    std::vector<double> mean_terminal_spot;
    std::vector<double> mean_terminal_spot_se;
};

/// Euler log-price simulation of the local-vol SDE; per-option price via the
/// delta-hedged control-variate estimator at optimal coefficient. One path
/// set is reused for all strikes and maturities. Options whose price cannot
/// be inverted to an implied vol are flagged skipped, never a failure.
SyntheticMarket gen_synthetic_market(const XiParams& xi, const GridSpec& grid,
                                     long n_paths, std::uint64_t seed,
                                     const GenOptions& opt = {});

}  // namespace lsvcal
