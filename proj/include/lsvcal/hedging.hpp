#pragma once

// Hedge-based control variates: delta-hedge integrals recomputed from stored
// paths, the optimal coefficient and variance identity, and quadratic
// deep-hedging training.

#include <cstdint>
#include <span>
#include <vector>

#include "lsvcal/lsv_sim.hpp"

namespace lsvcal {

struct CvStats {
    double plain_mean = 0.0;
    double plain_var = 0.0;
    double hedged_mean = 0.0;
    double hedged_var = 0.0;
    double c_opt = 0.0;
    double corr = 0.0;
    bool degenerate = false;  // integral sample has zero variance
};

/// I_n = sum_k delta(t_k) * (S_{k+1} - S_k), delta evaluated left-point.
/// Requires a batch simulated with store_paths; mode must be a BS-delta
/// variant, and BsDeltaRunning needs the leverage model the paths were
/// generated under.
std::vector<double> hedge_integral_bs(const PathBatch& batch, const OptionSpec& opt,
                                      HedgeMode mode,
                                      const LeverageModel* model = nullptr);

/// Sample moments of (payoff, integral): c_opt = cov/var_I and the hedged
/// estimator mean(payoff - c_opt * I). hedged_var = (1 - corr^2) * plain_var
/// holds exactly on sample moments.
CvStats control_variate_stats(std::span<const double> payoffs,
                              std::span<const double> integrals);

struct DeepHedgeOptions {
    int iterations = 200;
    long batch_paths = 4096;
    double lr = 1e-3;
    int jobs = 1;
};

struct DeepHedgeResult {
    MlpParams net;
    double final_loss = 0.0;
    double best_loss = 0.0;
    std::vector<double> loss_history;
};

/// Hedge network with inputs (t, log S, alpha).
MlpSpec deep_hedge_spec(int width = 32, int hidden_layers = 2);

/// Minimizes E[(-C + market_price + (h . Z)_T)^2] by stochastic gradient on
/// fresh path batches; the gradient flows through the discretized integral.
/// Throws std::runtime_error when the loss turns non-finite.
DeepHedgeResult train_deep_hedge(const SabrParams& sabr, const LeverageModel& model,
                                 const OptionSpec& opt, double market_price,
                                 const MlpSpec& net_spec, std::uint64_t seed,
                                 const DeepHedgeOptions& topt);

}  // namespace lsvcal
