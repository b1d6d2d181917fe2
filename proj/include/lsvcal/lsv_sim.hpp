#pragma once

// SABR-LSV model state, neural leverage function and Euler Monte Carlo in
// log-price coordinates, with inline hedge-integral accumulation and an
// adjoint pass for pathwise parameter gradients.

#include <cstdint>
#include <string>
#include <vector>

#include "lsvcal/bs.hpp"
#include "lsvcal/mlp.hpp"

namespace lsvcal {

struct SabrParams {
    double nu;
    double rho;
    double alpha0;
    double s0 = 1.0;

    void validate() const;
};

/// L(t, x, theta) = 1 + F^i(x, theta_i) for t in [T_{i-1}, T_i), input is
/// the log price. Piecewise constant in t across maturity intervals.
struct LeverageModel {
    std::vector<double> maturities;  // T_1 < ... < T_n
    MlpSpec spec;
    std::vector<MlpParams> nets;  // theta_1..theta_n

    void validate() const;
    /// Active interval for t (right-open convention); throws for t >= T_n.
    int interval_of(double t) const;
    double eval(double t, double x) const;

    /// Per-net files <dir>/net_<i>.{bin,json} plus <dir>/model.json with the
    /// maturity metadata.
    void save(const std::string& dir) const;
    static LeverageModel load(const std::string& dir);
};

/// Leverage model with every network output-zeroed: L == 1 (pure SABR).
LeverageModel make_leverage_model(const MlpSpec& spec, std::vector<double> maturities,
                                  std::uint64_t seed, double output_scale = 0.01);

Tape::Id leverage_eval_taped(Tape& tape, const LeverageModel& m, int slice,
                             std::span<const Tape::Id> params, Tape::Id x);

enum class HedgeMode { None, BsDeltaRunning, BsDeltaAlpha, Neural };

struct SimOptions {
    double dt = 0.01;
    HedgeMode hedge = HedgeMode::BsDeltaRunning;
    /// Options whose hedge integrals are accumulated in-line. ttm is the
    /// absolute maturity (time 0 start). Their maturities are recorded
    /// automatically.
    std::vector<OptionSpec> options;
    std::vector<double> record_maturities;
    /// Keep (x, alpha, dW) per step so a gradient pass can run afterwards.
    bool store_paths = false;
    int jobs = 1;
    bool clamp_leverage = false;
    double clamp_min = 0.0;
    /// Neural hedge position h(t, x, alpha); requires options.size() == 1.
    const MlpParams* neural_hedge = nullptr;
};

struct PathBatch {
    long n_paths = 0;
    long n_steps = 0;
    double dt = 0.0;
    double horizon = 0.0;
    std::vector<double> record_maturities;
    std::vector<std::vector<double>> terminal_x;       // [record][path]
    std::vector<OptionSpec> options;
    std::vector<std::vector<double>> hedge_integrals;  // [option][path]
    // stored trajectories (store_paths): index k * n_paths + path
    std::vector<double> xs, alphas, dws;

    const std::vector<double>& terminal_at(double maturity) const;
};

/// Euler step in X, exact log-normal step in alpha; correlated shocks
/// zB = rho*zW + sqrt(1-rho^2)*zPerp. Per-path counter-based streams keyed
/// by (seed, path); results do not depend on the worker count.
PathBatch simulate_lsv(const SabrParams& sabr, const LeverageModel& model,
                       double horizon, long n_paths, std::uint64_t seed,
                       const SimOptions& opt);

/// Adjoint sweep over a stored batch: adds
///   sum_paths terminal_coef[n] * d X_T(omega_n) / d theta_active
/// into grad_accum (length = model.nets[active_slice].data.size()).
/// Hedge integrals never contribute (stop-gradient).
void accumulate_pathwise_gradient(const SabrParams& sabr, const LeverageModel& model,
                                  const PathBatch& batch,
                                  std::span<const double> terminal_coef,
                                  int active_slice, double* grad_accum, int jobs);

}  // namespace lsvcal
