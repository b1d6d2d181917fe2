#pragma once

// Calibration of the per-maturity leverage networks: weighted objective with
// hedge control variates, modified (stop-gradient) pathwise gradient, the
// schedule/abort/adversarial training loop, SABR pre-calibration, robust
// (bid-ask) mode and high-accuracy model-IV evaluation.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lsvcal/hedging.hpp"
#include "lsvcal/lsv_sim.hpp"
#include "lsvcal/smile.hpp"

namespace lsvcal {

struct SchedulePoint {
    long step;
    long n_paths;
};

struct CalibConfig {
    double dt = 0.01;
    double tol = 0.0045;
    std::vector<SchedulePoint> schedule{{0, 400}, {500, 2000}, {1500, 10000}, {4000, 50000}};
    long first_check = 5000;
    long check_every = 1000;
    long max_steps = 12000;
    double lr = 1e-3;
    long eval_paths = 1000000;
    HedgeMode hedge = HedgeMode::BsDeltaRunning;
    bool adversarial = true;
    bool put_convention = true;  // puts for strikes > spot
    int net_width = 64;
    int net_hidden_layers = 4;
    long sabr_paths = 2000;
    long sabr_steps = 250;
    double sabr_lr = 0.05;
    int robust_m = 0;       // 0: standard calibration; >0: number of target smiles
    double robust_u = 0.01; // perturbation radius used by the robust CLI path
    int jobs = 1;

    void validate() const;
    long paths_at(long step) const;
    /// "paper", "desk" or "ci"; throws on unknown names.
    static CalibConfig preset(const std::string& name);
};

std::string config_to_json(const CalibConfig& c);
/// Fields present in the JSON override `base`; absent fields keep its values.
CalibConfig config_from_json(const std::string& text, const CalibConfig& base = {});

/// w_j = (1/vega_j) / sum_l (1/vega_l), vegas at the market IV.
std::vector<double> vega_weights(double spot, double maturity,
                                 std::span<const SmilePoint> slice);

/// Per-strike calibration instruments with the put convention applied:
/// call for K <= spot, put for K > spot with the target converted by parity.
struct SliceTargets {
    std::vector<OptionSpec> options;
    std::vector<double> target_price;
};
SliceTargets make_slice_targets(const SmileGrid& market, int slice,
                                bool put_convention);

struct ObjectiveValue {
    double loss = 0.0;
    std::vector<double> xbar;  // per-strike (1/N) sum_n X_j(omega_n)
};

/// f_hat = sum_j w_j * xbar_j^2 with X_j = payoff_j - I_j - target_j.
/// The batch must have been simulated with targets.options as its options.
ObjectiveValue calib_objective(const SliceTargets& targets,
                               std::span<const double> weights,
                               const PathBatch& batch);

/// Modified gradient G = D_x f~ (X_bar) . D_theta Q_bar: the outer derivative
/// is taken at the hedged averages, the inner pathwise derivative of the
/// payoffs only (hedge integrals under stop-gradient). Adds into grad_accum
/// (size = model parameter count of the active slice's net).
void calib_gradient(const SabrParams& sabr, const LeverageModel& model,
                    const SliceTargets& targets, std::span<const double> weights,
                    const ObjectiveValue& obj, const PathBatch& batch,
                    int active_slice, double* grad_accum, int jobs);

/// Per-strike sup over target sets m; the subgradient coefficient set picks
/// the attaining m for every strike.
struct RobustObjectiveValue {
    double loss = 0.0;
    std::vector<double> xbar;   // X_bar at the attaining target set, per strike
    std::vector<int> argmax_m;
};
RobustObjectiveValue robust_objective(const SliceTargets& base,
                                      std::span<const std::vector<double>> target_sets,
                                      std::span<const double> weights,
                                      const PathBatch& batch);

/// Product-form estimator over a 2N-path batch (pairs n and n+N):
/// f_hat = sum_j w_j (1/N) sum_n Q_j(omega_n) Q_j(omega_{n+N}).
double product_form_objective(const SliceTargets& targets,
                              std::span<const double> weights,
                              const PathBatch& batch);
void product_form_gradient(const SabrParams& sabr, const LeverageModel& model,
                           const SliceTargets& targets, std::span<const double> weights,
                           const PathBatch& batch, int active_slice,
                           double* grad_accum, int jobs);

/// SABR fit (L == 1) to the first-maturity slice by MC gradient descent with
/// running-delta hedging and forward tangents through nu = exp(u),
/// rho = tanh(v), alpha0 = exp(w).
SabrParams calibrate_sabr_init(const SmileGrid& market, const CalibConfig& cfg,
                               std::uint64_t seed);

struct EvalOptions {
    double dt = 0.01;
    HedgeMode hedge = HedgeMode::BsDeltaRunning;
    int jobs = 1;
    bool put_convention = true;
};

/// CV-priced (c = c_opt) model smiles inverted to IVs; std_err by the
/// delta method through the Black-Scholes vega. One simulation to the last
/// maturity covers every slice.
SmileGrid eval_model_ivs(const LeverageModel& model, const SabrParams& sabr,
                         double spot, std::span<const double> maturities,
                         std::span<const std::vector<double>> strikes,
                         long n_paths, std::uint64_t seed, const EvalOptions& opt);

struct SliceReport {
    double maturity = 0.0;
    long steps = 0;
    double wall_time_s = 0.0;
    double final_max_err = 0.0;
    double final_mean_err = 0.0;
    bool skipped = false;
    std::string skip_reason;
    std::vector<std::vector<double>> weight_history;
    std::vector<double> strikes, iv_market, iv_model, abs_error, std_err;
    std::vector<bool> point_skipped;
};

struct CalibReport {
    SabrParams sabr{0, 0, 1, 1};
    std::vector<SliceReport> slices;
    double total_wall_time_s = 0.0;
};

/// Algorithm-1/2 loop for one maturity; mutates model.nets[slice] and
/// returns the report entry. Target sets beyond the first enable robust
/// mode. Never touches earlier slices.
SliceReport calibrate_slice(int slice, const SmileGrid& market,
                            LeverageModel& model, const SabrParams& sabr,
                            const CalibConfig& cfg, std::uint64_t seed,
                            std::span<const SmileGrid> extra_targets = {});

/// SABR init, then slices in maturity order.
CalibReport calibrate_surface(const SmileGrid& market, LeverageModel& model,
                              const CalibConfig& cfg, std::uint64_t seed,
                              std::span<const SmileGrid> extra_targets = {});

std::string report_to_json(const CalibReport& r, const CalibConfig& cfg,
                           const std::vector<std::pair<std::string, std::uint64_t>>&
                               artifact_hashes = {});

}  // namespace lsvcal
