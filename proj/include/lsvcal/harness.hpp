#pragma once

// End-to-end statistical study (sample xi -> synthetic market -> full
// calibration -> per-strike errors), aggregation, and the extrapolation
// report on a widened strike grid.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "lsvcal/calibrate.hpp"
#include "lsvcal/ground_truth.hpp"

namespace lsvcal {

struct StatTestOptions {
    int m_runs = 5;
    CalibConfig calib;
    GridSpec grid;
    long gen_paths = 1000000;
    double perturb_u = 0.01;  // robust mode only (calib.robust_m > 1)
    int jobs = 1;
};

struct RunErrors {
    int run_id = 0;
    bool skipped = false;
    std::string skip_reason;
    double wall_time_s = 0.0;
    XiParams xi{};
    // parallel arrays, one entry per (maturity, strike) cell
    std::vector<int> maturity_idx, strike_idx;
    std::vector<double> strike, iv_market, iv_model, abs_error;
};

/// One study sample, fully determined by (master seed, run index) through
/// the documented seed-splitting rule; safe to call in isolation to replay
/// any run from a larger study.
RunErrors run_single_stat(int run_id, std::uint64_t master_seed,
                          const StatTestOptions& opt);

struct StatCell {
    int maturity_idx = 0;
    int strike_idx = 0;
    double strike = 0.0;
    double mean_abs = 0.0;
    double q15 = 0.0, q30 = 0.0, q70 = 0.0, q95 = 0.0;
    long count = 0;
};

struct StatSummary {
    int n_runs = 0;
    int n_skipped = 0;
    std::vector<std::string> skip_reasons;
    std::vector<double> run_wall_times_s;
    std::vector<StatCell> cells;
};

StatSummary summarize_runs(const std::vector<RunErrors>& runs);

/// Runs the full study, writes <out_dir>/errors.csv
/// (run_id,maturity_idx,strike_idx,strike,iv_market,iv_model,abs_error) and
/// <out_dir>/summary.json, and returns the summary. Individual failures are
/// recorded as skips and never abort the study.
StatSummary run_stat_test(std::uint64_t master_seed, const StatTestOptions& opt,
                          const std::string& out_dir);

std::string stat_summary_to_json(const StatSummary& s);

struct ExtrapolationOptions {
    double factor = 1.5;
    long truth_paths = 1000000;
    long eval_paths = 1000000;
    double dt = 0.01;
    int jobs = 1;
};

struct ExtrapolationRow {
    double maturity = 0.0, strike = 0.0;
    double iv_truth = 0.0, iv_model = 0.0, abs_diff = 0.0;
    bool flagged = false;  // either IV inversion failed
};

struct ExtrapolationReport {
    std::vector<ExtrapolationRow> rows;
    double max_abs_diff = 0.0, mean_abs_diff = 0.0;
};

/// Ground-truth vs model IVs on the grid with every log-half-width
/// multiplied by `factor`; writes <out_prefix>.csv and <out_prefix>.json.
ExtrapolationReport extrapolation_report(const LeverageModel& model,
                                         const SabrParams& sabr, const XiParams& xi,
                                         const GridSpec& base_grid,
                                         std::uint64_t seed,
                                         const ExtrapolationOptions& opt,
                                         const std::string& out_prefix);

}  // namespace lsvcal
