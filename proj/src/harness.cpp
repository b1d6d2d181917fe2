#include "lsvcal/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "lsvcal/rng.hpp"
#include "json.hpp"

namespace lsvcal {

RunErrors run_single_stat(int run_id, std::uint64_t master_seed,
                          const StatTestOptions& opt) {
    const auto t_start = std::chrono::steady_clock::now();
    RunErrors out;
    out.run_id = run_id;
    const std::uint64_t run_seed =
        derive_seed(master_seed, static_cast<std::uint64_t>(run_id));
    try {
        out.xi = sample_xi(derive_seed(run_seed, 1));
        GenOptions gen;
        gen.dt = opt.calib.dt;
        gen.jobs = opt.jobs;
        const auto market =
            gen_synthetic_market(out.xi, opt.grid, opt.gen_paths, derive_seed(run_seed, 2), gen);
        if (market.grid.any_skipped())
            throw IvOutOfBounds("market generation produced an unpriceable option");

        std::vector<SmileGrid> extra;
        if (opt.calib.robust_m > 1) {
            const auto xis = perturb_xi(out.xi, opt.perturb_u, opt.calib.robust_m - 1,
                                        derive_seed(run_seed, 5));
            for (std::size_t i = 0; i < xis.size(); ++i) {
                const auto mk = gen_synthetic_market(
                    xis[i], opt.grid, opt.gen_paths,
                    derive_seed(run_seed, 0x100 + static_cast<std::uint64_t>(i)), gen);
                if (mk.grid.any_skipped())
                    throw IvOutOfBounds("perturbed market produced an unpriceable option");
                extra.push_back(mk.grid);
            }
        }

        auto model = make_leverage_model(
            leverage_net_spec(opt.calib.net_width, opt.calib.net_hidden_layers),
            opt.grid.maturities, derive_seed(run_seed, 3));
        const auto report =
            calibrate_surface(market.grid, model, opt.calib, derive_seed(run_seed, 4),
                              std::span<const SmileGrid>(extra.data(), extra.size()));
        for (std::size_t i = 0; i < report.slices.size(); ++i) {
            const auto& s = report.slices[i];
            if (s.skipped)
                throw IvOutOfBounds("slice " + std::to_string(i) + ": " + s.skip_reason);
            for (std::size_t j = 0; j < s.strikes.size(); ++j) {
                out.maturity_idx.push_back(static_cast<int>(i));
                out.strike_idx.push_back(static_cast<int>(j));
                out.strike.push_back(s.strikes[j]);
                out.iv_market.push_back(s.iv_market[j]);
                out.iv_model.push_back(s.iv_model[j]);
                out.abs_error.push_back(s.abs_error[j]);
            }
        }
    } catch (const std::exception& e) {
        out.skipped = true;
        out.skip_reason = e.what();
        out.maturity_idx.clear();
        out.strike_idx.clear();
        out.strike.clear();
        out.iv_market.clear();
        out.iv_model.clear();
        out.abs_error.clear();
    }
    out.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return out;
}

namespace {

double quantile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const double pos = p * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= v.size()) return v.back();
    const double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[lo + 1] * frac;
}

}  // namespace

StatSummary summarize_runs(const std::vector<RunErrors>& runs) {
    StatSummary s;
    s.n_runs = static_cast<int>(runs.size());
    // cell key -> samples across runs
    std::vector<StatCell> cells;
    std::vector<std::vector<double>> samples;
    auto cell_of = [&](int mi, int si, double strike) -> std::size_t {
        for (std::size_t c = 0; c < cells.size(); ++c)
            if (cells[c].maturity_idx == mi && cells[c].strike_idx == si) return c;
        cells.push_back({mi, si, strike, 0, 0, 0, 0, 0, 0});
        samples.emplace_back();
        return cells.size() - 1;
    };
    for (const auto& r : runs) {
        s.run_wall_times_s.push_back(r.wall_time_s);
        if (r.skipped) {
            ++s.n_skipped;
            s.skip_reasons.push_back("run " + std::to_string(r.run_id) + ": " +
                                     r.skip_reason);
            continue;
        }
        for (std::size_t j = 0; j < r.abs_error.size(); ++j)
            samples[cell_of(r.maturity_idx[j], r.strike_idx[j], r.strike[j])].push_back(
                r.abs_error[j]);
    }
    for (std::size_t c = 0; c < cells.size(); ++c) {
        auto& sm = samples[c];
        if (sm.empty()) continue;
        cells[c].count = static_cast<long>(sm.size());
        double mean = 0.0;
        for (double v : sm) mean += v;
        cells[c].mean_abs = mean / static_cast<double>(sm.size());
        cells[c].q15 = quantile(sm, 0.15);
        cells[c].q30 = quantile(sm, 0.30);
        cells[c].q70 = quantile(sm, 0.70);
        cells[c].q95 = quantile(sm, 0.95);
    }
    std::sort(cells.begin(), cells.end(), [](const StatCell& a, const StatCell& b) {
        return a.maturity_idx != b.maturity_idx ? a.maturity_idx < b.maturity_idx
                                                : a.strike_idx < b.strike_idx;
    });
    s.cells = std::move(cells);
    return s;
}

std::string stat_summary_to_json(const StatSummary& s) {
    nlohmann::json cells = nlohmann::json::array();
    for (const auto& c : s.cells)
        cells.push_back({{"maturity_idx", c.maturity_idx},
                         {"strike_idx", c.strike_idx},
                         {"strike", c.strike},
                         {"mean_abs", c.mean_abs},
                         {"q15", c.q15},
                         {"q30", c.q30},
                         {"q70", c.q70},
                         {"q95", c.q95},
                         {"count", c.count}});
    return nlohmann::json{{"schema_version", 1},
                          {"n_runs", s.n_runs},
                          {"n_skipped", s.n_skipped},
                          {"skip_reasons", s.skip_reasons},
                          {"run_wall_times_s", s.run_wall_times_s},
                          {"cells", cells}}
        .dump(2);
}

StatSummary run_stat_test(std::uint64_t master_seed, const StatTestOptions& opt,
                          const std::string& out_dir) {
    if (opt.m_runs < 1) throw InvalidInput("run_stat_test: M >= 1");
    opt.calib.validate();
    opt.grid.validate();
    std::filesystem::create_directories(out_dir);

    std::vector<RunErrors> runs(opt.m_runs);
    if (opt.jobs > 1 && opt.m_runs > 1) {
        // fan out across runs; each run then uses a single worker
        StatTestOptions inner = opt;
        inner.jobs = 1;
        inner.calib.jobs = 1;
        std::atomic<int> next{0};
        auto worker = [&] {
            for (;;) {
                const int m = next.fetch_add(1);
                if (m >= opt.m_runs) return;
                runs[m] = run_single_stat(m, master_seed, inner);
            }
        };
        std::vector<std::thread> pool;
        const int nt = std::min(opt.jobs, opt.m_runs);
        for (int i = 0; i < nt; ++i) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    } else {
        for (int m = 0; m < opt.m_runs; ++m)
            runs[m] = run_single_stat(m, master_seed, opt);
    }

    std::ofstream csv(out_dir + "/errors.csv");
    if (!csv) throw std::runtime_error("cannot write " + out_dir + "/errors.csv");
    csv << "run_id,maturity_idx,strike_idx,strike,iv_market,iv_model,abs_error\n";
    char buf[256];
    for (const auto& r : runs) {
        if (r.skipped) continue;
        for (std::size_t j = 0; j < r.abs_error.size(); ++j) {
            std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.17g,%.17g,%.17g,%.17g\n",
                          r.run_id, r.maturity_idx[j], r.strike_idx[j], r.strike[j],
                          r.iv_market[j], r.iv_model[j], r.abs_error[j]);
            csv << buf;
        }
    }
    const auto summary = summarize_runs(runs);
    std::ofstream js(out_dir + "/summary.json");
    if (!js) throw std::runtime_error("cannot write " + out_dir + "/summary.json");
    js << stat_summary_to_json(summary) << '\n';
    return summary;
}

ExtrapolationReport extrapolation_report(const LeverageModel& model,
                                         const SabrParams& sabr, const XiParams& xi,
                                         const GridSpec& base_grid,
                                         std::uint64_t seed,
                                         const ExtrapolationOptions& opt,
                                         const std::string& out_prefix) {
    if (!(opt.factor > 0.0)) throw InvalidInput("extrapolation: factor must be positive");
    GridSpec wide = base_grid;
    for (auto& k : wide.log_half_widths) k *= opt.factor;

    GenOptions gen;
    gen.dt = opt.dt;
    gen.jobs = opt.jobs;
    const auto truth =
        gen_synthetic_market(xi, wide, opt.truth_paths, derive_seed(seed, 1), gen);

    std::vector<std::vector<double>> strikes;
    for (int i = 0; i < static_cast<int>(wide.maturities.size()); ++i)
        strikes.push_back(wide.strikes(i));
    EvalOptions eopt;
    eopt.dt = opt.dt;
    eopt.jobs = opt.jobs;
    const auto model_ivs = eval_model_ivs(
        model, sabr, wide.spot, wide.maturities,
        std::span<const std::vector<double>>(strikes.data(), strikes.size()),
        opt.eval_paths, derive_seed(seed, 2), eopt);

    ExtrapolationReport rep;
    double sum = 0.0;
    long cnt = 0;
    for (std::size_t i = 0; i < wide.maturities.size(); ++i)
        for (std::size_t j = 0; j < truth.grid.slices[i].size(); ++j) {
            const auto& pt = truth.grid.slices[i][j];
            const auto& pm = model_ivs.slices[i][j];
            ExtrapolationRow row;
            row.maturity = wide.maturities[i];
            row.strike = pt.strike;
            row.flagged = pt.skipped || pm.skipped;
            row.iv_truth = pt.skipped ? 0.0 : pt.implied_vol;
            row.iv_model = pm.skipped ? 0.0 : pm.implied_vol;
            if (!row.flagged) {
                row.abs_diff = std::abs(row.iv_truth - row.iv_model);
                rep.max_abs_diff = std::max(rep.max_abs_diff, row.abs_diff);
                sum += row.abs_diff;
                ++cnt;
            }
            rep.rows.push_back(row);
        }
    rep.mean_abs_diff = cnt > 0 ? sum / static_cast<double>(cnt) : 0.0;

    std::ofstream csv(out_prefix + ".csv");
    if (!csv) throw std::runtime_error("cannot write " + out_prefix + ".csv");
    csv << "maturity,strike,iv_truth,iv_model,abs_diff,flagged\n";
    char buf[256];
    for (const auto& r : rep.rows) {
        std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", r.maturity,
                      r.strike, r.iv_truth, r.iv_model, r.abs_diff, r.flagged ? 1 : 0);
        csv << buf;
    }
    std::ofstream js(out_prefix + ".json");
    if (!js) throw std::runtime_error("cannot write " + out_prefix + ".json");
    js << nlohmann::json{{"schema_version", 1},
                         {"factor", opt.factor},
                         {"max_abs_diff", rep.max_abs_diff},
                         {"mean_abs_diff", rep.mean_abs_diff},
                         {"rows", rep.rows.size()}}
              .dump(2)
       << '\n';
    return rep;
}

}  // namespace lsvcal
