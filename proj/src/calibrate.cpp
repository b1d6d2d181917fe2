#include "lsvcal/calibrate.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "lsvcal/rng.hpp"
#include "json.hpp"

namespace lsvcal {

void CalibConfig::validate() const {
    if (!(dt > 0.0)) throw InvalidInput("config: dt must be positive");
    if (!(tol > 0.0)) throw InvalidInput("config: tol must be positive");
    if (schedule.empty() || schedule.front().step != 0)
        throw InvalidInput("config: schedule must start at step 0");
    for (std::size_t i = 1; i < schedule.size(); ++i)
        if (schedule[i].step <= schedule[i - 1].step ||
            schedule[i].n_paths < schedule[i - 1].n_paths)
            throw InvalidInput("config: schedule must be increasing");
    for (const auto& s : schedule)
        if (s.n_paths < 2) throw InvalidInput("config: schedule paths >= 2");
    if (first_check < 1 || check_every < 1 || max_steps < 1)
        throw InvalidInput("config: check/max steps must be positive");
    if (!(lr > 0.0)) throw InvalidInput("config: lr must be positive");
    if (eval_paths < 2) throw InvalidInput("config: eval_paths >= 2");
    if (net_width < 1 || net_hidden_layers < 1)
        throw InvalidInput("config: network shape must be positive");
    if (sabr_paths < 2 || sabr_steps < 1 || !(sabr_lr > 0.0))
        throw InvalidInput("config: bad SABR init settings");
    if (robust_m < 0 || robust_u < 0.0) throw InvalidInput("config: bad robust settings");
}

long CalibConfig::paths_at(long step) const {
    long n = schedule.front().n_paths;
    for (const auto& s : schedule)
        if (step >= s.step) n = s.n_paths;
    return n;
}

CalibConfig CalibConfig::preset(const std::string& name) {
    CalibConfig c;
    if (name == "paper") {
        c.eval_paths = 10000000;
    } else if (name == "desk") {
        c.eval_paths = 1000000;
    } else if (name == "ci") {
        c.net_width = 32;
        c.net_hidden_layers = 2;
        c.schedule = {{0, 400}, {300, 2000}, {800, 8000}};
        c.first_check = 1200;
        c.check_every = 300;
        c.max_steps = 1500;
        c.eval_paths = 200000;
    } else {
        throw InvalidInput("unknown preset: " + name);
    }
    return c;
}

namespace {

const char* hedge_name(HedgeMode m) {
    switch (m) {
        case HedgeMode::None: return "none";
        case HedgeMode::BsDeltaRunning: return "bs-delta-running";
        case HedgeMode::BsDeltaAlpha: return "bs-delta-alpha";
        case HedgeMode::Neural: return "neural";
    }
    return "none";
}

HedgeMode hedge_from_name(const std::string& s) {
    if (s == "none") return HedgeMode::None;
    if (s == "bs-delta-running") return HedgeMode::BsDeltaRunning;
    if (s == "bs-delta-alpha") return HedgeMode::BsDeltaAlpha;
    if (s == "neural") return HedgeMode::Neural;
    throw InvalidInput("unknown hedge mode: " + s);
}

}  // namespace

std::string config_to_json(const CalibConfig& c) {
    nlohmann::json sched = nlohmann::json::array();
    for (const auto& s : c.schedule) sched.push_back({{"step", s.step}, {"n_paths", s.n_paths}});
    return nlohmann::json{{"schema_version", 1},
                          {"dt", c.dt},
                          {"tol", c.tol},
                          {"schedule", sched},
                          {"first_check", c.first_check},
                          {"check_every", c.check_every},
                          {"max_steps", c.max_steps},
                          {"lr", c.lr},
                          {"eval_paths", c.eval_paths},
                          {"hedge", hedge_name(c.hedge)},
                          {"adversarial", c.adversarial},
                          {"put_convention", c.put_convention},
                          {"net_width", c.net_width},
                          {"net_hidden_layers", c.net_hidden_layers},
                          {"sabr_paths", c.sabr_paths},
                          {"sabr_steps", c.sabr_steps},
                          {"sabr_lr", c.sabr_lr},
                          {"robust_m", c.robust_m},
                          {"robust_u", c.robust_u},
                          {"jobs", c.jobs}}
        .dump(2);
}

CalibConfig config_from_json(const std::string& text, const CalibConfig& base) {
    const auto j = nlohmann::json::parse(text);
    if (j.value("schema_version", 0) != 1)
        throw InvalidInput("config: unsupported schema_version");
    CalibConfig c = base;
    auto get = [&](const char* k, auto& dst) {
        if (j.contains(k)) dst = j.at(k).get<std::decay_t<decltype(dst)>>();
    };
    get("dt", c.dt);
    get("tol", c.tol);
    if (j.contains("schedule")) {
        c.schedule.clear();
        for (const auto& s : j.at("schedule"))
            c.schedule.push_back({s.at("step").get<long>(), s.at("n_paths").get<long>()});
    }
    get("first_check", c.first_check);
    get("check_every", c.check_every);
    get("max_steps", c.max_steps);
    get("lr", c.lr);
    get("eval_paths", c.eval_paths);
    if (j.contains("hedge")) c.hedge = hedge_from_name(j.at("hedge").get<std::string>());
    get("adversarial", c.adversarial);
    get("put_convention", c.put_convention);
    get("net_width", c.net_width);
    get("net_hidden_layers", c.net_hidden_layers);
    get("sabr_paths", c.sabr_paths);
    get("sabr_steps", c.sabr_steps);
    get("sabr_lr", c.sabr_lr);
    get("robust_m", c.robust_m);
    get("robust_u", c.robust_u);
    get("jobs", c.jobs);
    c.validate();
    return c;
}

std::vector<double> vega_weights(double spot, double maturity,
                                 std::span<const SmilePoint> slice) {
    if (slice.empty()) throw InvalidInput("vega_weights: empty slice");
    std::vector<double> w(slice.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < slice.size(); ++j) {
        if (slice[j].skipped) throw InvalidInput("vega_weights: slice has skipped points");
        const double vega =
            bs_greeks({spot, slice[j].strike, maturity, true}, slice[j].implied_vol).vega;
        if (!(vega > 0.0)) throw InvalidInput("vega_weights: zero vega (degenerate option)");
        w[j] = 1.0 / vega;
        sum += w[j];
    }
    for (auto& v : w) v /= sum;
    return w;
}

SliceTargets make_slice_targets(const SmileGrid& market, int slice,
                                bool put_convention) {
    if (slice < 0 || slice >= static_cast<int>(market.slices.size()))
        throw InvalidInput("make_slice_targets: bad slice index");
    SliceTargets t;
    const double T = market.maturities[slice];
    for (const auto& p : market.slices[slice]) {
        const bool call = !put_convention || p.strike <= market.spot;
        t.options.push_back({market.spot, p.strike, T, call});
        // zero rate parity: put = call - S0 + K
        t.target_price.push_back(call ? p.price : p.price - market.spot + p.strike);
    }
    return t;
}

namespace {

double payoff_of(const OptionSpec& o, double terminal_x) {
    const double s = std::exp(terminal_x);
    return o.is_call ? std::max(s - o.strike, 0.0) : std::max(o.strike - s, 0.0);
}

/// d payoff / d X_T (pathwise, a.s. defined off the kink).
double payoff_xgrad(const OptionSpec& o, double terminal_x) {
    const double s = std::exp(terminal_x);
    if (o.is_call) return s > o.strike ? s : 0.0;
    return s < o.strike ? -s : 0.0;
}

std::vector<double> mean_q(const SliceTargets& targets, const PathBatch& batch) {
    const std::size_t nj = targets.options.size();
    if (batch.options.size() != nj)
        throw InvalidInput("calib_objective: batch/targets strike count mismatch");
    const long np = batch.n_paths;
    std::vector<double> q(nj);
    for (std::size_t j = 0; j < nj; ++j) {
        const auto& term = batch.terminal_at(targets.options[j].ttm);
        const auto& integ = batch.hedge_integrals[j];
        // block-ordered accumulation for worker-count independence
        double total = 0.0;
        for (long b0 = 0; b0 < np; b0 += kPathBlock) {
            double blk = 0.0;
            const long b1 = std::min(np, b0 + kPathBlock);
            for (long n = b0; n < b1; ++n)
                blk += payoff_of(targets.options[j], term[n]) - integ[n];
            total += blk;
        }
        q[j] = total / static_cast<double>(np);
    }
    return q;
}

}  // namespace

ObjectiveValue calib_objective(const SliceTargets& targets,
                               std::span<const double> weights,
                               const PathBatch& batch) {
    if (weights.size() != targets.options.size())
        throw InvalidInput("calib_objective: weight count mismatch");
    ObjectiveValue out;
    out.xbar = mean_q(targets, batch);
    for (std::size_t j = 0; j < out.xbar.size(); ++j) {
        out.xbar[j] -= targets.target_price[j];
        out.loss += weights[j] * out.xbar[j] * out.xbar[j];
    }
    return out;
}

RobustObjectiveValue robust_objective(const SliceTargets& base,
                                      std::span<const std::vector<double>> target_sets,
                                      std::span<const double> weights,
                                      const PathBatch& batch) {
    if (target_sets.empty()) throw InvalidInput("robust_objective: need M >= 1 target sets");
    if (weights.size() != base.options.size())
        throw InvalidInput("robust_objective: weight count mismatch");
    const auto q = mean_q(base, batch);
    RobustObjectiveValue out;
    out.xbar.resize(q.size());
    out.argmax_m.resize(q.size());
    for (std::size_t j = 0; j < q.size(); ++j) {
        double best = -1.0;
        for (std::size_t m = 0; m < target_sets.size(); ++m) {
            if (target_sets[m].size() != q.size())
                throw InvalidInput("robust_objective: target set size mismatch");
            const double x = q[j] - target_sets[m][j];
            if (x * x > best) {
                best = x * x;
                out.xbar[j] = x;
                out.argmax_m[j] = static_cast<int>(m);
            }
        }
        out.loss += weights[j] * best;
    }
    return out;
}

void calib_gradient(const SabrParams& sabr, const LeverageModel& model,
                    const SliceTargets& targets, std::span<const double> weights,
                    const ObjectiveValue& obj, const PathBatch& batch,
                    int active_slice, double* grad_accum, int jobs) {
    if (batch.xs.empty()) throw InvalidInput("calib_gradient: batch lacks stored paths");
    if (obj.xbar.size() != targets.options.size() ||
        weights.size() != targets.options.size())
        throw InvalidInput("calib_gradient: size mismatch");
    const long np = batch.n_paths;
    const double inv_n = 1.0 / static_cast<double>(np);
    std::vector<double> coef(np, 0.0);
    for (std::size_t j = 0; j < targets.options.size(); ++j) {
        const auto& term = batch.terminal_at(targets.options[j].ttm);
        const double c = 2.0 * weights[j] * obj.xbar[j] * inv_n;
        for (long n = 0; n < np; ++n)
            coef[n] += c * payoff_xgrad(targets.options[j], term[n]);
    }
    accumulate_pathwise_gradient(sabr, model, batch, coef, active_slice, grad_accum,
                                 jobs);
}

double product_form_objective(const SliceTargets& targets,
                              std::span<const double> weights,
                              const PathBatch& batch) {
    if (weights.size() != targets.options.size())
        throw InvalidInput("product_form_objective: weight count mismatch");
    if (batch.options.size() != targets.options.size())
        throw InvalidInput("product_form_objective: batch/targets mismatch");
    const long np = batch.n_paths;
    if (np % 2 != 0) throw InvalidInput("product_form_objective: odd path count");
    const long half = np / 2;
    double loss = 0.0;
    for (std::size_t j = 0; j < targets.options.size(); ++j) {
        const auto& term = batch.terminal_at(targets.options[j].ttm);
        const auto& integ = batch.hedge_integrals[j];
        double acc = 0.0;
        for (long n = 0; n < half; ++n) {
            const double a =
                payoff_of(targets.options[j], term[n]) - integ[n] - targets.target_price[j];
            const double b = payoff_of(targets.options[j], term[n + half]) -
                             integ[n + half] - targets.target_price[j];
            acc += a * b;
        }
        loss += weights[j] * acc / static_cast<double>(half);
    }
    return loss;
}

void product_form_gradient(const SabrParams& sabr, const LeverageModel& model,
                           const SliceTargets& targets, std::span<const double> weights,
                           const PathBatch& batch, int active_slice,
                           double* grad_accum, int jobs) {
    if (batch.xs.empty())
        throw InvalidInput("product_form_gradient: batch lacks stored paths");
    const long np = batch.n_paths;
    if (np % 2 != 0) throw InvalidInput("product_form_gradient: odd path count");
    const long half = np / 2;
    std::vector<double> coef(np, 0.0);
    for (std::size_t j = 0; j < targets.options.size(); ++j) {
        const auto& term = batch.terminal_at(targets.options[j].ttm);
        const auto& integ = batch.hedge_integrals[j];
        const double wj = weights[j] / static_cast<double>(half);
        for (long n = 0; n < half; ++n) {
            const double a =
                payoff_of(targets.options[j], term[n]) - integ[n] - targets.target_price[j];
            const double b = payoff_of(targets.options[j], term[n + half]) -
                             integ[n + half] - targets.target_price[j];
            coef[n] += wj * b * payoff_xgrad(targets.options[j], term[n]);
            coef[n + half] += wj * a * payoff_xgrad(targets.options[j], term[n + half]);
        }
    }
    accumulate_pathwise_gradient(sabr, model, batch, coef, active_slice, grad_accum,
                                 jobs);
}

namespace {

double atm_iv(const SmileGrid& market, int slice) {
    double best = std::numeric_limits<double>::infinity();
    double iv = 0.3;
    for (const auto& p : market.slices[slice]) {
        if (p.skipped) continue;
        const double d = std::abs(p.strike - market.spot);
        if (d < best) {
            best = d;
            iv = p.implied_vol;
        }
    }
    return iv;
}

}  // namespace

SabrParams calibrate_sabr_init(const SmileGrid& market, const CalibConfig& cfg,
                               std::uint64_t seed) {
    cfg.validate();
    market.validate();
    if (market.slices.empty()) throw InvalidInput("calibrate_sabr_init: empty market");
    const auto targets = make_slice_targets(market, 0, cfg.put_convention);
    const auto weights =
        vega_weights(market.spot, market.maturities[0], market.slices[0]);
    const double T = market.maturities[0];
    const double dt = cfg.dt;
    const long n_steps = std::lround(T / dt);
    if (n_steps < 1 || std::abs(T / dt - static_cast<double>(n_steps)) > 1e-9)
        throw InvalidInput("calibrate_sabr_init: dt must divide the first maturity");
    const long np = std::min<long>(cfg.sabr_paths, 2000);
    const std::size_t nj = targets.options.size();
    const double sqdt = std::sqrt(dt);
    const double x0 = std::log(market.spot);

    const double fb_alpha = std::max(atm_iv(market, 0), 1e-3);
    // unconstrained coords: nu = exp(u), rho = tanh(v), alpha0 = exp(w)
    auto fallback = [&] {
        return std::array<double, 3>{0.0, std::atanh(-0.5), std::log(fb_alpha)};
    };
    std::array<double, 3> p = fallback();
    AdamState adam(3);
    std::array<double, 3> best_p = p;
    double best_f = std::numeric_limits<double>::infinity();

    for (long it = 0; it < cfg.sabr_steps; ++it) {
        const double nu = std::exp(p[0]);
        const double rho = std::tanh(p[1]);
        const double a0 = std::exp(p[2]);
        const double rp = std::sqrt(1.0 - rho * rho);
        const std::uint64_t sd = derive_seed(seed, static_cast<std::uint64_t>(it));
        std::vector<double> xbar(nj, 0.0);
        std::vector<double> dxbar(3 * nj, 0.0);
        for (long path = 0; path < np; ++path) {
            const PathRng rng(sd, static_cast<std::uint64_t>(path));
            double x = x0, alpha = a0;
            double dx[3] = {0, 0, 0};        // d/d(nu, rho, alpha0)
            double dalpha[3] = {0, 0, 1.0};
            std::vector<double> integ(nj, 0.0), dinteg(3 * nj, 0.0);
            for (long k = 0; k < n_steps; ++k) {
                const double t = static_cast<double>(k) * dt;
                const auto z = rng.normals(static_cast<std::uint32_t>(k));
                const double zw = z.first;
                const double zb = rho * zw + rp * z.second;
                const double xn = x + alpha * sqdt * zw - 0.5 * alpha * alpha * dt;
                double dxn[3];
                for (int d = 0; d < 3; ++d)
                    dxn[d] = dx[d] + (sqdt * zw - alpha * dt) * dalpha[d];
                const double e = std::exp(-0.5 * nu * nu * dt + nu * sqdt * zb);
                const double an = alpha * e;
                double dan[3];
                dan[0] = dalpha[0] * e + an * (-nu * dt + sqdt * zb);
                dan[1] = dalpha[1] * e + an * nu * sqdt * (zw - rho / rp * z.second);
                dan[2] = dalpha[2] * e;
                const double s = std::exp(x), sn = std::exp(xn);
                const double ds = sn - s;
                for (std::size_t j = 0; j < nj; ++j) {
                    const OptionSpec& o = targets.options[j];
                    const double tau = o.ttm - t;
                    if (tau <= 0.5 * dt) continue;
                    const double st = alpha * std::sqrt(tau);
                    const double d1 = (x - std::log(o.strike)) / st + 0.5 * st;
                    const double d2 = d1 - st;
                    const double delta =
                        o.is_call ? norm_cdf(d1) : norm_cdf(d1) - 1.0;
                    const double pdf = norm_pdf(d1);
                    const double ddx = pdf / st;                 // d delta / d x
                    const double dds = -pdf * d2 / alpha;        // d delta / d vol
                    integ[j] += delta * ds;
                    for (int d = 0; d < 3; ++d)
                        dinteg[3 * j + d] += (ddx * dx[d] + dds * dalpha[d]) * ds +
                                             delta * (sn * dxn[d] - s * dx[d]);
                }
                x = xn;
                alpha = an;
                for (int d = 0; d < 3; ++d) {
                    dx[d] = dxn[d];
                    dalpha[d] = dan[d];
                }
            }
            for (std::size_t j = 0; j < nj; ++j) {
                xbar[j] += payoff_of(targets.options[j], x) - integ[j];
                const double pg = payoff_xgrad(targets.options[j], x);
                for (int d = 0; d < 3; ++d)
                    dxbar[3 * j + d] += pg * dx[d] - dinteg[3 * j + d];
            }
        }
        double f = 0.0;
        double g[3] = {0, 0, 0};
        for (std::size_t j = 0; j < nj; ++j) {
            const double xb = xbar[j] / static_cast<double>(np) - targets.target_price[j];
            f += weights[j] * xb * xb;
            for (int d = 0; d < 3; ++d)
                g[d] += 2.0 * weights[j] * xb * dxbar[3 * j + d] / static_cast<double>(np);
        }
        // chain through the transforms
        const double gu = g[0] * nu, gv = g[1] * (1.0 - rho * rho), gw = g[2] * a0;
        if (!std::isfinite(f) || !std::isfinite(gu) || !std::isfinite(gv) ||
            !std::isfinite(gw)) {
            p = fallback();
            adam = AdamState(3);
            continue;
        }
        if (f < best_f) {
            best_f = f;
            best_p = p;
        }
        std::array<double, 3> grad{gu, gv, gw};
        adam_step(adam, std::span<double>(p.data(), 3),
                  std::span<const double>(grad.data(), 3), cfg.sabr_lr);
    }
    SabrParams out{std::exp(best_p[0]), std::tanh(best_p[1]), std::exp(best_p[2]),
                   market.spot};
    out.validate();
    return out;
}

SmileGrid eval_model_ivs(const LeverageModel& model, const SabrParams& sabr,
                         double spot, std::span<const double> maturities,
                         std::span<const std::vector<double>> strikes,
                         long n_paths, std::uint64_t seed, const EvalOptions& opt) {
    sabr.validate();
    model.validate();
    if (maturities.size() != strikes.size() || maturities.empty())
        throw InvalidInput("eval_model_ivs: maturities/strikes mismatch");
    if (n_paths < 100000) throw InvalidInput("eval_model_ivs: n_paths >= 10^5");
    const double dt = opt.dt;
    if (opt.hedge == HedgeMode::Neural)
        throw InvalidInput("eval_model_ivs: neural hedge not supported here");

    const int n_sl = static_cast<int>(maturities.size());
    std::vector<long> slice_steps(n_sl);
    for (int i = 0; i < n_sl; ++i) {
        const double q = maturities[i] / dt;
        slice_steps[i] = std::lround(q);
        if (slice_steps[i] < 1 ||
            std::abs(q - static_cast<double>(slice_steps[i])) > 1e-9)
            throw InvalidInput("eval_model_ivs: dt must divide every maturity");
        if (i > 0 && slice_steps[i] <= slice_steps[i - 1])
            throw InvalidInput("eval_model_ivs: maturities must increase");
    }
    const long total_steps = slice_steps.back();
    model.interval_of(maturities.back() - dt);

    struct Opt {
        int slice;
        OptionSpec spec;
    };
    std::vector<Opt> options;
    for (int i = 0; i < n_sl; ++i)
        for (double k : strikes[i]) {
            const bool call = !opt.put_convention || k <= spot;
            options.push_back({i, {spot, k, maturities[i], call}});
        }
    const int n_opt = static_cast<int>(options.size());

    const long nb = num_blocks(n_paths);
    std::vector<double> sums(static_cast<std::size_t>(nb) * n_opt * 5, 0.0);
    const double x0 = std::log(spot);
    const double sqdt = std::sqrt(dt);
    const double nu = sabr.nu, rho = sabr.rho, rp = std::sqrt(1.0 - rho * rho);
    const double adrift = std::exp(-0.5 * nu * nu * dt);

    for_each_block(n_paths, opt.jobs, [&](long blk, long begin, long end) {
        const int bsz = static_cast<int>(end - begin);
        double* bs_sum = sums.data() + static_cast<std::size_t>(blk) * n_opt * 5;
        std::vector<double> x(bsz, x0), alpha(bsz, sabr.alpha0);
        std::vector<double> lev(bsz), ds(bsz), spotv(bsz), xn(bsz);
        std::vector<double> integ(static_cast<std::size_t>(n_opt) * bsz, 0.0);
        std::vector<double> term(static_cast<std::size_t>(n_sl) * bsz, 0.0);
        MlpBatchWork work;
        int next_sl = 0;
        for (long k = 0; k < total_steps; ++k) {
            const double t = static_cast<double>(k) * dt;
            const MlpParams& net = model.nets[model.interval_of(t)];
            mlp_forward_batch(net, x.data(), bsz, lev.data(), work);
            for (int b = 0; b < bsz; ++b) {
                const double l = 1.0 + lev[b];
                lev[b] = l;
                const auto z = PathRng(seed, static_cast<std::uint64_t>(begin + b))
                                   .normals(static_cast<std::uint32_t>(k));
                const double al = alpha[b] * l;
                xn[b] = x[b] + al * sqdt * z.first - 0.5 * al * al * dt;
                spotv[b] = std::exp(x[b]);
                ds[b] = std::exp(xn[b]) - spotv[b];
                const double zb = rho * z.first + rp * z.second;
                x[b] = xn[b];
                // alpha updated after the hedge loop below needs old value:
                xn[b] = alpha[b];  // stash pre-step alpha
                alpha[b] *= adrift * std::exp(nu * sqdt * zb);
            }
            if (opt.hedge != HedgeMode::None) {
                for (int o = 0; o < n_opt; ++o) {
                    const OptionSpec& os = options[o].spec;
                    if (os.ttm <= t + 0.5 * dt) continue;
                    double* ig = integ.data() + static_cast<std::size_t>(o) * bsz;
                    for (int b = 0; b < bsz; ++b) {
                        const double vol = opt.hedge == HedgeMode::BsDeltaRunning
                                               ? xn[b] * lev[b]
                                               : xn[b];
                        ig[b] += bs_delta_fast(spotv[b], os.strike, os.ttm - t, vol,
                                               os.is_call) *
                                 ds[b];
                    }
                }
            }
            while (next_sl < n_sl && slice_steps[next_sl] == k + 1) {
                for (int b = 0; b < bsz; ++b)
                    term[static_cast<std::size_t>(next_sl) * bsz + b] = x[b];
                ++next_sl;
            }
        }
        for (int o = 0; o < n_opt; ++o) {
            const double* ig = integ.data() + static_cast<std::size_t>(o) * bsz;
            const double* tx = term.data() + static_cast<std::size_t>(options[o].slice) * bsz;
            double* m = bs_sum + static_cast<std::size_t>(o) * 5;
            for (int b = 0; b < bsz; ++b) {
                const double c = payoff_of(options[o].spec, tx[b]);
                m[0] += c;
                m[1] += ig[b];
                m[2] += c * c;
                m[3] += ig[b] * ig[b];
                m[4] += c * ig[b];
            }
        }
    });

    std::vector<double> tot(static_cast<std::size_t>(n_opt) * 5, 0.0);
    for (long blk = 0; blk < nb; ++blk) {
        const double* src = sums.data() + static_cast<std::size_t>(blk) * n_opt * 5;
        for (std::size_t i = 0; i < tot.size(); ++i) tot[i] += src[i];
    }

    SmileGrid out;
    out.spot = spot;
    out.maturities.assign(maturities.begin(), maturities.end());
    out.slices.resize(n_sl);
    const double n = static_cast<double>(n_paths);
    for (int o = 0; o < n_opt; ++o) {
        const double* m = tot.data() + static_cast<std::size_t>(o) * 5;
        const double mc = m[0] / n, mi = m[1] / n;
        const double var_c = std::max(m[2] / n - mc * mc, 0.0);
        const double var_i = std::max(m[3] / n - mi * mi, 0.0);
        const double cov = m[4] / n - mc * mi;
        const double c_opt = var_i > 0.0 ? cov / var_i : 0.0;
        const double price = mc - c_opt * mi;
        const double se_price = std::sqrt(std::max(var_c - c_opt * cov, 0.0) / n);
        SmilePoint p;
        p.strike = options[o].spec.strike;
        p.price = price;
        p.std_err = se_price;
        try {
            p.implied_vol = implied_vol(price, options[o].spec);
            const double vega =
                bs_greeks(options[o].spec, p.implied_vol).vega;
            p.std_err = vega > 0.0 ? se_price / vega : se_price;
        } catch (const IvOutOfBounds&) {
            p.skipped = true;
            p.implied_vol = 0.0;
        }
        out.slices[options[o].slice].push_back(p);
    }
    out.validate();
    return out;
}

namespace {

struct ErrStats {
    double max_err = 0.0;
    double mean_err = 0.0;
    bool any_fail = false;
};

ErrStats iv_errors(const std::vector<SmilePoint>& market,
                   const std::vector<std::vector<double>>& target_ivs,
                   const std::vector<SmilePoint>& model_pts,
                   std::vector<double>* per_strike) {
    ErrStats st;
    double sum = 0.0;
    long cnt = 0;
    for (std::size_t j = 0; j < market.size(); ++j) {
        if (model_pts[j].skipped) {
            st.any_fail = true;
            if (per_strike) (*per_strike)[j] = std::nan("");
            continue;
        }
        // distance to the target envelope (a single smile degenerates to
        // the plain absolute error)
        double lo = target_ivs[0][j], hi = target_ivs[0][j];
        for (const auto& tv : target_ivs) {
            lo = std::min(lo, tv[j]);
            hi = std::max(hi, tv[j]);
        }
        const double iv = model_pts[j].implied_vol;
        const double err = iv < lo ? lo - iv : (iv > hi ? iv - hi : 0.0);
        if (per_strike) (*per_strike)[j] = err;
        st.max_err = std::max(st.max_err, err);
        sum += err;
        ++cnt;
    }
    st.mean_err = cnt > 0 ? sum / static_cast<double>(cnt) : 0.0;
    return st;
}

}  // namespace

SliceReport calibrate_slice(int slice, const SmileGrid& market,
                            LeverageModel& model, const SabrParams& sabr,
                            const CalibConfig& cfg, std::uint64_t seed,
                            std::span<const SmileGrid> extra_targets) {
    cfg.validate();
    market.validate();
    model.validate();
    if (slice < 0 || slice >= static_cast<int>(market.maturities.size()))
        throw InvalidInput("calibrate_slice: bad slice index");
    if (model.maturities.size() != market.maturities.size())
        throw InvalidInput("calibrate_slice: model/market maturity count mismatch");
    const auto t_start = std::chrono::steady_clock::now();

    const double T = market.maturities[slice];
    const auto targets = make_slice_targets(market, slice, cfg.put_convention);
    const std::size_t nj = targets.options.size();

    // robust mode: every market provides one target-price set; IVs tracked
    // for the envelope-based abort criterion
    std::vector<std::vector<double>> target_sets{targets.target_price};
    std::vector<std::vector<double>> target_ivs(1);
    for (const auto& p : market.slices[slice]) target_ivs[0].push_back(p.implied_vol);
    for (const auto& mkt : extra_targets) {
        const auto t2 = make_slice_targets(mkt, slice, cfg.put_convention);
        target_sets.push_back(t2.target_price);
        std::vector<double> ivs;
        for (const auto& p : mkt.slices[slice]) ivs.push_back(p.implied_vol);
        target_ivs.push_back(std::move(ivs));
    }
    const bool robust = target_sets.size() > 1;

    auto weights = vega_weights(market.spot, T, market.slices[slice]);
    SliceReport rep;
    rep.maturity = T;
    rep.weight_history.push_back(weights);

    AdamState adam(model.nets[slice].data.size());
    std::vector<double> grad(model.nets[slice].data.size());
    SimOptions sopt;
    sopt.dt = cfg.dt;
    sopt.hedge = cfg.hedge;
    sopt.options = targets.options;
    sopt.store_paths = true;
    sopt.jobs = cfg.jobs;

    std::vector<std::vector<double>> eval_strikes(1);
    for (const auto& o : targets.options) eval_strikes[0].push_back(o.strike);
    const double eval_t[1] = {T};

    double best_err = std::numeric_limits<double>::infinity();
    SmileGrid last_eval;
    bool evaluated = false;

    long k = 0;
    for (; k < cfg.max_steps; ++k) {
        const long n = cfg.paths_at(k);
        const auto batch =
            simulate_lsv(sabr, model, T, n,
                         derive_seed(seed, 0x10000000ull + static_cast<std::uint64_t>(k)),
                         sopt);
        ObjectiveValue obj;
        if (robust) {
            auto r = robust_objective(targets, target_sets, weights, batch);
            obj.loss = r.loss;
            obj.xbar = std::move(r.xbar);
        } else {
            obj = calib_objective(targets, weights, batch);
        }
        std::fill(grad.begin(), grad.end(), 0.0);
        calib_gradient(sabr, model, targets, weights, obj, batch, slice, grad.data(),
                       cfg.jobs);
        if ((k + 1) % 1000 == 0 || k + 1 == cfg.max_steps) {
            double g2 = 0.0;
            for (double g : grad) g2 += g * g;
            if (!std::isfinite(g2))
                throw std::runtime_error(
                    "calibrate_slice: non-finite gradient at step " + std::to_string(k) +
                    ", batch seed " +
                    std::to_string(derive_seed(seed, 0x10000000ull +
                                                         static_cast<std::uint64_t>(k))));
        }
        adam_step(adam, model.nets[slice].data, grad, cfg.lr);

        const long step = k + 1;
        const bool check = step >= cfg.first_check &&
                           (step - cfg.first_check) % cfg.check_every == 0;
        if (!check && step != cfg.max_steps) continue;

        EvalOptions eopt;
        eopt.dt = cfg.dt;
        eopt.hedge = cfg.hedge == HedgeMode::None ? HedgeMode::None
                                                  : HedgeMode::BsDeltaRunning;
        eopt.jobs = cfg.jobs;
        eopt.put_convention = cfg.put_convention;
        last_eval = eval_model_ivs(
            model, sabr, market.spot, std::span<const double>(eval_t, 1),
            std::span<const std::vector<double>>(&eval_strikes[0], 1), cfg.eval_paths,
            derive_seed(seed, 0x20000000ull + static_cast<std::uint64_t>(step)), eopt);
        evaluated = true;
        std::vector<double> per_strike(nj, 0.0);
        const auto st = iv_errors(market.slices[slice], target_ivs,
                                  last_eval.slices[0], &per_strike);
        if (st.any_fail) {
            rep.skipped = true;
            rep.skip_reason = "implied-vol inversion failed during evaluation";
        }
        best_err = std::min(best_err, st.max_err);
        if (st.max_err <= cfg.tol || step == cfg.max_steps || rep.skipped) {
            ++k;
            break;
        }
        if (cfg.adversarial) {
            double sum = 0.0;
            for (std::size_t j = 0; j < nj; ++j) {
                if (std::isfinite(per_strike[j])) weights[j] += per_strike[j];
                sum += weights[j];
            }
            for (auto& w : weights) w /= sum;
            rep.weight_history.push_back(weights);
        }
    }

    rep.steps = k;
    if (!evaluated)
        throw std::runtime_error("calibrate_slice: loop ended without an evaluation");
    std::vector<double> per_strike(nj, 0.0);
    const auto st =
        iv_errors(market.slices[slice], target_ivs, last_eval.slices[0], &per_strike);
    rep.final_max_err = st.max_err;
    rep.final_mean_err = st.mean_err;
    for (std::size_t j = 0; j < nj; ++j) {
        rep.strikes.push_back(targets.options[j].strike);
        rep.iv_market.push_back(market.slices[slice][j].implied_vol);
        rep.iv_model.push_back(last_eval.slices[0][j].implied_vol);
        rep.abs_error.push_back(
            std::abs(last_eval.slices[0][j].implied_vol - market.slices[slice][j].implied_vol));
        rep.std_err.push_back(last_eval.slices[0][j].std_err);
        rep.point_skipped.push_back(last_eval.slices[0][j].skipped);
    }
    rep.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return rep;
}

CalibReport calibrate_surface(const SmileGrid& market, LeverageModel& model,
                              const CalibConfig& cfg, std::uint64_t seed,
                              std::span<const SmileGrid> extra_targets) {
    const auto t_start = std::chrono::steady_clock::now();
    CalibReport rep;
    rep.sabr = calibrate_sabr_init(market, cfg, derive_seed(seed, 0x5ab2));
    for (int i = 0; i < static_cast<int>(market.maturities.size()); ++i)
        rep.slices.push_back(calibrate_slice(
            i, market, model, rep.sabr, cfg,
            derive_seed(seed, 0x600000ull + static_cast<std::uint64_t>(i)),
            extra_targets));
    rep.total_wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return rep;
}

std::string report_to_json(const CalibReport& r, const CalibConfig& cfg,
                           const std::vector<std::pair<std::string, std::uint64_t>>&
                               artifact_hashes) {
    nlohmann::json slices = nlohmann::json::array();
    for (const auto& s : r.slices) {
        nlohmann::json per_strike = nlohmann::json::array();
        for (std::size_t j = 0; j < s.strikes.size(); ++j)
            per_strike.push_back({{"strike", s.strikes[j]},
                                  {"iv_market", s.iv_market[j]},
                                  {"iv_model", s.iv_model[j]},
                                  {"abs_error", s.abs_error[j]},
                                  {"std_err", s.std_err[j]},
                                  {"skipped", static_cast<bool>(s.point_skipped[j])}});
        slices.push_back({{"maturity", s.maturity},
                          {"steps", s.steps},
                          {"wall_time_s", s.wall_time_s},
                          {"final_max_err", s.final_max_err},
                          {"final_mean_err", s.final_mean_err},
                          {"skipped", s.skipped},
                          {"skip_reason", s.skip_reason},
                          {"weight_history", s.weight_history},
                          {"per_strike", per_strike}});
    }
    nlohmann::json hashes = nlohmann::json::object();
    for (const auto& [name, h] : artifact_hashes) hashes[name] = h;
    return nlohmann::json{{"schema_version", 1},
                          {"config", nlohmann::json::parse(config_to_json(cfg))},
                          {"sabr",
                           {{"nu", r.sabr.nu},
                            {"rho", r.sabr.rho},
                            {"alpha0", r.sabr.alpha0},
                            {"s0", r.sabr.s0}}},
                          {"slices", slices},
                          {"total_wall_time_s", r.total_wall_time_s},
                          {"artifact_hashes", hashes}}
        .dump(2);
}

}  // namespace lsvcal
