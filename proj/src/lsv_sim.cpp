#include "lsvcal/lsv_sim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "lsvcal/rng.hpp"
#include "json.hpp"

namespace lsvcal {

void SabrParams::validate() const {
    if (!(nu >= 0.0)) throw InvalidInput("sabr: nu must be non-negative");
    if (!(rho > -1.0) || !(rho < 1.0)) throw InvalidInput("sabr: rho must be in (-1,1)");
    if (!(alpha0 > 0.0)) throw InvalidInput("sabr: alpha0 must be positive");
    if (!(s0 > 0.0)) throw InvalidInput("sabr: s0 must be positive");
}

void LeverageModel::validate() const {
    if (maturities.empty()) throw InvalidInput("leverage: no maturities");
    if (nets.size() != maturities.size())
        throw InvalidInput("leverage: one net per maturity required");
    double prev = 0.0;
    for (double t : maturities) {
        if (!(t > prev)) throw InvalidInput("leverage: maturities must increase");
        prev = t;
    }
    spec.validate();
    if (spec.input_dim != 1 || spec.output_dim != 1)
        throw InvalidInput("leverage: nets must map R -> R");
    for (const auto& n : nets)
        if (n.data.size() != spec.param_count())
            throw InvalidInput("leverage: net parameter size mismatch");
}

int LeverageModel::interval_of(double t) const {
    if (t < 0.0) throw InvalidInput("leverage: negative time");
    for (std::size_t i = 0; i < maturities.size(); ++i)
        if (t + 1e-9 < maturities[i]) return static_cast<int>(i);
    throw InvalidInput("leverage: time beyond last maturity");
}

double LeverageModel::eval(double t, double x) const {
    return 1.0 + mlp_eval1(nets[interval_of(t)], x);
}

void LeverageModel::save(const std::string& dir) const {
    validate();
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < nets.size(); ++i)
        save_mlp(nets[i], dir + "/net_" + std::to_string(i));
    std::ofstream f(dir + "/model.json");
    if (!f) throw std::runtime_error("cannot write " + dir + "/model.json");
    f << nlohmann::json{{"maturities", maturities}}.dump(2) << '\n';
}

LeverageModel LeverageModel::load(const std::string& dir) {
    std::ifstream f(dir + "/model.json");
    if (!f) throw std::runtime_error("cannot read " + dir + "/model.json");
    const auto j = nlohmann::json::parse(f);
    LeverageModel m;
    m.maturities = j.at("maturities").get<std::vector<double>>();
    for (std::size_t i = 0; i < m.maturities.size(); ++i)
        m.nets.push_back(load_mlp(dir + "/net_" + std::to_string(i)));
    if (m.nets.empty()) throw std::runtime_error("empty leverage model in " + dir);
    m.spec = m.nets[0].spec;
    m.validate();
    return m;
}

LeverageModel make_leverage_model(const MlpSpec& spec, std::vector<double> maturities,
                                  std::uint64_t seed, double output_scale) {
    LeverageModel m;
    m.maturities = std::move(maturities);
    m.spec = spec;
    for (std::size_t i = 0; i < m.maturities.size(); ++i)
        m.nets.push_back(mlp_init(spec, derive_seed(seed, i), output_scale));
    m.validate();
    return m;
}

Tape::Id leverage_eval_taped(Tape& tape, const LeverageModel& m, int slice,
                             std::span<const Tape::Id> params, Tape::Id x) {
    (void)slice;
    const auto y = mlp_eval_taped(tape, m.spec, params, std::span<const Tape::Id>(&x, 1));
    return tape.add_const(y[0], 1.0);
}

const std::vector<double>& PathBatch::terminal_at(double maturity) const {
    for (std::size_t i = 0; i < record_maturities.size(); ++i)
        if (std::abs(record_maturities[i] - maturity) <= 1e-9) return terminal_x[i];
    throw InvalidInput("PathBatch: maturity was not recorded");
}

namespace {

long steps_exact(double t, double dt, const char* what) {
    const double q = t / dt;
    const long k = std::lround(q);
    if (k < 1 || std::abs(q - static_cast<double>(k)) > 1e-9)
        throw InvalidInput(std::string("dt must divide ") + what);
    return k;
}

}  // namespace

PathBatch simulate_lsv(const SabrParams& sabr, const LeverageModel& model,
                       double horizon, long n_paths, std::uint64_t seed,
                       const SimOptions& opt) {
    sabr.validate();
    model.validate();
    if (n_paths < 1) throw InvalidInput("simulate_lsv: n_paths >= 1");
    if (!(opt.dt > 0.0)) throw InvalidInput("simulate_lsv: dt must be positive");
    if (!(horizon > 0.0)) throw InvalidInput("simulate_lsv: horizon must be positive");
    if (opt.neural_hedge != nullptr) {
        if (opt.hedge != HedgeMode::Neural)
            throw InvalidInput("simulate_lsv: neural_hedge given without HedgeMode::Neural");
        if (opt.options.size() != 1)
            throw InvalidInput("simulate_lsv: neural hedge supports exactly one option");
        if (opt.neural_hedge->spec.input_dim != 3 || opt.neural_hedge->spec.output_dim != 1)
            throw InvalidInput("simulate_lsv: neural hedge net must map R^3 -> R");
    } else if (opt.hedge == HedgeMode::Neural) {
        throw InvalidInput("simulate_lsv: HedgeMode::Neural needs a neural_hedge net");
    }

    const double dt = opt.dt;
    const long n_steps = steps_exact(horizon, dt, "the horizon");
    model.interval_of(horizon - dt);  // whole span must be covered

    PathBatch out;
    out.n_paths = n_paths;
    out.n_steps = n_steps;
    out.dt = dt;
    out.horizon = horizon;
    out.options = opt.options;

    std::vector<double> recs = opt.record_maturities;
    recs.push_back(horizon);
    for (const auto& o : opt.options) {
        if (o.ttm > horizon + 1e-9)
            throw InvalidInput("simulate_lsv: option matures beyond the horizon");
        recs.push_back(o.ttm);
    }
    std::sort(recs.begin(), recs.end());
    recs.erase(std::unique(recs.begin(), recs.end(),
                           [](double a, double b) { return std::abs(a - b) <= 1e-9; }),
               recs.end());
    std::vector<long> rec_steps;
    for (double t : recs) {
        if (t > horizon + 1e-9)
            throw InvalidInput("simulate_lsv: record maturity beyond the horizon");
        rec_steps.push_back(steps_exact(t, dt, "every recorded maturity"));
    }
    out.record_maturities = recs;
    const int n_rec = static_cast<int>(recs.size());
    out.terminal_x.assign(n_rec, std::vector<double>(n_paths));
    const int n_opt = static_cast<int>(opt.options.size());
    out.hedge_integrals.assign(n_opt, std::vector<double>(n_paths, 0.0));
    if (opt.store_paths) {
        const std::size_t sz = static_cast<std::size_t>(n_steps) * n_paths;
        out.xs.resize(sz);
        out.alphas.resize(sz);
        out.dws.resize(sz);
    }

    const double x0 = std::log(sabr.s0);
    const double sqdt = std::sqrt(dt);
    const double nu = sabr.nu, rho = sabr.rho;
    const double rho_perp = std::sqrt(1.0 - rho * rho);
    const double alpha_drift = std::exp(-0.5 * nu * nu * dt);

    for_each_block(n_paths, opt.jobs, [&](long /*b*/, long begin, long end) {
        const int bsz = static_cast<int>(end - begin);
        std::vector<double> x(bsz, x0), alpha(bsz, sabr.alpha0), anext(bsz);
        std::vector<double> lev(bsz), zw(bsz), ds(bsz), spot(bsz);
        std::vector<double> hin;
        std::vector<double> hpos(bsz);
        MlpBatchWork work, hwork;
        if (opt.hedge == HedgeMode::Neural) hin.resize(3 * static_cast<std::size_t>(bsz));
        int next_rec = 0;
        for (long k = 0; k < n_steps; ++k) {
            const double t = static_cast<double>(k) * dt;
            const MlpParams& net = model.nets[model.interval_of(t)];
            mlp_forward_batch(net, x.data(), bsz, lev.data(), work);
            for (int b = 0; b < bsz; ++b) {
                double l = 1.0 + lev[b];
                if (opt.clamp_leverage) l = std::max(l, opt.clamp_min);
                lev[b] = l;
            }
            for (int b = 0; b < bsz; ++b) {
                const auto z = PathRng(seed, static_cast<std::uint64_t>(begin + b))
                                   .normals(static_cast<std::uint32_t>(k));
                zw[b] = z.first;
                const double zb = rho * z.first + rho_perp * z.second;
                const double al = alpha[b] * lev[b];
                const double xn = x[b] + al * sqdt * zw[b] - 0.5 * al * al * dt;
                spot[b] = std::exp(x[b]);
                ds[b] = std::exp(xn) - spot[b];
                if (opt.store_paths) {
                    const std::size_t off = static_cast<std::size_t>(k) * n_paths + begin;
                    out.xs[off + b] = x[b];
                    out.alphas[off + b] = alpha[b];
                    out.dws[off + b] = sqdt * zw[b];
                }
                x[b] = xn;
                anext[b] = alpha[b] * alpha_drift * std::exp(nu * sqdt * zb);
            }
            switch (opt.hedge) {
                case HedgeMode::None:
                    break;
                case HedgeMode::BsDeltaRunning:
                case HedgeMode::BsDeltaAlpha:
                    for (int o = 0; o < n_opt; ++o) {
                        const OptionSpec& os = opt.options[o];
                        if (os.ttm <= t + 0.5 * dt) continue;
                        double* integ = out.hedge_integrals[o].data() + begin;
                        for (int b = 0; b < bsz; ++b) {
                            const double vol = opt.hedge == HedgeMode::BsDeltaRunning
                                                   ? alpha[b] * lev[b]
                                                   : alpha[b];
                            integ[b] += bs_delta_fast(spot[b], os.strike, os.ttm - t,
                                                      vol, os.is_call) *
                                        ds[b];
                        }
                    }
                    break;
                case HedgeMode::Neural: {
                    if (opt.options[0].ttm <= t + 0.5 * dt) break;
                    for (int b = 0; b < bsz; ++b) {
                        hin[b] = t;
                        hin[bsz + b] = std::log(spot[b]);
                        hin[2 * static_cast<std::size_t>(bsz) + b] = alpha[b];
                    }
                    mlp_forward_batch(*opt.neural_hedge, hin.data(), bsz, hpos.data(),
                                      hwork);
                    double* integ = out.hedge_integrals[0].data() + begin;
                    for (int b = 0; b < bsz; ++b) integ[b] += hpos[b] * ds[b];
                    break;
                }
            }
            alpha.swap(anext);
            while (next_rec < n_rec && rec_steps[next_rec] == k + 1) {
                double* dst = out.terminal_x[next_rec].data() + begin;
                for (int b = 0; b < bsz; ++b) dst[b] = x[b];
                ++next_rec;
            }
        }
    });
    return out;
}

void accumulate_pathwise_gradient(const SabrParams& sabr, const LeverageModel& model,
                                  const PathBatch& batch,
                                  std::span<const double> terminal_coef,
                                  int active_slice, double* grad_accum, int jobs) {
    sabr.validate();
    model.validate();
    if (batch.xs.empty()) throw InvalidInput("gradient: batch was run without store_paths");
    if (terminal_coef.size() != static_cast<std::size_t>(batch.n_paths))
        throw InvalidInput("gradient: terminal_coef size mismatch");
    if (active_slice < 0 || active_slice >= static_cast<int>(model.nets.size()))
        throw InvalidInput("gradient: bad active slice");

    const long np = batch.n_paths;
    const double dt = batch.dt;
    const std::size_t pc = model.spec.param_count();
    const long nb = num_blocks(np);
    std::vector<double> block_grad(static_cast<std::size_t>(nb) * pc, 0.0);

    // alpha_b variance adjustment does not enter: alpha is independent of theta.
    for_each_block(np, jobs, [&](long blk, long begin, long end) {
        const int bsz = static_cast<int>(end - begin);
        double* g = block_grad.data() + static_cast<std::size_t>(blk) * pc;
        std::vector<double> abar(bsz), coef(bsz), xg(bsz), lev(bsz);
        MlpBatchWork work;
        for (int b = 0; b < bsz; ++b) abar[b] = terminal_coef[begin + b];
        for (long k = batch.n_steps - 1; k >= 0; --k) {
            const double t = static_cast<double>(k) * dt;
            const int slice = model.interval_of(t);
            const MlpParams& net = model.nets[slice];
            const std::size_t off = static_cast<std::size_t>(k) * np + begin;
            mlp_forward_batch(net, batch.xs.data() + off, bsz, lev.data(), work);
            for (int b = 0; b < bsz; ++b) {
                const double a = batch.alphas[off + b];
                const double l = 1.0 + lev[b];
                coef[b] = abar[b] * (a * batch.dws[off + b] - a * a * l * dt);
            }
            std::fill(xg.begin(), xg.end(), 0.0);
            mlp_backward_batch(net, bsz, coef.data(),
                               slice == active_slice ? g : nullptr, xg.data(), work);
            for (int b = 0; b < bsz; ++b) abar[b] += xg[b];
        }
    });

    for (long blk = 0; blk < nb; ++blk) {
        const double* src = block_grad.data() + static_cast<std::size_t>(blk) * pc;
        for (std::size_t i = 0; i < pc; ++i) grad_accum[i] += src[i];
    }
}

}  // namespace lsvcal
