#include "lsvcal/ground_truth.hpp"

#include <algorithm>
#include <cmath>

#include "lsvcal/bs.hpp"
#include "lsvcal/rng.hpp"
#include "json.hpp"

namespace lsvcal {

void XiParams::validate() const {
    if (!(p1 > 0.0) || !(p2 > 0.0)) throw InvalidInput("xi: p1, p2 must be positive");
    if (!(sigma0 > 0.0) || !(sigma1 > 0.0) || !(sigma2 > 0.0))
        throw InvalidInput("xi: sigmas must be positive");
    // p1 + p2 <= 1 is not required: the family takes absolute values.
}

double local_vol_sq(const XiParams& xi, const FixedShape& shape, double t, double x) {
    if (!(t > 0.0)) throw InvalidInput("local_vol_sq: t must be positive");
    const double p[3] = {xi.p0(), xi.p1, xi.p2};
    const double s[3] = {xi.sigma0, xi.sigma1, xi.sigma2};
    double num = 0.0, den = 0.0;
    for (int i = 0; i < 3; ++i) {
        const double k = std::exp(-x * x / (2.0 * t * s[i] * s[i]) - t * s[i] * s[i] / 8.0);
        num += p[i] * s[i] * k;
        den += p[i] / s[i] * k;
    }
    double lam = 0.0;
    if (t <= 0.1) {
        const double hinge = shape.gamma1 * std::max(x - shape.beta1, 0.0) +
                             shape.gamma2 * std::max(-x - shape.beta2, 0.0);
        lam = std::pow(1.0 / (1.0 + 0.1 * t), shape.lambda2) *
              std::min(std::pow(hinge, shape.kappa), shape.lambda1);
    }
    const double damp = t > 0.1 ? 0.4 : 1.0;
    const double ratio = (num + lam) * damp / (den + 0.01);
    return 0.25 * std::min(2.0, std::abs(ratio));
}

XiParams sample_xi(std::uint64_t seed) {
    SeqRng rng(seed);
    XiParams xi;
    xi.p1 = rng.uniform(0.4, 0.5);
    xi.p2 = rng.uniform(0.4, 0.7);
    xi.sigma0 = rng.uniform(0.5, 1.7);
    xi.sigma1 = rng.uniform(0.2, 0.4);
    xi.sigma2 = rng.uniform(0.5, 1.7);
    return xi;
}

std::vector<XiParams> perturb_xi(const XiParams& xi, double u, int m, std::uint64_t seed) {
    if (u < 0.0 || m < 1) throw InvalidInput("perturb_xi: u >= 0 and m >= 1 required");
    SeqRng rng(seed);
    std::vector<XiParams> out;
    out.reserve(m);
    for (int i = 0; i < m; ++i) {
        XiParams q = xi;
        q.p1 += rng.uniform(-u, u);
        q.p2 += rng.uniform(-u, u);
        q.sigma0 += rng.uniform(-u, u);
        q.sigma1 += rng.uniform(-u, u);
        q.sigma2 += rng.uniform(-u, u);
        out.push_back(q);
    }
    return out;
}

std::string xi_to_json(const XiParams& xi) {
    return nlohmann::json{{"p1", xi.p1},
                          {"p2", xi.p2},
                          {"sigma0", xi.sigma0},
                          {"sigma1", xi.sigma1},
                          {"sigma2", xi.sigma2}}
        .dump(2);
}

XiParams xi_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    XiParams xi{j.at("p1").get<double>(), j.at("p2").get<double>(),
                j.at("sigma0").get<double>(), j.at("sigma1").get<double>(),
                j.at("sigma2").get<double>()};
    xi.validate();
    return xi;
}

namespace {

struct OptionRef {
    int slice;
    double strike;
    double maturity;
};

long steps_for(double t, double dt) {
    const double q = t / dt;
    const long k = std::lround(q);
    if (std::abs(q - static_cast<double>(k)) > 1e-9)
        throw InvalidInput("dt must divide every maturity");
    return k;
}

}  // namespace

SyntheticMarket gen_synthetic_market(const XiParams& xi, const GridSpec& grid,
                                     long n_paths, std::uint64_t seed,
                                     const GenOptions& opt) {
    xi.validate();
    grid.validate();
    if (n_paths < 10000) throw InvalidInput("gen_synthetic_market: n_paths >= 10^4");
    const double dt = opt.dt;
    if (!(dt > 0.0)) throw InvalidInput("gen_synthetic_market: dt must be positive");

    const int n_slices = static_cast<int>(grid.maturities.size());
    std::vector<long> slice_steps(n_slices);
    for (int i = 0; i < n_slices; ++i)
        slice_steps[i] = steps_for(grid.maturities[i], dt);
    const long total_steps = slice_steps.back();

    std::vector<OptionRef> options;
    for (int i = 0; i < n_slices; ++i)
        for (double k : grid.strikes(i))
            options.push_back({i, k, grid.maturities[i]});
    const int n_opt = static_cast<int>(options.size());

    // Per-block, per-option moment sums: C, I, C^2, I^2, C*I.
    const long nb = num_blocks(n_paths);
    std::vector<double> sums(static_cast<std::size_t>(nb) * n_opt * 5, 0.0);
    std::vector<double> spot_sums(static_cast<std::size_t>(nb) * n_slices * 2, 0.0);

    const double x0 = std::log(grid.spot);
    const double sqdt = std::sqrt(dt);

    for_each_block(n_paths, opt.jobs, [&](long b, long begin, long end) {
        double* bs_sum = sums.data() + static_cast<std::size_t>(b) * n_opt * 5;
        double* sp_sum = spot_sums.data() + static_cast<std::size_t>(b) * n_slices * 2;
        std::vector<double> integ(n_opt);
        std::vector<double> term_spot(n_slices);
        for (long path = begin; path < end; ++path) {
            PathRng rng(seed, static_cast<std::uint64_t>(path));
            std::fill(integ.begin(), integ.end(), 0.0);
            double x = x0;
            double s = grid.spot;
            int next_slice = 0;
            for (long k = 0; k < total_steps; ++k) {
                const double t = static_cast<double>(k) * dt;
                const double a2 =
                    opt.const_vol_override > 0.0
                        ? opt.const_vol_override * opt.const_vol_override
                        : local_vol_sq(xi, opt.shape, std::max(t, dt), x);
                const double a = std::sqrt(a2);
                const double z = rng.normals(static_cast<std::uint32_t>(k)).first;
                const double x_next = x - 0.5 * a2 * dt + a * sqdt * z;
                const double s_next = std::exp(x_next);
                const double ds = s_next - s;
                // left-point delta hedge at the running local vol
                for (int o = 0; o < n_opt; ++o) {
                    if (options[o].maturity > t + 0.5 * dt)
                        integ[o] += bs_delta_fast(s, options[o].strike,
                                                  options[o].maturity - t, a, true) *
                                    ds;
                }
                x = x_next;
                s = s_next;
                while (next_slice < n_slices && slice_steps[next_slice] == k + 1) {
                    term_spot[next_slice] = s;
                    ++next_slice;
                }
            }
            for (int o = 0; o < n_opt; ++o) {
                const double c =
                    std::max(term_spot[options[o].slice] - options[o].strike, 0.0);
                const double i = integ[o];
                double* m = bs_sum + static_cast<std::size_t>(o) * 5;
                m[0] += c;
                m[1] += i;
                m[2] += c * c;
                m[3] += i * i;
                m[4] += c * i;
            }
            for (int i = 0; i < n_slices; ++i) {
                sp_sum[2 * i] += term_spot[i];
                sp_sum[2 * i + 1] += term_spot[i] * term_spot[i];
            }
        }
    });

    // Ordered reduction over blocks.
    std::vector<double> tot(static_cast<std::size_t>(n_opt) * 5, 0.0);
    std::vector<double> sp_tot(static_cast<std::size_t>(n_slices) * 2, 0.0);
    for (long b = 0; b < nb; ++b) {
        const double* src = sums.data() + static_cast<std::size_t>(b) * n_opt * 5;
        for (std::size_t i = 0; i < tot.size(); ++i) tot[i] += src[i];
        const double* sp = spot_sums.data() + static_cast<std::size_t>(b) * n_slices * 2;
        for (std::size_t i = 0; i < sp_tot.size(); ++i) sp_tot[i] += sp[i];
    }

    SyntheticMarket out;
    out.grid.spot = grid.spot;
    out.grid.maturities = grid.maturities;
    out.grid.slices.resize(n_slices);
    const double n = static_cast<double>(n_paths);
    for (int o = 0; o < n_opt; ++o) {
        const double* m = tot.data() + static_cast<std::size_t>(o) * 5;
        const double mc = m[0] / n, mi = m[1] / n;
        const double var_c = std::max(m[2] / n - mc * mc, 0.0);
        const double var_i = std::max(m[3] / n - mi * mi, 0.0);
        const double cov = m[4] / n - mc * mi;
        const double c_opt = var_i > 0.0 ? cov / var_i : 0.0;
        const double price = mc - c_opt * mi;
        const double var_h = std::max(var_c - c_opt * cov, 0.0);
        SmilePoint p;
        p.strike = options[o].strike;
        p.price = price;
        p.std_err = std::sqrt(var_h / n);
        try {
            p.implied_vol = implied_vol(
                price, {grid.spot, p.strike, options[o].maturity, true});
        } catch (const IvOutOfBounds&) {
            p.skipped = true;
            p.implied_vol = 0.0;
        }
        out.grid.slices[options[o].slice].push_back(p);
    }
    out.mean_terminal_spot.resize(n_slices);
    out.mean_terminal_spot_se.resize(n_slices);
    for (int i = 0; i < n_slices; ++i) {
        const double ms = sp_tot[2 * i] / n;
        const double vs = std::max(sp_tot[2 * i + 1] / n - ms * ms, 0.0);
        out.mean_terminal_spot[i] = ms;
        out.mean_terminal_spot_se[i] = std::sqrt(vs / n);
    }
    out.grid.validate();
    return out;
}

}  // namespace lsvcal
