#include "lsvcal/hedging.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "lsvcal/bs.hpp"
#include "lsvcal/rng.hpp"

namespace lsvcal {

std::vector<double> hedge_integral_bs(const PathBatch& batch, const OptionSpec& opt,
                                      HedgeMode mode, const LeverageModel* model) {
    if (mode != HedgeMode::BsDeltaRunning && mode != HedgeMode::BsDeltaAlpha)
        throw InvalidInput("hedge_integral_bs: mode must be a BS-delta variant");
    if (mode == HedgeMode::BsDeltaRunning && model == nullptr)
        throw InvalidInput("hedge_integral_bs: running vol needs the leverage model");
    if (batch.xs.empty())
        throw InvalidInput("hedge_integral_bs: batch was run without store_paths");
    const double q = opt.ttm / batch.dt;
    const long n_mat = std::lround(q);
    if (n_mat < 1 || n_mat > batch.n_steps ||
        std::abs(q - static_cast<double>(n_mat)) > 1e-9)
        throw InvalidInput("hedge_integral_bs: maturity not on the step grid");

    const long np = batch.n_paths;
    std::vector<double> integ(np, 0.0);
    for (long k = 0; k < n_mat; ++k) {
        const double t = static_cast<double>(k) * batch.dt;
        const std::size_t off = static_cast<std::size_t>(k) * np;
        const bool last = k + 1 == batch.n_steps;
        const std::vector<double>* next = nullptr;
        if (last) next = &batch.terminal_at(batch.horizon);
        const MlpParams* net =
            mode == HedgeMode::BsDeltaRunning ? &model->nets[model->interval_of(t)]
                                              : nullptr;
        for (long p = 0; p < np; ++p) {
            const double x = batch.xs[off + p];
            const double x1 = last ? (*next)[p] : batch.xs[off + np + p];
            const double s = std::exp(x);
            double vol = batch.alphas[off + p];
            if (net) vol *= 1.0 + mlp_eval1(*net, x);
            integ[p] += bs_delta_fast(s, opt.strike, opt.ttm - t, vol, opt.is_call) *
                        (std::exp(x1) - s);
        }
    }
    return integ;
}

CvStats control_variate_stats(std::span<const double> payoffs,
                              std::span<const double> integrals) {
    const std::size_t n = payoffs.size();
    if (n != integrals.size() || n < 2)
        throw InvalidInput("control_variate_stats: equal-length samples, length >= 2");
    double sc = 0, si = 0, scc = 0, sii = 0, sci = 0;
    for (std::size_t k = 0; k < n; ++k) {
        const double c = payoffs[k], i = integrals[k];
        sc += c;
        si += i;
        scc += c * c;
        sii += i * i;
        sci += c * i;
    }
    const double dn = static_cast<double>(n);
    CvStats st;
    st.plain_mean = sc / dn;
    st.plain_var = std::max(scc / dn - st.plain_mean * st.plain_mean, 0.0);
    const double mi = si / dn;
    const double var_i = std::max(sii / dn - mi * mi, 0.0);
    const double cov = sci / dn - st.plain_mean * mi;
    if (var_i <= 0.0) {
        st.degenerate = true;
        st.c_opt = 0.0;
        st.corr = 0.0;
        st.hedged_mean = st.plain_mean;
        st.hedged_var = st.plain_var;
        return st;
    }
    st.c_opt = cov / var_i;
    st.hedged_mean = st.plain_mean - st.c_opt * mi;
    st.hedged_var = st.plain_var - st.c_opt * cov;  // = (1 - corr^2) plain_var
    st.corr = st.plain_var > 0.0 ? cov / std::sqrt(st.plain_var * var_i) : 0.0;
    return st;
}

MlpSpec deep_hedge_spec(int width, int hidden_layers) {
    MlpSpec s;
    s.input_dim = 3;
    s.output_dim = 1;
    s.hidden.assign(hidden_layers, width);
    s.activations.assign(hidden_layers, Activation{Activation::LeakyRelu, 0.2});
    s.validate();
    return s;
}

DeepHedgeResult train_deep_hedge(const SabrParams& sabr, const LeverageModel& model,
                                 const OptionSpec& opt, double market_price,
                                 const MlpSpec& net_spec, std::uint64_t seed,
                                 const DeepHedgeOptions& topt) {
    if (net_spec.input_dim != 3 || net_spec.output_dim != 1)
        throw InvalidInput("train_deep_hedge: net must map (t, log S, alpha) -> position");
    if (topt.iterations < 1 || topt.batch_paths < 2)
        throw InvalidInput("train_deep_hedge: iterations >= 1, batch_paths >= 2");

    DeepHedgeResult res;
    res.net = mlp_init(net_spec, derive_seed(seed, 0xde11), 0.0);  // zero strategy start
    AdamState adam(res.net.data.size());
    std::vector<double> grad(res.net.data.size());
    res.best_loss = std::numeric_limits<double>::infinity();
    MlpParams best = res.net;

    SimOptions sopt;
    sopt.hedge = HedgeMode::None;
    sopt.store_paths = true;
    sopt.jobs = topt.jobs;

    for (int it = 0; it < topt.iterations; ++it) {
        const auto batch = simulate_lsv(sabr, model, opt.ttm, topt.batch_paths,
                                        derive_seed(seed, static_cast<std::uint64_t>(it)),
                                        sopt);
        const long np = batch.n_paths;
        const auto& xt = batch.terminal_at(opt.ttm);
        std::vector<double> resid(np);
        for (long p = 0; p < np; ++p) {
            const double s = std::exp(xt[p]);
            const double payoff = opt.is_call ? std::max(s - opt.strike, 0.0)
                                              : std::max(opt.strike - s, 0.0);
            resid[p] = market_price - payoff;
        }
        // forward: residual r = -C + pi_mkt + I
        const int bsz = static_cast<int>(np);
        std::vector<double> in(3 * static_cast<std::size_t>(bsz));
        std::vector<double> pos(static_cast<std::size_t>(batch.n_steps) * bsz);
        std::vector<double> dsbuf(static_cast<std::size_t>(batch.n_steps) * bsz);
        MlpBatchWork work;
        for (long k = 0; k < batch.n_steps; ++k) {
            const double t = static_cast<double>(k) * batch.dt;
            const std::size_t off = static_cast<std::size_t>(k) * np;
            const bool last = k + 1 == batch.n_steps;
            for (int b = 0; b < bsz; ++b) {
                in[b] = t;
                in[bsz + b] = batch.xs[off + b];
                in[2 * static_cast<std::size_t>(bsz) + b] = batch.alphas[off + b];
                const double x1 = last ? xt[b] : batch.xs[off + np + b];
                dsbuf[off + b] = std::exp(x1) - std::exp(batch.xs[off + b]);
            }
            mlp_forward_batch(res.net, in.data(), bsz, pos.data() + off, work);
            for (int b = 0; b < bsz; ++b) resid[b] += pos[off + b] * dsbuf[off + b];
        }
        double loss = 0.0;
        for (int b = 0; b < bsz; ++b) loss += resid[b] * resid[b];
        loss /= np;
        if (!std::isfinite(loss))
            throw std::runtime_error("train_deep_hedge: loss diverged at iteration " +
                                     std::to_string(it));
        res.loss_history.push_back(loss);
        res.final_loss = loss;
        if (loss < res.best_loss) {
            res.best_loss = loss;
            best = res.net;
        }
        // backward: dLoss/dtheta = mean 2 r_b * sum_k dS_k grad h(t_k, ...)
        std::fill(grad.begin(), grad.end(), 0.0);
        std::vector<double> coef(bsz);
        for (long k = 0; k < batch.n_steps; ++k) {
            const double t = static_cast<double>(k) * batch.dt;
            const std::size_t off = static_cast<std::size_t>(k) * np;
            for (int b = 0; b < bsz; ++b) {
                in[b] = t;
                in[bsz + b] = batch.xs[off + b];
                in[2 * static_cast<std::size_t>(bsz) + b] = batch.alphas[off + b];
                coef[b] = 2.0 * resid[b] * dsbuf[off + b] / static_cast<double>(np);
            }
            mlp_forward_batch(res.net, in.data(), bsz, pos.data() + off, work);
            mlp_backward_batch(res.net, bsz, coef.data(), grad.data(), nullptr, work);
        }
        adam_step(adam, res.net.data, grad, topt.lr);
    }
    res.net = best;
    return res;
}

}  // namespace lsvcal
