#include "doctest.h"

#include <cmath>
#include <numeric>

#include "lsvcal/bs.hpp"
#include "lsvcal/hedging.hpp"
#include "lsvcal/rng.hpp"

using namespace lsvcal;

namespace {

LeverageModel unit_model(double T) {
    return make_leverage_model(leverage_net_spec(8, 2), {T}, 42, 0.0);
}

}  // namespace

TEST_CASE("variance identity holds to machine precision") {
    SeqRng rng(13);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<double> c(500), i(500);
        for (std::size_t k = 0; k < c.size(); ++k) {
            c[k] = rng.normal() * 2.0 + 0.5;
            i[k] = 0.7 * c[k] + rng.normal();
        }
        const auto st = control_variate_stats(c, i);
        CHECK(std::abs(st.hedged_var - (1.0 - st.corr * st.corr) * st.plain_var) <=
              1e-12 * std::max(st.plain_var, 1.0));
    }
}

TEST_CASE("perfect hedge and degenerate integral") {
    std::vector<double> c{0.1, 0.5, 0.9, 0.3};
    const auto perfect = control_variate_stats(c, c);
    CHECK(perfect.c_opt == doctest::Approx(1.0));
    CHECK(perfect.hedged_var == doctest::Approx(0.0));
    const std::vector<double> zero(c.size(), 0.0);
    const auto degen = control_variate_stats(c, zero);
    CHECK(degen.degenerate);
    CHECK(degen.c_opt == 0.0);
    CHECK(degen.hedged_var == doctest::Approx(degen.plain_var));
    CHECK_THROWS_AS(control_variate_stats(std::vector<double>{1.0}, zero), InvalidInput);
}

TEST_CASE("independent integral gives no reduction") {
    SeqRng rng(14);
    std::vector<double> c(20000), i(20000);
    for (std::size_t k = 0; k < c.size(); ++k) {
        c[k] = rng.normal();
        i[k] = rng.normal();
    }
    const auto st = control_variate_stats(c, i);
    CHECK(st.hedged_var == doctest::Approx(st.plain_var).epsilon(0.01));
}

TEST_CASE("hedge integral is a mean-zero control") {
    const SabrParams sabr{0.5, -0.5, 0.3, 1.0};
    const auto model = unit_model(0.5);
    SimOptions opt;
    opt.options = {{1.0, 1.0, 0.5, true}};
    const auto batch = simulate_lsv(sabr, model, 0.5, 50000, 7, opt);
    const auto& I = batch.hedge_integrals[0];
    const double m = std::accumulate(I.begin(), I.end(), 0.0) / I.size();
    double v = 0.0;
    for (double x : I) v += (x - m) * (x - m);
    const double se = std::sqrt(v / I.size() / I.size());
    CHECK(std::abs(m) <= 3.0 * se);
}

TEST_CASE("hedge_integral_bs reproduces the inline accumulator") {
    const SabrParams sabr{0.5, -0.5, 0.3, 1.0};
    auto model = make_leverage_model(leverage_net_spec(8, 2), {0.25}, 9, 0.05);
    const OptionSpec opt{1.0, 1.05, 0.25, true};
    SimOptions sopt;
    sopt.options = {opt};
    sopt.store_paths = true;
    const auto batch = simulate_lsv(sabr, model, 0.25, 5000, 3, sopt);
    const auto recomputed =
        hedge_integral_bs(batch, opt, HedgeMode::BsDeltaRunning, &model);
    for (long n = 0; n < batch.n_paths; ++n)
        CHECK(recomputed[n] == doctest::Approx(batch.hedge_integrals[0][n]).epsilon(1e-12));
    CHECK_THROWS_AS(hedge_integral_bs(batch, opt, HedgeMode::None, &model), InvalidInput);
    CHECK_THROWS_AS(hedge_integral_bs(batch, opt, HedgeMode::BsDeltaRunning, nullptr),
                    InvalidInput);
    CHECK_THROWS_AS(
        hedge_integral_bs(batch, {1.0, 1.0, 0.33, true}, HedgeMode::BsDeltaAlpha, nullptr),
        InvalidInput);  // maturity off the grid
}

TEST_CASE("left-point evaluation of the integrand (regression)") {
    // A right-point hedge correlates the integrand with the increment and
    // biases E[I] away from zero; verify the implementation's integral
    // matches the left-point construction exactly and differs from the
    // right-point one.
    const SabrParams sabr{0.0, 0.0, 0.4, 1.0};
    const auto model = unit_model(0.25);
    const OptionSpec opt{1.0, 1.0, 0.25, true};
    SimOptions sopt;
    sopt.options = {opt};
    sopt.hedge = HedgeMode::BsDeltaAlpha;
    sopt.store_paths = true;
    const auto batch = simulate_lsv(sabr, model, 0.25, 2000, 5, sopt);
    const auto& xt = batch.terminal_at(0.25);
    const long np = batch.n_paths;
    for (long n = 0; n < std::min<long>(np, 50); ++n) {
        double left = 0.0, right = 0.0;
        for (long k = 0; k < batch.n_steps; ++k) {
            const double t = static_cast<double>(k) * batch.dt;
            const double x0 = batch.xs[static_cast<std::size_t>(k) * np + n];
            const double x1 = k + 1 < batch.n_steps
                                  ? batch.xs[static_cast<std::size_t>(k + 1) * np + n]
                                  : xt[n];
            const double a = batch.alphas[static_cast<std::size_t>(k) * np + n];
            const double ds = std::exp(x1) - std::exp(x0);
            left += bs_delta_fast(std::exp(x0), opt.strike, opt.ttm - t, a, true) * ds;
            right += bs_delta_fast(std::exp(x1), opt.strike, opt.ttm - t, a, true) * ds;
        }
        CHECK(batch.hedge_integrals[0][n] == doctest::Approx(left).epsilon(1e-12));
        CHECK(batch.hedge_integrals[0][n] != right);
    }
}

TEST_CASE("deterministic-vol hedging removes almost all variance") {
    // nu = 0, L == 1: Black-Scholes world, delta hedging is exact in the
    // continuum; at dt = 1/500 the residual variance must be tiny.
    const SabrParams sabr{0.0, 0.0, 0.3, 1.0};
    const auto model = unit_model(0.5);
    const OptionSpec atm{1.0, 1.0, 0.5, true};
    SimOptions sopt;
    sopt.dt = 1.0 / 500.0;
    sopt.options = {atm};
    const auto batch = simulate_lsv(sabr, model, 0.5, 20000, 8, sopt);
    const auto& xt = batch.terminal_at(0.5);
    std::vector<double> payoff(batch.n_paths);
    for (long n = 0; n < batch.n_paths; ++n)
        payoff[n] = std::max(std::exp(xt[n]) - 1.0, 0.0);
    const auto st = control_variate_stats(payoff, batch.hedge_integrals[0]);
    CHECK(st.hedged_var <= 0.05 * st.plain_var);
}

TEST_CASE("deep hedge: zero start, monitored best, BS variance reduction") {
    const SabrParams sabr{0.0, 0.0, 0.3, 1.0};
    const auto model = unit_model(0.25);
    const OptionSpec atm{1.0, 1.0, 0.25, true};
    const double pi_mkt = bs_price(atm, 0.3);

    DeepHedgeOptions topt;
    topt.iterations = 400;
    topt.batch_paths = 2048;
    topt.lr = 5e-3;
    const auto res =
        train_deep_hedge(sabr, model, atm, pi_mkt, deep_hedge_spec(16, 2), 77, topt);

    // zero-initialized strategy: first loss is E[(pi_mkt - C)^2]
    {
        SimOptions sopt;
        sopt.hedge = HedgeMode::None;
        const auto b = simulate_lsv(sabr, model, 0.25, topt.batch_paths,
                                    derive_seed(77, 0), sopt);
        const auto& xt = b.terminal_at(0.25);
        double l0 = 0.0;
        for (long n = 0; n < b.n_paths; ++n) {
            const double r = pi_mkt - std::max(std::exp(xt[n]) - 1.0, 0.0);
            l0 += r * r;
        }
        l0 /= static_cast<double>(b.n_paths);
        CHECK(res.loss_history.front() == doctest::Approx(l0).epsilon(1e-12));
    }

    // best-so-far is non-increasing
    double best = res.loss_history.front();
    for (double l : res.loss_history) {
        CHECK(l >= 0.0);
        best = std::min(best, l);
    }
    CHECK(res.best_loss == doctest::Approx(best));

    // held-out comparison against the analytic BS delta hedge
    SimOptions ho;
    ho.options = {atm};
    ho.store_paths = true;
    ho.hedge = HedgeMode::BsDeltaAlpha;
    const auto batch = simulate_lsv(sabr, model, 0.25, 20000, 999, ho);
    const auto& xt = batch.terminal_at(0.25);
    std::vector<double> payoff(batch.n_paths);
    for (long n = 0; n < batch.n_paths; ++n)
        payoff[n] = std::max(std::exp(xt[n]) - 1.0, 0.0);
    const auto st_bs = control_variate_stats(payoff, batch.hedge_integrals[0]);

    SimOptions nh;
    nh.options = {atm};
    nh.hedge = HedgeMode::Neural;
    nh.neural_hedge = &res.net;
    const auto nbatch = simulate_lsv(sabr, model, 0.25, 20000, 999, nh);
    const auto st_nn = control_variate_stats(payoff, nbatch.hedge_integrals[0]);

    const double red_bs = st_bs.plain_var / st_bs.hedged_var;
    const double red_nn = st_nn.plain_var / st_nn.hedged_var;
    CHECK(red_nn >= 0.5 * red_bs);
}
