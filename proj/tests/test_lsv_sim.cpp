#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numeric>

#include "lsvcal/bs.hpp"
#include "lsvcal/lsv_sim.hpp"
#include "lsvcal/rng.hpp"

using namespace lsvcal;

namespace {

LeverageModel flat_model(std::vector<double> maturities, int width = 8,
                         int layers = 2, double scale = 0.0) {
    return make_leverage_model(leverage_net_spec(width, layers), std::move(maturities),
                               42, scale);
}

double sample_mean(const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_se(const std::vector<double>& v) {
    const double m = sample_mean(v);
    double s2 = 0.0;
    for (double x : v) s2 += (x - m) * (x - m);
    return std::sqrt(s2 / static_cast<double>(v.size()) / static_cast<double>(v.size()));
}

}  // namespace

TEST_CASE("leverage interval convention is right-open") {
    const auto m = flat_model({0.25, 0.5, 1.0});
    CHECK(m.interval_of(0.0) == 0);
    CHECK(m.interval_of(0.24) == 0);
    CHECK(m.interval_of(0.25) == 1);  // t = T_1 uses the second interval
    CHECK(m.interval_of(0.9999999) == 2);
    CHECK_THROWS_AS(m.interval_of(1.0), InvalidInput);
    CHECK_THROWS_AS(m.interval_of(-0.1), InvalidInput);
}

TEST_CASE("zero-initialized output layers give L == 1") {
    const auto m = flat_model({0.5});
    for (double x : {-1.0, 0.0, 0.7}) CHECK(m.eval(0.1, x) == 1.0);
}

TEST_CASE("leverage_eval matches the network plus one") {
    auto m = flat_model({0.5}, 8, 2, 1.0);
    for (double x : {-0.5, 0.0, 0.9})
        CHECK(m.eval(0.2, x) == doctest::Approx(1.0 + mlp_eval1(m.nets[0], x)));
    // taped evaluation agrees with the plain forward
    Tape t;
    const auto leaves = make_param_leaves(t, m.nets[0]);
    const auto x = t.leaf(0.3);
    const auto y = leverage_eval_taped(t, m, 0, leaves, x);
    CHECK(t.val(y) == m.eval(0.2, 0.3));
}

TEST_CASE("nu = 0 with L == 1 reproduces Black-Scholes") {
    const SabrParams sabr{0.0, 0.0, 0.3, 1.0};
    const auto model = flat_model({0.5});
    SimOptions opt;
    opt.options = {{1.0, 1.0, 0.5, true}};
    const auto batch = simulate_lsv(sabr, model, 0.5, 100000, 11, opt);
    const auto& xt = batch.terminal_at(0.5);
    std::vector<double> hedged(batch.n_paths);
    for (long n = 0; n < batch.n_paths; ++n)
        hedged[n] = std::max(std::exp(xt[n]) - 1.0, 0.0) - batch.hedge_integrals[0][n];
    const double ref = bs_price({1.0, 1.0, 0.5, true}, 0.3);
    CHECK(std::abs(sample_mean(hedged) - ref) <= 3.0 * sample_se(hedged) + 1e-5);
}

TEST_CASE("martingale property of the discounted spot") {
    const SabrParams sabr{0.5, -0.5, 0.3, 1.0};
    auto model = flat_model({0.5}, 8, 2, 0.05);  // mildly non-trivial leverage
    const auto batch = simulate_lsv(sabr, model, 0.5, 100000, 21, {});
    const auto& xt = batch.terminal_at(0.5);
    std::vector<double> spot(batch.n_paths);
    for (long n = 0; n < batch.n_paths; ++n) spot[n] = std::exp(xt[n]);
    CHECK(std::abs(sample_mean(spot) - 1.0) <= 3.0 * sample_se(spot));
}

TEST_CASE("exact alpha moments") {
    const double nu = 0.6, a0 = 0.25, T = 0.5;
    const SabrParams sabr{nu, -0.3, a0, 1.0};
    const auto model = flat_model({T});
    SimOptions opt;
    opt.store_paths = true;
    opt.hedge = HedgeMode::None;
    const long np = 100000;
    const auto batch = simulate_lsv(sabr, model, T, np, 31, opt);
    // stored alphas hold alpha at t_k; the last stored step is T - dt
    const long last = batch.n_steps - 1;
    const double t_last = static_cast<double>(last) * batch.dt;
    std::vector<double> a(np), la(np);
    for (long n = 0; n < np; ++n) {
        a[n] = batch.alphas[static_cast<std::size_t>(last) * np + n];
        la[n] = std::log(a[n]);
    }
    CHECK(std::abs(sample_mean(a) - a0) <= 3.0 * sample_se(a));
    CHECK(std::abs(sample_mean(la) - (std::log(a0) - 0.5 * nu * nu * t_last)) <=
          3.0 * sample_se(la));
    for (double v : a) CHECK(v > 0.0);
}

TEST_CASE("driving shocks have correlation rho") {
    const double rho = -0.5, rp = std::sqrt(1.0 - rho * rho);
    double sxy = 0, sxx = 0, syy = 0;
    const long n = 1000000;
    for (long p = 0; p < n; ++p) {
        const auto z = PathRng(3, p).normals(0);
        const double zw = z.first;
        const double zb = rho * z.first + rp * z.second;
        sxy += zw * zb;
        sxx += zw * zw;
        syy += zb * zb;
    }
    CHECK(sxy / std::sqrt(sxx * syy) == doctest::Approx(rho).epsilon(0.01 / 0.5));
}

TEST_CASE("simulation is deterministic across worker counts") {
    const SabrParams sabr{0.4, -0.2, 0.3, 1.0};
    auto model = flat_model({0.25}, 8, 2, 0.05);
    SimOptions a, b;
    a.options = b.options = {{1.0, 1.1, 0.25, true}};
    b.jobs = 4;
    const auto ba = simulate_lsv(sabr, model, 0.25, 12000, 77, a);
    const auto bb = simulate_lsv(sabr, model, 0.25, 12000, 77, b);
    CHECK(ba.terminal_at(0.25) == bb.terminal_at(0.25));
    CHECK(ba.hedge_integrals[0] == bb.hedge_integrals[0]);
}

TEST_CASE("pathwise gradient matches CRN finite differences") {
    const SabrParams sabr{0.4, -0.3, 0.3, 1.0};
    const double T = 0.25;
    auto model = flat_model({T}, 4, 2, 0.05);
    const OptionSpec opt{1.0, 1.0, T, true};
    const long np = 10000;
    SimOptions sopt;
    sopt.hedge = HedgeMode::None;
    sopt.store_paths = true;

    auto mean_payoff = [&](const LeverageModel& m) {
        const auto b = simulate_lsv(sabr, m, T, np, 5, sopt);
        const auto& xt = b.terminal_at(T);
        double s = 0.0;
        for (long n = 0; n < np; ++n) s += std::max(std::exp(xt[n]) - opt.strike, 0.0);
        return s / static_cast<double>(np);
    };

    const auto base = simulate_lsv(sabr, model, T, np, 5, sopt);
    const auto& xt = base.terminal_at(T);
    std::vector<double> coef(np);
    for (long n = 0; n < np; ++n) {
        const double s = std::exp(xt[n]);
        coef[n] = s > opt.strike ? s / static_cast<double>(np) : 0.0;
    }
    std::vector<double> grad(model.nets[0].data.size(), 0.0);
    accumulate_pathwise_gradient(sabr, model, base, coef, 0, grad.data(), 1);

    const double h = 1e-5;
    // check a handful of parameters including output-layer weights
    const std::size_t pc = grad.size();
    for (std::size_t i : {std::size_t{0}, std::size_t{3}, pc / 2, pc - 2, pc - 1}) {
        const double save = model.nets[0].data[i];
        model.nets[0].data[i] = save + h;
        const double up = mean_payoff(model);
        model.nets[0].data[i] = save - h;
        const double dn = mean_payoff(model);
        model.nets[0].data[i] = save;
        const double fd = (up - dn) / (2.0 * h);
        if (std::abs(fd) < 1e-8) continue;
        CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-3));
    }
}

TEST_CASE("model save/load round-trip") {
    auto m = flat_model({0.25, 0.5}, 8, 2, 0.05);
    const auto dir = std::filesystem::temp_directory_path() / "lsvcal_model_test";
    m.save(dir.string());
    const auto l = LeverageModel::load(dir.string());
    CHECK(l.maturities == m.maturities);
    REQUIRE(l.nets.size() == m.nets.size());
    for (std::size_t i = 0; i < l.nets.size(); ++i) CHECK(l.nets[i].data == m.nets[i].data);
    std::filesystem::remove_all(dir);
}

TEST_CASE("simulate_lsv validates its grid") {
    const SabrParams sabr{0.4, -0.2, 0.3, 1.0};
    const auto model = flat_model({0.25});
    SimOptions opt;
    opt.dt = 0.013;  // does not divide the horizon
    CHECK_THROWS_AS(simulate_lsv(sabr, model, 0.25, 100, 1, opt), InvalidInput);
    SimOptions opt2;
    opt2.options = {{1.0, 1.0, 0.5, true}};  // matures beyond the horizon
    CHECK_THROWS_AS(simulate_lsv(sabr, model, 0.25, 100, 1, opt2), InvalidInput);
    CHECK_THROWS_AS(simulate_lsv({0.4, -1.5, 0.3, 1.0}, model, 0.25, 100, 1, {}),
                    InvalidInput);
}
