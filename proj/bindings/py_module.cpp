#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "lsvcal/calibrate.hpp"
#include "lsvcal/ground_truth.hpp"
#include "lsvcal/harness.hpp"
#include "lsvcal/rng.hpp"

namespace py = pybind11;
using namespace lsvcal;

namespace {

GridSpec make_grid(const std::vector<double>& maturities,
                   const std::vector<double>& half_widths) {
    GridSpec g;
    if (!maturities.empty()) {
        g.maturities = maturities;
        g.log_half_widths = half_widths;
    }
    return g;
}

std::string py_gen_market(const std::string& xi_json, long n_paths,
                          std::uint64_t seed, const std::vector<double>& maturities,
                          const std::vector<double>& half_widths, int jobs) {
    const XiParams xi = xi_from_json(xi_json);
    GenOptions opt;
    opt.jobs = jobs;
    const auto mkt = gen_synthetic_market(xi, make_grid(maturities, half_widths),
                                          n_paths, seed, opt);
    return smile_to_json(mkt.grid);
}

std::string py_calibrate(const std::string& market_json, const std::string& preset,
                         std::uint64_t seed, const std::string& out_dir,
                         const std::string& config_json, int jobs) {
    CalibConfig cfg = CalibConfig::preset(preset);
    if (!config_json.empty()) cfg = config_from_json(config_json, cfg);
    cfg.jobs = jobs;
    const auto market = smile_from_json(market_json);
    auto model = make_leverage_model(
        leverage_net_spec(cfg.net_width, cfg.net_hidden_layers), market.maturities,
        derive_seed(seed, 3));
    const auto report = calibrate_surface(market, model, cfg, derive_seed(seed, 4));
    if (!out_dir.empty()) model.save(out_dir);
    return report_to_json(report, cfg);
}

std::string py_eval_ivs(const std::string& model_dir, double nu, double rho,
                        double alpha0, const std::vector<double>& maturities,
                        const std::vector<std::vector<double>>& strikes,
                        long n_paths, std::uint64_t seed, int jobs) {
    const auto model = LeverageModel::load(model_dir);
    const SabrParams sabr{nu, rho, alpha0, 1.0};
    EvalOptions opt;
    opt.jobs = jobs;
    const auto grid = eval_model_ivs(
        model, sabr, 1.0, maturities,
        std::span<const std::vector<double>>(strikes.data(), strikes.size()), n_paths,
        seed, opt);
    return smile_to_json(grid);
}

}  // namespace

PYBIND11_MODULE(_lsvcal, m) {
    m.doc() = "Monte Carlo calibration of neural leverage functions";

    m.def(
        "bs_price",
        [](double spot, double strike, double ttm, bool is_call, double vol) {
            return bs_price({spot, strike, ttm, is_call}, vol);
        },
        py::arg("spot"), py::arg("strike"), py::arg("ttm"), py::arg("is_call"),
        py::arg("vol"));
    m.def(
        "bs_greeks",
        [](double spot, double strike, double ttm, bool is_call, double vol) {
            const auto g = bs_greeks({spot, strike, ttm, is_call}, vol);
            return py::make_tuple(g.price, g.delta, g.vega);
        },
        py::arg("spot"), py::arg("strike"), py::arg("ttm"), py::arg("is_call"),
        py::arg("vol"));
    m.def(
        "implied_vol",
        [](double spot, double strike, double ttm, bool is_call, double price) {
            return implied_vol(price, {spot, strike, ttm, is_call});
        },
        py::arg("spot"), py::arg("strike"), py::arg("ttm"), py::arg("is_call"),
        py::arg("price"));

    m.def("sample_xi", [](std::uint64_t seed) { return xi_to_json(sample_xi(seed)); },
          py::arg("seed"));
    m.def(
        "local_vol_sq",
        [](const std::string& xi_json, double t, double x) {
            return local_vol_sq(xi_from_json(xi_json), FixedShape{}, t, x);
        },
        py::arg("xi_json"), py::arg("t"), py::arg("x"));

    m.def("gen_market", &py_gen_market, py::arg("xi_json"), py::arg("n_paths") = 100000,
          py::arg("seed") = 1, py::arg("maturities") = std::vector<double>{},
          py::arg("half_widths") = std::vector<double>{}, py::arg("jobs") = 1,
          py::call_guard<py::gil_scoped_release>());
    m.def("calibrate", &py_calibrate, py::arg("market_json"), py::arg("preset") = "ci",
          py::arg("seed") = 1, py::arg("out_dir") = std::string{},
          py::arg("config_json") = std::string{}, py::arg("jobs") = 1,
          py::call_guard<py::gil_scoped_release>());
    m.def("eval_ivs", &py_eval_ivs, py::arg("model_dir"), py::arg("nu"), py::arg("rho"),
          py::arg("alpha0"), py::arg("maturities"), py::arg("strikes"),
          py::arg("n_paths") = 100000, py::arg("seed") = 1, py::arg("jobs") = 1,
          py::call_guard<py::gil_scoped_release>());

    py::register_exception<InvalidInput>(m, "InvalidInput", PyExc_ValueError);
    py::register_exception<IvOutOfBounds>(m, "IvOutOfBounds", PyExc_ArithmeticError);
}
