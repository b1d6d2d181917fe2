// lsv-calib: command-line front end for market generation, calibration,
// robust calibration, the statistical study, pricing and extrapolation.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "lsvcal/calibrate.hpp"
#include "lsvcal/ground_truth.hpp"
#include "lsvcal/harness.hpp"
#include "lsvcal/rng.hpp"

namespace {

using namespace lsvcal;

std::string read_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << text;
    if (!text.empty() && text.back() != '\n') f << '\n';
}

std::string sabr_to_json(const SabrParams& s) {
    return nlohmann::json{
        {"nu", s.nu}, {"rho", s.rho}, {"alpha0", s.alpha0}, {"s0", s.s0}}
        .dump(2);
}

SabrParams sabr_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    SabrParams s{j.at("nu").get<double>(), j.at("rho").get<double>(),
                 j.at("alpha0").get<double>(), j.value("s0", 1.0)};
    s.validate();
    return s;
}

std::uint64_t hash_file(const std::string& path) {
    const auto bytes = read_file(path);
    return fnv1a(bytes.data(), bytes.size());
}

GridSpec grid_for_slices(int n_slices) {
    GridSpec g;
    if (n_slices > 0 && n_slices < static_cast<int>(g.maturities.size())) {
        g.maturities.resize(n_slices);
        g.log_half_widths.resize(n_slices);
    }
    return g;
}

CalibConfig make_config(const std::string& preset, const std::string& config_path,
                        int jobs) {
    CalibConfig cfg = CalibConfig::preset(preset);
    if (!config_path.empty()) cfg = config_from_json(read_file(config_path), cfg);
    cfg.jobs = jobs;
    return cfg;
}

void write_iv_table(const CalibReport& rep, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "maturity,strike,iv_market,iv_model,abs_error,std_err\n";
    char buf[256];
    for (const auto& s : rep.slices)
        for (std::size_t j = 0; j < s.strikes.size(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                          s.maturity, s.strikes[j], s.iv_market[j], s.iv_model[j],
                          s.abs_error[j], s.std_err[j]);
            f << buf;
        }
}

void save_calibration(const std::string& out_dir, const LeverageModel& model,
                      const CalibReport& rep, const CalibConfig& cfg) {
    std::filesystem::create_directories(out_dir);
    model.save(out_dir);
    write_file(out_dir + "/sabr.json", sabr_to_json(rep.sabr));
    std::vector<std::pair<std::string, std::uint64_t>> hashes;
    for (std::size_t i = 0; i < model.nets.size(); ++i) {
        const std::string name = "net_" + std::to_string(i) + ".bin";
        hashes.emplace_back(name, hash_file(out_dir + "/" + name));
    }
    write_file(out_dir + "/report.json", report_to_json(rep, cfg, hashes));
    write_iv_table(rep, out_dir + "/iv_table.csv");
}

int run(int argc, char** argv) {
    CLI::App app{"Monte Carlo calibration of neural leverage functions for a "
                 "SABR-type LSV model"};
    app.require_subcommand(1);
    std::uint64_t seed = 1;
    int jobs = 1;
    std::string preset = "desk";
    std::string config_path;
    app.add_option("--seed", seed, "master RNG seed")->capture_default_str();
    app.add_option("--jobs", jobs, "worker threads")->capture_default_str();
    app.add_option("--preset", preset, "scale preset")
        ->check(CLI::IsMember({"desk", "paper", "ci"}))
        ->capture_default_str();
    app.add_option("--config", config_path, "JSON config overriding the preset");

    // gen-market
    auto* gen = app.add_subcommand("gen-market", "generate a synthetic market CSV");
    std::string gen_out = "market.csv";
    std::string gen_xi_in, gen_xi_out;
    long gen_paths = 1000000;
    int gen_slices = 0;
    gen->add_option("--out", gen_out, "output CSV path")->capture_default_str();
    gen->add_option("--paths", gen_paths, "Monte Carlo paths")->capture_default_str();
    gen->add_option("--xi", gen_xi_in, "xi parameter JSON (default: sample from seed)");
    gen->add_option("--xi-out", gen_xi_out, "write the xi parameters used");
    gen->add_option("--slices", gen_slices, "restrict to the first n maturities");

    // calibrate
    auto* cal = app.add_subcommand("calibrate", "calibrate a leverage model to a market");
    std::string cal_market, cal_out = "model";
    cal->add_option("--market", cal_market, "market CSV")->required();
    cal->add_option("--out", cal_out, "output directory")->capture_default_str();

    // robust
    auto* rob = app.add_subcommand("robust",
                                   "robust (bid-ask) calibration against perturbed smiles");
    std::string rob_xi, rob_out = "model_robust";
    int rob_m = 4;
    double rob_u = 0.01;
    long rob_paths = 1000000;
    int rob_slices = 0;
    rob->add_option("--xi", rob_xi, "generating xi JSON")->required();
    rob->add_option("--m", rob_m, "number of target smiles")->capture_default_str();
    rob->add_option("--u", rob_u, "perturbation radius")->capture_default_str();
    rob->add_option("--paths", rob_paths, "market generation paths")->capture_default_str();
    rob->add_option("--out", rob_out, "output directory")->capture_default_str();
    rob->add_option("--slices", rob_slices, "restrict to the first n maturities");

    // stat-test
    auto* st = app.add_subcommand("stat-test", "end-to-end statistical study");
    int st_m = 5;
    long st_gen_paths = 1000000;
    int st_slices = 0;
    std::string st_out = "stat";
    st->add_option("--m", st_m, "number of study samples")->capture_default_str();
    st->add_option("--gen-paths", st_gen_paths, "market generation paths")
        ->capture_default_str();
    st->add_option("--slices", st_slices, "restrict to the first n maturities");
    st->add_option("--out", st_out, "output directory")->capture_default_str();

    // price
    auto* pr = app.add_subcommand("price", "price one option under a calibrated model");
    std::string pr_model;
    double pr_strike = 1.0, pr_maturity = 0.5;
    bool pr_put = false;
    long pr_paths = 1000000;
    std::string pr_out;
    pr->add_option("--model", pr_model, "calibrated model directory")->required();
    pr->add_option("--strike", pr_strike, "strike")->capture_default_str();
    pr->add_option("--maturity", pr_maturity, "maturity in years")->capture_default_str();
    pr->add_flag("--put", pr_put, "price a put (default call)");
    pr->add_option("--paths", pr_paths, "Monte Carlo paths")->capture_default_str();
    pr->add_option("--out", pr_out, "write the JSON result here instead of stdout");

    // extrapolate
    auto* ex = app.add_subcommand("extrapolate",
                                  "model vs ground-truth IVs on a widened strike grid");
    std::string ex_model, ex_xi, ex_out = "extrapolation";
    double ex_factor = 1.5;
    long ex_paths = 1000000;
    int ex_slices = 0;
    ex->add_option("--model", ex_model, "calibrated model directory")->required();
    ex->add_option("--xi", ex_xi, "generating xi JSON")->required();
    ex->add_option("--factor", ex_factor, "strike-range widening factor")
        ->capture_default_str();
    ex->add_option("--paths", ex_paths, "paths for truth and model evaluation")
        ->capture_default_str();
    ex->add_option("--out", ex_out, "output prefix (.csv/.json)")->capture_default_str();
    ex->add_option("--slices", ex_slices, "restrict to the first n maturities");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (gen->parsed()) {
        const XiParams xi = gen_xi_in.empty() ? sample_xi(derive_seed(seed, 1))
                                              : xi_from_json(read_file(gen_xi_in));
        GenOptions gopt;
        gopt.jobs = jobs;
        const auto market = gen_synthetic_market(xi, grid_for_slices(gen_slices),
                                                 gen_paths, derive_seed(seed, 2), gopt);
        save_smile_csv(market.grid, gen_out);
        if (!gen_xi_out.empty()) write_file(gen_xi_out, xi_to_json(xi));
        std::cout << "wrote " << gen_out << " ("
                  << market.grid.maturities.size() << " maturities)\n";
        return 0;
    }

    if (cal->parsed()) {
        const CalibConfig cfg = make_config(preset, config_path, jobs);
        const auto market = load_smile_csv(cal_market);
        auto model = make_leverage_model(
            leverage_net_spec(cfg.net_width, cfg.net_hidden_layers), market.maturities,
            derive_seed(seed, 3));
        const auto rep = calibrate_surface(market, model, cfg, derive_seed(seed, 4));
        save_calibration(cal_out, model, rep, cfg);
        std::cout << "calibrated " << rep.slices.size() << " slices; report in "
                  << cal_out << "/report.json\n";
        return 0;
    }

    if (rob->parsed()) {
        CalibConfig cfg = make_config(preset, config_path, jobs);
        cfg.robust_m = rob_m;
        cfg.robust_u = rob_u;
        const XiParams xi = xi_from_json(read_file(rob_xi));
        const GridSpec grid = grid_for_slices(rob_slices);
        GenOptions gopt;
        gopt.jobs = jobs;
        const auto base =
            gen_synthetic_market(xi, grid, rob_paths, derive_seed(seed, 2), gopt);
        std::vector<SmileGrid> extra;
        for (const auto& q :
             perturb_xi(xi, rob_u, rob_m - 1, derive_seed(seed, 5))) {
            extra.push_back(gen_synthetic_market(q, grid, rob_paths,
                                                 derive_seed(seed, 6 + extra.size()),
                                                 gopt)
                                .grid);
        }
        auto model = make_leverage_model(
            leverage_net_spec(cfg.net_width, cfg.net_hidden_layers), base.grid.maturities,
            derive_seed(seed, 3));
        const auto rep = calibrate_surface(
            base.grid, model, cfg, derive_seed(seed, 4),
            std::span<const SmileGrid>(extra.data(), extra.size()));
        save_calibration(rob_out, model, rep, cfg);
        std::cout << "robust-calibrated against " << rob_m << " smiles; report in "
                  << rob_out << "/report.json\n";
        return 0;
    }

    if (st->parsed()) {
        StatTestOptions opt;
        opt.m_runs = st_m;
        opt.calib = make_config(preset, config_path, 1);
        opt.grid = grid_for_slices(st_slices);
        opt.gen_paths = st_gen_paths;
        opt.jobs = jobs;
        const auto summary = run_stat_test(seed, opt, st_out);
        std::cout << "stat-test: " << summary.n_runs << " runs, " << summary.n_skipped
                  << " skipped; results in " << st_out << "/\n";
        return 0;
    }

    if (pr->parsed()) {
        const auto model = LeverageModel::load(pr_model);
        const auto sabr = sabr_from_json(read_file(pr_model + "/sabr.json"));
        std::vector<std::vector<double>> strikes{{pr_strike}};
        const double mat[1] = {pr_maturity};
        EvalOptions eopt;
        eopt.jobs = jobs;
        const auto grid = eval_model_ivs(
            model, sabr, sabr.s0, std::span<const double>(mat, 1),
            std::span<const std::vector<double>>(strikes.data(), 1), pr_paths,
            derive_seed(seed, 7), eopt);
        const SmilePoint p = grid.slices[0][0];
        // the evaluator priced a call for K <= S0 and a put otherwise;
        // convert to the requested payoff by zero-rate parity
        const bool eval_was_call = pr_strike <= sabr.s0;
        double price = p.price;
        if (pr_put && eval_was_call) price = p.price - sabr.s0 + pr_strike;
        if (!pr_put && !eval_was_call) price = p.price + sabr.s0 - pr_strike;
        const std::string out =
            nlohmann::json{{"strike", pr_strike},
                           {"maturity", pr_maturity},
                           {"is_call", !pr_put},
                           {"price", price},
                           {"implied_vol", p.skipped ? nlohmann::json() : nlohmann::json(p.implied_vol)},
                           {"std_err", p.std_err},
                           {"skipped", p.skipped}}
                .dump(2);
        if (pr_out.empty())
            std::cout << out << '\n';
        else
            write_file(pr_out, out);
        return 0;
    }

    if (ex->parsed()) {
        const auto model = LeverageModel::load(ex_model);
        const auto sabr = sabr_from_json(read_file(ex_model + "/sabr.json"));
        const XiParams xi = xi_from_json(read_file(ex_xi));
        ExtrapolationOptions eopt;
        eopt.factor = ex_factor;
        eopt.truth_paths = ex_paths;
        eopt.eval_paths = ex_paths;
        eopt.jobs = jobs;
        const auto rep = extrapolation_report(model, sabr, xi, grid_for_slices(ex_slices),
                                              derive_seed(seed, 8), eopt, ex_out);
        std::cout << "extrapolation: max |iv diff| " << rep.max_abs_diff << ", mean "
                  << rep.mean_abs_diff << "; wrote " << ex_out << ".csv\n";
        return 0;
    }

    return 2;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const lsvcal::InvalidInput& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return 3;
    } catch (const lsvcal::IvOutOfBounds& e) {
        std::cerr << "computation failed: " << e.what() << '\n';
        return 5;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "invalid config: " << e.what() << '\n';
        return 3;
    } catch (const std::runtime_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 5;
    }
}
