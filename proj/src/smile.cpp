#include "lsvcal/smile.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace lsvcal {

void SmileGrid::validate() const {
    if (!(spot > 0.0)) throw InvalidInput("smile: spot must be positive");
    if (maturities.size() != slices.size())
        throw InvalidInput("smile: maturity/slice count mismatch");
    for (std::size_t i = 0; i < maturities.size(); ++i) {
        if (!(maturities[i] > 0.0)) throw InvalidInput("smile: non-positive maturity");
        if (i > 0 && maturities[i] <= maturities[i - 1])
            throw InvalidInput("smile: maturities must increase");
        double prev = 0.0;
        for (const auto& p : slices[i]) {
            if (!(p.strike > prev)) throw InvalidInput("smile: strikes must increase");
            prev = p.strike;
        }
    }
}

bool SmileGrid::any_skipped() const {
    for (const auto& s : slices)
        for (const auto& p : s)
            if (p.skipped) return true;
    return false;
}

void GridSpec::validate() const {
    if (maturities.size() != log_half_widths.size())
        throw InvalidInput("grid: maturities/log_half_widths size mismatch");
    if (strikes_per_maturity < 2) throw InvalidInput("grid: need at least 2 strikes");
    if (!(spot > 0.0)) throw InvalidInput("grid: spot must be positive");
}

std::vector<double> GridSpec::strikes(int slice) const {
    validate();
    const double k = log_half_widths.at(slice);
    const double lo = std::exp(-k), hi = std::exp(k);
    std::vector<double> out(strikes_per_maturity);
    const double step = (hi - lo) / (strikes_per_maturity - 1);
    for (int j = 0; j < strikes_per_maturity; ++j) out[j] = lo + step * j;
    return out;
}

void save_smile_csv(const SmileGrid& g, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "maturity,strike,price,implied_vol,std_err\n";
    char buf[200];
    for (std::size_t i = 0; i < g.maturities.size(); ++i)
        for (const auto& p : g.slices[i]) {
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g\n",
                          g.maturities[i], p.strike, p.price,
                          p.skipped ? std::nan("") : p.implied_vol, p.std_err);
            f << buf;
        }
}

SmileGrid load_smile_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("empty csv " + path);
    SmileGrid g;
    std::map<double, std::vector<SmilePoint>> by_mat;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string cell;
        double v[5];
        for (int c = 0; c < 5; ++c) {
            if (!std::getline(ss, cell, ',')) throw std::runtime_error("bad csv row: " + line);
            v[c] = std::strtod(cell.c_str(), nullptr);
        }
        SmilePoint p{v[1], v[2], v[3], v[4], std::isnan(v[3])};
        by_mat[v[0]].push_back(p);
    }
    for (auto& [t, pts] : by_mat) {
        g.maturities.push_back(t);
        g.slices.push_back(std::move(pts));
    }
    g.validate();
    return g;
}

std::string smile_to_json(const SmileGrid& g) {
    nlohmann::json slices = nlohmann::json::array();
    for (std::size_t i = 0; i < g.maturities.size(); ++i) {
        nlohmann::json pts = nlohmann::json::array();
        for (const auto& p : g.slices[i])
            pts.push_back({{"strike", p.strike},
                           {"price", p.price},
                           {"implied_vol", p.skipped ? 0.0 : p.implied_vol},
                           {"std_err", p.std_err},
                           {"skipped", p.skipped}});
        slices.push_back({{"maturity", g.maturities[i]}, {"points", pts}});
    }
    return nlohmann::json{{"spot", g.spot}, {"slices", slices}}.dump(2);
}

SmileGrid smile_from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    SmileGrid g;
    g.spot = j.at("spot").get<double>();
    for (const auto& s : j.at("slices")) {
        g.maturities.push_back(s.at("maturity").get<double>());
        std::vector<SmilePoint> pts;
        for (const auto& p : s.at("points"))
            pts.push_back({p.at("strike").get<double>(), p.at("price").get<double>(),
                           p.at("implied_vol").get<double>(), p.at("std_err").get<double>(),
                           p.at("skipped").get<bool>()});
        g.slices.push_back(std::move(pts));
    }
    g.validate();
    return g;
}

}  // namespace lsvcal
