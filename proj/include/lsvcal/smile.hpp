#pragma once

// Calibration targets: per-maturity smiles of call prices and implied vols.

#include <string>
#include <vector>

#include "lsvcal/common.hpp"

namespace lsvcal {

struct SmilePoint {
    double strike = 0.0;
    double price = 0.0;
    double implied_vol = 0.0;
    double std_err = 0.0;
    bool skipped = false;  // IV inversion failed for this point
};

struct SmileGrid {
    double spot = 1.0;
    std::vector<double> maturities;
    std::vector<std::vector<SmilePoint>> slices;  // one vector per maturity

    void validate() const;
    bool any_skipped() const;
};

/// Strike/maturity layout of the synthetic market: per maturity T_i,
/// `strikes_per_maturity` evenly spaced strikes on [exp(-k_i), exp(k_i)].
struct GridSpec {
    std::vector<double> maturities = {0.15, 0.25, 0.5, 1.0};
    std::vector<double> log_half_widths = {0.1, 0.2, 0.3, 0.5};
    int strikes_per_maturity = 20;
    double spot = 1.0;

    std::vector<double> strikes(int slice) const;
    void validate() const;
};

/// CSV columns: maturity,strike,price,implied_vol,std_err
void save_smile_csv(const SmileGrid& g, const std::string& path);
SmileGrid load_smile_csv(const std::string& path);

std::string smile_to_json(const SmileGrid& g);
SmileGrid smile_from_json(const std::string& text);

}  // namespace lsvcal
