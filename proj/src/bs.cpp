#include "lsvcal/bs.hpp"

#include <algorithm>

namespace lsvcal {

namespace {

void check_opt(const OptionSpec& opt, double vol) {
    if (!(opt.spot > 0.0) || !std::isfinite(opt.spot))
        throw InvalidInput("spot must be positive and finite");
    if (!(opt.strike > 0.0) || !std::isfinite(opt.strike))
        throw InvalidInput("strike must be positive and finite");
    if (!(opt.ttm > 0.0) || !std::isfinite(opt.ttm))
        throw InvalidInput("ttm must be positive and finite");
    if (vol < 0.0 || !std::isfinite(vol))
        throw InvalidInput("vol must be non-negative and finite");
}

double intrinsic(const OptionSpec& opt) {
    return opt.is_call ? std::max(opt.spot - opt.strike, 0.0)
                       : std::max(opt.strike - opt.spot, 0.0);
}

}  // namespace

double bs_price(const OptionSpec& opt, double vol) {
    check_opt(opt, vol);
    const double st = vol * std::sqrt(opt.ttm);
    if (st == 0.0) return intrinsic(opt);
    const double d1 = std::log(opt.spot / opt.strike) / st + 0.5 * st;
    const double d2 = d1 - st;
    const double call = opt.spot * norm_cdf(d1) - opt.strike * norm_cdf(d2);
    // Put via parity at zero rate.
    return opt.is_call ? call : call - opt.spot + opt.strike;
}

BsGreeks bs_greeks(const OptionSpec& opt, double vol) {
    check_opt(opt, vol);
    if (vol == 0.0) throw InvalidInput("greeks require vol > 0");
    const double st = vol * std::sqrt(opt.ttm);
    const double d1 = std::log(opt.spot / opt.strike) / st + 0.5 * st;
    const double d2 = d1 - st;
    BsGreeks g;
    g.price = opt.spot * norm_cdf(d1) - opt.strike * norm_cdf(d2);
    g.delta = norm_cdf(d1);
    if (!opt.is_call) {
        g.price += opt.strike - opt.spot;
        g.delta -= 1.0;
    }
    g.vega = opt.spot * norm_pdf(d1) * std::sqrt(opt.ttm);
    return g;
}

double implied_vol(double price, const OptionSpec& opt) {
    check_opt(opt, 0.0);
    if (!std::isfinite(price)) throw InvalidInput("price must be finite");
    const double lo_bound = intrinsic(opt);
    const double hi_bound = opt.is_call ? opt.spot : opt.strike;
    if (price <= lo_bound || price >= hi_bound)
        throw IvOutOfBounds("price outside no-arbitrage bounds");

    double lo = 1e-9, hi = 5.0;
    const double f_hi = bs_price(opt, hi) - price;
    if (f_hi < 0.0) throw IvOutOfBounds("price above vol=5 bracket");

    double sigma = 0.5 * (lo + hi);
    for (int it = 0; it < 200; ++it) {
        const double f = bs_price(opt, sigma) - price;
        if (f == 0.0) return sigma;
        if (f > 0.0)
            hi = sigma;
        else
            lo = sigma;
        // Newton step off the analytic vega, kept inside the bracket, with
        // a bisection forced every other iteration so the bracket width is
        // guaranteed to halve; convergence is decided in vol space so
        // tiny-vega prices cannot stop the iteration early.
        const double vega = bs_greeks(opt, sigma).vega;
        double next = sigma - f / vega;
        if (it % 2 == 1 || !(next > lo && next < hi)) next = 0.5 * (lo + hi);
        sigma = next;
        if (hi - lo <= 1e-12 * std::max(sigma, 1.0)) break;
    }
    return sigma;
}

}  // namespace lsvcal
