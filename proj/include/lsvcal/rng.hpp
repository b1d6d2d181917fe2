#pragma once

// Counter-based random numbers (Philox4x32-10, Salmon et al. 2011).
// Every path owns an independent stream keyed by (seed, path index), so a
// simulation produces the same draws regardless of how paths are split
// across workers.

#include <array>
#include <cmath>
#include <cstdint>
#include <utility>

namespace lsvcal {

namespace detail {

inline void philox_round(std::array<std::uint32_t, 4>& ctr,
                         std::array<std::uint32_t, 2>& key) {
    constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
    const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
    std::array<std::uint32_t, 4> out;
    out[0] = static_cast<std::uint32_t>(p1 >> 32) ^ ctr[1] ^ key[0];
    out[1] = static_cast<std::uint32_t>(p1);
    out[2] = static_cast<std::uint32_t>(p0 >> 32) ^ ctr[3] ^ key[1];
    out[3] = static_cast<std::uint32_t>(p0);
    ctr = out;
    key[0] += 0x9E3779B9u;
    key[1] += 0xBB67AE85u;
}

}  // namespace detail

/// One 128-bit Philox4x32-10 block.
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
    for (int r = 0; r < 10; ++r) detail::philox_round(ctr, key);
    return ctr;
}

/// Uniform in (0,1), 53-bit mantissa, never exactly 0 or 1.
inline double u01(std::uint32_t hi, std::uint32_t lo) {
    const std::uint64_t u = (static_cast<std::uint64_t>(hi) << 32) | lo;
    return static_cast<double>((u >> 11) | 1u) * 0x1p-53;
}

/// Stateless per-path stream: draws are a pure function of
/// (seed, path, step, stream), evaluated on demand.
class PathRng {
public:
    PathRng(std::uint64_t seed, std::uint64_t path) : seed_(seed), path_(path) {}

    std::array<std::uint32_t, 4> block(std::uint32_t step, std::uint32_t stream) const {
        return philox4x32(
            {step, stream, static_cast<std::uint32_t>(path_),
             static_cast<std::uint32_t>(path_ >> 32)},
            {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
    }

    /// Two independent standard normals for one time step (Box-Muller).
    std::pair<double, double> normals(std::uint32_t step, std::uint32_t stream = 0) const {
        const auto b = block(step, stream);
        const double u1 = u01(b[0], b[1]);
        const double u2 = u01(b[2], b[3]);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        return {r * std::cos(a), r * std::sin(a)};
    }

    std::pair<double, double> uniforms(std::uint32_t step, std::uint32_t stream = 0) const {
        const auto b = block(step, stream);
        return {u01(b[0], b[1]), u01(b[2], b[3])};
    }

private:
    std::uint64_t seed_;
    std::uint64_t path_;
};

/// Sequential convenience generator for parameter sampling and shuffles.
class SeqRng {
public:
    explicit SeqRng(std::uint64_t seed) : rng_(seed, 0) {}

    double uniform() { return pick(rng_.uniforms(ctr_++).first); }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal() { return pick(rng_.normals(ctr_++).first); }

private:
    double pick(double v) { return v; }
    PathRng rng_;
    std::uint32_t ctr_ = 0;
};

/// Documented seed-splitting rule: child streams (per stat-test run, per
/// gradient step, ...) are derived by hashing (master, tag) through Philox,
/// so any single run can be re-executed in isolation.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag) {
    const auto b = philox4x32(
        {static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(tag >> 32), 0x5eedu, 0},
        {static_cast<std::uint32_t>(master), static_cast<std::uint32_t>(master >> 32)});
    return (static_cast<std::uint64_t>(b[0]) << 32) | b[1];
}

}  // namespace lsvcal
