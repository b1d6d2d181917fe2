#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace lsvcal {

/// Thrown when an argument violates a documented precondition.
struct InvalidInput : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Thrown when a price lies outside the no-arbitrage bounds and no
/// implied volatility exists. Callers that can skip (per-sample flags)
/// catch this; it is never silently clamped.
struct IvOutOfBounds : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Paths are always processed in fixed-size blocks so that results are
/// identical for any worker count (ordered reduction over block index).
inline constexpr long kPathBlock = 4096;

inline long num_blocks(long n_paths) {
    return (n_paths + kPathBlock - 1) / kPathBlock;
}

/// Runs fn(block_index, path_begin, path_end) for every block. Blocks are
/// distributed over `jobs` threads; each block writes only to its own slot,
/// so the caller can reduce in block order afterwards.
inline void for_each_block(long n_paths, int jobs,
                           const std::function<void(long, long, long)>& fn) {
    const long nb = num_blocks(n_paths);
    if (jobs <= 1 || nb <= 1) {
        for (long b = 0; b < nb; ++b)
            fn(b, b * kPathBlock, std::min(n_paths, (b + 1) * kPathBlock));
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<long> next{0};
    auto worker = [&] {
        for (;;) {
            long b = next.fetch_add(1);
            if (b >= nb) return;
            fn(b, b * kPathBlock, std::min(n_paths, (b + 1) * kPathBlock));
        }
    };
    int nt = std::min<long>(jobs, nb);
    pool.reserve(nt);
    for (int i = 0; i < nt; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

/// FNV-1a over a byte buffer; used as the artifact content hash in reports.
inline std::uint64_t fnv1a(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 1469598103934665603ull;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace lsvcal
