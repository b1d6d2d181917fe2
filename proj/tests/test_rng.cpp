#include "doctest.h"

#include <cmath>
#include <set>

#include "lsvcal/rng.hpp"

using namespace lsvcal;

TEST_CASE("philox4x32-10 known-answer vector") {
    // Reference vector from the Random123 distribution (kat_vectors):
    // philox4x32-10, counter = 0, key = 0.
    const auto out = philox4x32({0, 0, 0, 0}, {0, 0});
    CHECK(out[0] == 0x6627e8d5u);
    CHECK(out[1] == 0xe169c58du);
    CHECK(out[2] == 0xbc57ac4cu);
    CHECK(out[3] == 0x9b00dbd8u);
}

TEST_CASE("philox all-ones known-answer vector") {
    const auto out = philox4x32({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                                {0xffffffffu, 0xffffffffu});
    CHECK(out[0] == 0x408f276du);
    CHECK(out[1] == 0x41c83b0eu);
    CHECK(out[2] == 0xa20bc7c6u);
    CHECK(out[3] == 0x6d5451fdu);
}

TEST_CASE("u01 stays strictly inside (0,1)") {
    CHECK(u01(0, 0) > 0.0);
    CHECK(u01(0xffffffffu, 0xffffffffu) < 1.0);
}

TEST_CASE("path streams are deterministic and distinct") {
    const PathRng a(7, 3), b(7, 3), c(7, 4), d(8, 3);
    CHECK(a.normals(0) == b.normals(0));
    CHECK(a.normals(0) != c.normals(0));
    CHECK(a.normals(0) != d.normals(0));
    CHECK(a.normals(0) != a.normals(1));
    CHECK(a.normals(0, 0) != a.normals(0, 1));
}

TEST_CASE("normal draws have the right moments") {
    double s1 = 0, s2 = 0, s3 = 0;
    const long n = 200000;
    for (long p = 0; p < n; ++p) {
        const auto z = PathRng(123, p).normals(0);
        for (double v : {z.first, z.second}) {
            s1 += v;
            s2 += v * v;
            s3 += v * v * v;
        }
    }
    const double m = 2.0 * n;
    CHECK(std::abs(s1 / m) < 4.0 / std::sqrt(m));
    CHECK(s2 / m == doctest::Approx(1.0).epsilon(0.01));
    CHECK(std::abs(s3 / m) < 4.0 * std::sqrt(15.0 / m));
}

TEST_CASE("derive_seed spreads tags") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t t = 0; t < 1000; ++t) seen.insert(derive_seed(99, t));
    CHECK(seen.size() == 1000);
    CHECK(derive_seed(99, 5) == derive_seed(99, 5));
    CHECK(derive_seed(99, 5) != derive_seed(100, 5));
}

TEST_CASE("SeqRng uniform range") {
    SeqRng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const double u = rng.uniform(2.0, 3.0);
        CHECK(u >= 2.0);
        CHECK(u <= 3.0);
    }
}
