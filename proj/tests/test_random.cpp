#include <catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "pmflq/random.hpp"

using namespace pmflq;

TEST_CASE("Philox4x32-10 known answers", "[random]") {
    using Block = Philox4x32::Block;
    CHECK(Philox4x32(0)(Block{0, 0, 0, 0}) == Block{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    CHECK(Philox4x32(0xffffffffffffffffull)(Block{0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}) ==
          Block{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    CHECK(Philox4x32(0x299f31d0a4093822ull)(Block{0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}) ==
          Block{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("counter access is stateless", "[random]") {
    const Philox4x32 gen(42);
    const auto a = gen(7, 1000);
    const auto b = gen(7, 999);
    CHECK(gen(7, 1000) == a);
    CHECK(a != b);
    CHECK(gen(8, 1000) != a);
    CHECK(Philox4x32(43)(7, 1000) != a);
    CHECK(normal_at(gen, 3, 10) == normal_at(gen, 3, 10));
    CHECK(normal_at(gen, 3, 10) == normal_pair(gen, 3, 5).first);
    CHECK(normal_at(gen, 3, 11) == normal_pair(gen, 3, 5).second);
}

TEST_CASE("uniform conversion stays inside (0, 1)", "[random]") {
    CHECK(to_open_unit(0, 0) > 0.0);
    CHECK(to_open_unit(0xffffffffu, 0xffffffffu) < 1.0);
    CHECK(to_open_unit(0x80000000u, 0) == Catch::Approx(0.5).margin(1e-15));
}

TEST_CASE("normal draws have unit moments", "[random]") {
    const Philox4x32 gen(2718);
    const int N = 200000;
    double s1 = 0, s2 = 0, s3 = 0, s4 = 0;
    int below = 0;
    for (int i = 0; i < N; ++i) {
        const double z = normal_at(gen, 1, static_cast<std::uint64_t>(i));
        s1 += z;
        s2 += z * z;
        s3 += z * z * z;
        s4 += z * z * z * z;
        if (z < 1.0) ++below;
    }
    const double rn = std::sqrt(static_cast<double>(N));
    CHECK(std::abs(s1 / N) <= 4 / rn);
    CHECK(std::abs(s2 / N - 1) <= 4 * std::sqrt(2.0) / rn);
    CHECK(std::abs(s3 / N) <= 4 * std::sqrt(15.0) / rn);
    CHECK(std::abs(s4 / N - 3) <= 4 * std::sqrt(96.0) / rn);
    // P(Z < 1) = 0.841344746...
    const double p = 0.8413447460685429;
    CHECK(std::abs(static_cast<double>(below) / N - p) <= 4 * std::sqrt(p * (1 - p) / N));
}

TEST_CASE("streams are uncorrelated", "[random]") {
    const Philox4x32 gen(99);
    const int N = 100000;
    double cross = 0;
    for (int i = 0; i < N; ++i) cross += normal_at(gen, 0, static_cast<std::uint64_t>(i)) * normal_at(gen, 1, static_cast<std::uint64_t>(i));
    CHECK(std::abs(cross / N) <= 4 / std::sqrt(static_cast<double>(N)));
}

TEST_CASE("derived seeds are distinct", "[random]") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t salt = 0; salt < 1000; ++salt) seen.insert(derive_seed(42, salt));
    CHECK(seen.size() == 1000);
    CHECK(derive_seed(42, 3) == derive_seed(42, 3));
    CHECK(derive_seed(42, 3) != derive_seed(43, 3));
}
