#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>
#include <random>

#include "pmflq/wasserstein.hpp"

using namespace pmflq;
using Catch::Matchers::WithinAbs;

namespace {
EmpiricalMeasure random_measure(std::mt19937_64& gen, int N, int d, double shift = 0.0) {
    std::normal_distribution<double> nd;
    EmpiricalMeasure m;
    m.points.resize(N, d);
    for (int i = 0; i < N; ++i)
        for (int k = 0; k < d; ++k) m.points(i, k) = nd(gen) + shift;
    return m;
}

double brute_force(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
    const int N = static_cast<int>(a.size());
    std::vector<int> perm(static_cast<std::size_t>(N));
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double s = 0.0;
        for (int i = 0; i < N; ++i) s += (a.points.row(i) - b.points.row(perm[static_cast<std::size_t>(i)])).squaredNorm();
        best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return std::sqrt(best / N);
}

double identity_pairing(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
    return std::sqrt((a.points - b.points).rowwise().squaredNorm().mean());
}
} // namespace

TEST_CASE("W2 of a measure with itself is zero", "[wasserstein]") {
    std::mt19937_64 gen(1);
    const auto a = random_measure(gen, 50, 2);
    CHECK(wasserstein2(a, a) == 0.0);
}

TEST_CASE("W2 between point masses is their distance", "[wasserstein]") {
    EmpiricalMeasure a, b;
    a.points = Matrix::Zero(5, 2);
    b.points = Matrix::Zero(5, 2);
    for (int i = 0; i < 5; ++i) {
        a.points.row(i) << 1, 2;
        b.points.row(i) << 4, -2;
    }
    CHECK_THAT(wasserstein2(a, b), WithinAbs(5.0, 1e-14));
}

TEST_CASE("W2 matches brute force over permutations", "[wasserstein]") {
    std::mt19937_64 gen(7);
    for (int N = 1; N <= 8; ++N) {
        for (int d : {1, 2, 3}) {
            const auto a = random_measure(gen, N, d);
            const auto b = random_measure(gen, N, d, 0.5);
            const double w = wasserstein2(a, b);
            CHECK_THAT(w, WithinAbs(brute_force(a, b), 1e-12));
            CHECK(w <= identity_pairing(a, b) + 1e-15);
        }
    }
}

TEST_CASE("W2 of shuffled samples is zero", "[wasserstein]") {
    std::mt19937_64 gen(3);
    const auto a = random_measure(gen, 200, 2);
    std::vector<int> perm(200);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), gen);
    EmpiricalMeasure b;
    b.points.resize(200, 2);
    for (int i = 0; i < 200; ++i) b.points.row(i) = a.points.row(perm[static_cast<std::size_t>(i)]);
    CHECK(wasserstein2(a, b) <= 1e-12);
}

TEST_CASE("W2 of a translate equals the shift length", "[wasserstein]") {
    std::mt19937_64 gen(5);
    const auto a = random_measure(gen, 100, 2);
    EmpiricalMeasure b = a;
    b.points.col(0).array() += 3.0;
    b.points.col(1).array() -= 4.0;
    CHECK_THAT(wasserstein2(a, b), WithinAbs(5.0, 1e-10));
}

TEST_CASE("W2 metric axioms on random triples", "[wasserstein]") {
    std::mt19937_64 gen(11);
    for (int trial = 0; trial < 20; ++trial) {
        const int N = 20 + 7 * trial;
        const auto a = random_measure(gen, N, 2);
        const auto b = random_measure(gen, N, 2, 0.3);
        const auto c = random_measure(gen, N, 2, -0.8);
        const double ab = wasserstein2(a, b), ba = wasserstein2(b, a);
        CHECK(ab == ba);
        CHECK(ab <= wasserstein2(a, c) + wasserstein2(c, b) + 1e-12);
        CHECK(ab >= 0.0);
    }
}

TEST_CASE("W2 errors", "[wasserstein]") {
    std::mt19937_64 gen(13);
    CHECK_THROWS_AS(wasserstein2(random_measure(gen, 4, 2), random_measure(gen, 5, 2)), SizeMismatch);
    CHECK_THROWS_AS(wasserstein2(random_measure(gen, 4, 2), random_measure(gen, 4, 3)), SizeMismatch);
    EmpiricalMeasure big;
    big.points = Matrix::Zero(4097, 1);
    CHECK_THROWS_AS(wasserstein2(big, big), TooLarge);
}

TEST_CASE("assignment solver returns a permutation", "[wasserstein]") {
    Matrix cost(3, 3);
    cost << 4, 1, 3, 2, 0, 5, 3, 2, 2;
    std::vector<Eigen::Index> match;
    const double total = solve_assignment(3, [&](Eigen::Index i, Eigen::Index j) { return cost(i, j); }, &match);
    CHECK(total == 5.0);
    REQUIRE(match.size() == 3);
    CHECK(match[0] == 1);
    CHECK(match[1] == 0);
    CHECK(match[2] == 2);
}
