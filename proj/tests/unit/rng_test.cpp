#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "fedshadow/rng.hpp"

using namespace fedshadow;

TEST_CASE("engine is the standard mt19937_64") {
    // The standard fixes the 10000th output of a default-seeded engine.
    Rng rng(5489u);
    std::uint64_t x = 0;
    for (int i = 0; i < 10000; ++i) x = rng.next_u64();
    CHECK(x == 9981545732273789042ULL);
}

TEST_CASE("derive_seed separates key paths") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t base = 0; base < 8; ++base) {
        seen.insert(derive_seed(base, {}));
        for (std::uint64_t a = 0; a < 16; ++a) {
            seen.insert(derive_seed(base, {a}));
            for (std::uint64_t b = 0; b < 16; ++b) seen.insert(derive_seed(base, {a, b}));
        }
    }
    CHECK(seen.size() == 8 * (1 + 16 + 256));
    CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
    CHECK(derive_seed(7, {1}) == derive_seed(7, {1}));
}

TEST_CASE("uniform stays in [0, 1) with mean near one half") {
    Rng rng(11);
    double sum = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(std::abs(sum / n - 0.5) < 0.005);
    for (int i = 0; i < 1000; ++i) {
        const double v = rng.uniform(-3.0, 5.0);
        REQUIRE(v >= -3.0);
        REQUIRE(v < 5.0);
    }
}

TEST_CASE("below covers its range evenly") {
    Rng rng(3);
    for (std::uint64_t bound : {1ULL, 2ULL, 3ULL, 7ULL, 10ULL}) {
        std::vector<int> counts(bound, 0);
        const int n = 20000 * static_cast<int>(bound);
        for (int i = 0; i < n; ++i) {
            const auto x = rng.below(bound);
            REQUIRE(x < bound);
            ++counts[x];
        }
        for (int c : counts) CHECK(std::abs(c - 20000) < 800);
    }
    CHECK(rng.below(0) == 0);
}

TEST_CASE("normal has unit moments") {
    Rng rng(5);
    const int n = 200000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        REQUIRE(std::isfinite(z));
        sum += z;
        sq += z * z;
    }
    const double mean = sum / n;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(sq / n - mean * mean - 1.0) < 0.02);
}

TEST_CASE("shuffle is a deterministic permutation") {
    std::vector<int> a(100), b(100);
    std::iota(a.begin(), a.end(), 0);
    b = a;
    Rng r1(9), r2(9);
    r1.shuffle(std::span<int>(a));
    r2.shuffle(std::span<int>(b));
    CHECK(a == b);
    std::vector<int> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> expect(100);
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(sorted == expect);
    CHECK(a != expect);
}

TEST_CASE("shuffle puts every element everywhere with equal odds") {
    // 3 elements: each of the 6 permutations should appear about 1/6 of the time.
    std::map<std::vector<int>, int> counts;
    Rng rng(21);
    const int n = 60000;
    for (int i = 0; i < n; ++i) {
        std::vector<int> v{0, 1, 2};
        rng.shuffle(std::span<int>(v));
        ++counts[v];
    }
    CHECK(counts.size() == 6);
    for (const auto& [perm, c] : counts) CHECK(std::abs(c - n / 6) < 500);
}
