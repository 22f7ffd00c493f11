#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "pathrf/rng.hpp"

using namespace pathrf;

TEST(Rng, DeriveSeedIsDeterministicAndSpreads) {
    EXPECT_EQ(derive_seed(42, 7), derive_seed(42, 7));
    std::set<std::uint64_t> seen;
    for (std::uint64_t c = 0; c < 1000; ++c) seen.insert(derive_seed(42, c));
    EXPECT_EQ(seen.size(), 1000u);
    EXPECT_NE(derive_seed(42, 0), derive_seed(43, 0));
}

TEST(Rng, UniformIndexStaysInRangeAndCoversIt) {
    Rng rng(1);
    std::vector<int> hits(7, 0);
    for (int i = 0; i < 7000; ++i) {
        const auto v = uniform_index(rng, 7);
        ASSERT_LT(v, 7u);
        ++hits[v];
    }
    for (int h : hits) EXPECT_NEAR(h, 1000, 150);
}

TEST(Rng, Uniform01AndNormalMoments) {
    Rng rng(2);
    double s = 0, s2 = 0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        const double u = uniform01(rng);
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
    }
    for (int i = 0; i < n; ++i) {
        const double z = standard_normal(rng);
        s += z;
        s2 += z * z;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.02);
}

TEST(Rng, ShuffleIsAPermutation) {
    Rng rng(3);
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    auto w = v;
    shuffle(std::span(w), rng);
    EXPECT_NE(v, w);
    std::ranges::sort(w);
    EXPECT_EQ(v, w);
}
