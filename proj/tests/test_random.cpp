#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "biasaudit/random.hpp"

using namespace biasaudit;

TEST(SplitMix, ReferenceValue) {
    // first output of the reference generator seeded with 0
    EXPECT_EQ(splitmix64(0), 0xE220A8397B1DCDAFULL);
}

TEST(MixSeed, DistinctOrdinalsGiveDistinctSeeds) {
    std::set<std::uint64_t> seen;
    for (std::uint64_t k = 0; k < 10000; ++k) seen.insert(mix_seed(42, k));
    EXPECT_EQ(seen.size(), 10000u);
    EXPECT_NE(mix_seed(1, 2), mix_seed(2, 1));
}

TEST(MixSeed, StagesDiffer) {
    EXPECT_NE(stage_seed(7, Stage::Bootstrap), stage_seed(7, Stage::Resample));
    EXPECT_EQ(stage_seed(7, Stage::Probe), mix_seed(7, 6));
}

TEST(Rng, SameSeedSameStream) {
    Rng a(123), b(123);
    for (int i = 0; i < 100; ++i) {
        EXPECT_EQ(a.next_u64(), b.next_u64());
        EXPECT_EQ(a.normal(), b.normal());
    }
}

TEST(Rng, UniformInUnitInterval) {
    Rng r(5);
    double sum = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const double u = r.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
    }
    EXPECT_NEAR(sum / 100000, 0.5, 0.005);
}

TEST(Rng, NormalMoments) {
    Rng r(9);
    const int n = 200000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        s += z;
        s2 += z * z;
    }
    EXPECT_NEAR(s / n, 0.0, 0.01);
    EXPECT_NEAR(s2 / n, 1.0, 0.01);
}

TEST(Rng, IndexCoversRangeUniformly) {
    Rng r(11);
    std::vector<int> counts(7, 0);
    for (int i = 0; i < 70000; ++i) ++counts[r.index(7)];
    for (int c : counts) EXPECT_NEAR(c, 10000, 400);
}

TEST(Rng, ShuffleIsPermutation) {
    Rng r(3);
    std::vector<int> v(50);
    std::iota(v.begin(), v.end(), 0);
    auto w = v;
    r.shuffle(w);
    EXPECT_NE(v, w);
    std::sort(w.begin(), w.end());
    EXPECT_EQ(v, w);
}
