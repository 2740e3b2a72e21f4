#include <gtest/gtest.h>

#include <cmath>

#include "biasaudit/random.hpp"
#include "biasaudit/tsne.hpp"

using namespace biasaudit;

namespace {

Matrix gaussian_points(Rng& rng, Eigen::Index n, Eigen::Index d) {
    Matrix x(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rng.normal();
    return x;
}

}  // namespace

TEST(TsneAffinities, EntropyMatchesPerplexity) {
    Rng rng(1);
    const Matrix x = gaussian_points(rng, 40, 5);
    const auto a = conditional_affinities(x, 10.0);
    for (Eigen::Index i = 0; i < 40; ++i) {
        EXPECT_NEAR(a.entropy(i), std::log(10.0), kEntropyTolerance);
        EXPECT_NEAR(a.p.row(i).sum(), 1.0, 1e-12);
        EXPECT_EQ(a.p(i, i), 0.0);
        // independent recomputation of the row entropy from the returned P
        double h = 0.0;
        for (Eigen::Index j = 0; j < 40; ++j) {
            if (a.p(i, j) > 0.0) h -= a.p(i, j) * std::log(a.p(i, j));
        }
        EXPECT_NEAR(h, std::log(10.0), 1e-4);
    }
}

TEST(TsneAffinities, JointIsSymmetricAndNormalized) {
    Rng rng(2);
    const auto a = conditional_affinities(gaussian_points(rng, 25, 3), 5.0);
    const Matrix p = joint_affinities(a.p);
    EXPECT_LT((p - p.transpose()).cwiseAbs().maxCoeff(), 1e-15);
    EXPECT_NEAR(p.sum(), 1.0, 1e-12);
}

TEST(TsneAffinities, Errors) {
    Rng rng(3);
    const Matrix x = gaussian_points(rng, 10, 2);
    EXPECT_THROW((void)conditional_affinities(x, 10.0), Error);  // perplexity >= n
    EXPECT_THROW((void)conditional_affinities(x, 1.0), Error);
    Matrix dup = x;
    for (Eigen::Index i = 1; i < 6; ++i) dup.row(i) = dup.row(0);
    try {
        (void)conditional_affinities(dup, 3.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("duplicate points {0,1,2,3,4,5}"), std::string::npos) << e.what();
    }
}

TEST(TsneGradient, MatchesFiniteDifferences) {
    Rng rng(4);
    const auto a = conditional_affinities(gaussian_points(rng, 12, 4), 4.0);
    const Matrix p = joint_affinities(a.p);
    Matrix y = gaussian_points(rng, 12, 2);
    const Matrix g = tsne_gradient(p, y);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        for (Eigen::Index c = 0; c < 2; ++c) {
            const double keep = y(i, c);
            y(i, c) = keep + h;
            const double up = tsne_kl(p, y);
            y(i, c) = keep - h;
            const double down = tsne_kl(p, y);
            y(i, c) = keep;
            const double fd = (up - down) / (2.0 * h);
            EXPECT_NEAR(g(i, c), fd, 1e-6 + 1e-5 * std::abs(fd));
        }
    }
}

TEST(TsneEmbed, SeparatesDistantClusters) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(100 + seed);
        Matrix x = gaussian_points(rng, 60, 5);
        for (Eigen::Index i = 30; i < 60; ++i) x(i, 0) += 100.0;
        TsneConfig cfg;
        cfg.perplexity = 10.0;
        cfg.iterations = 2000;  // points flung out after exaggeration need time to return
        cfg.seed = seed;
        const auto r = tsne_embed(x, cfg);
        // every point lies closer to its own cluster's embedded centroid
        const Eigen::RowVectorXd ca = r.coords.topRows(30).colwise().mean();
        const Eigen::RowVectorXd cb = r.coords.bottomRows(30).colwise().mean();
        std::size_t mixed = 0;
        for (Eigen::Index i = 0; i < 60; ++i) {
            const bool nearer_a = (r.coords.row(i) - ca).norm() < (r.coords.row(i) - cb).norm();
            mixed += nearer_a != (i < 30);
        }
        EXPECT_EQ(mixed, 0u) << "seed " << seed;
        EXPECT_LT(r.kl_final, r.kl_initial);
    }
}

TEST(TsneEmbed, Deterministic) {
    Rng rng(7);
    const Matrix x = gaussian_points(rng, 30, 4);
    TsneConfig cfg;
    cfg.perplexity = 8.0;
    cfg.iterations = 300;
    cfg.seed = 99;
    EXPECT_EQ(tsne_embed(x, cfg).coords, tsne_embed(x, cfg).coords);
}
