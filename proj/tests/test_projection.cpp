#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "biasaudit/projection.hpp"
#include "biasaudit/random.hpp"

using namespace biasaudit;

namespace {

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; eigenvalues in
/// descending order, eigenvectors in columns.
std::pair<Vector, Matrix> jacobi_eigen(Matrix a) {
    const Eigen::Index n = a.rows();
    Matrix v = Matrix::Identity(n, n);
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (Eigen::Index p = 0; p < n; ++p)
            for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
        if (off < 1e-30) break;
        for (Eigen::Index p = 0; p < n; ++p) {
            for (Eigen::Index q = p + 1; q < n; ++q) {
                if (std::abs(a(p, q)) < 1e-300) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (Eigen::Index k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto l, auto r) { return a(l, l) > a(r, r); });
    Vector values(n);
    Matrix vectors(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        values(i) = a(order[i], order[i]);
        vectors.col(i) = v.col(order[i]);
    }
    return {values, vectors};
}

Matrix random_matrix(Rng& rng, Eigen::Index n, Eigen::Index d) {
    Matrix m(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) m(i, j) = rng.normal() * static_cast<double>(j + 1);
    return m;
}

}  // namespace

TEST(PcaFit, DiagonalLine) {
    Matrix x(4, 2);
    x << 1, 1, 2, 2, -1, -1, -2, -2;
    const auto m = pca_fit(x, ModeSpec{std::size_t{2}});
    EXPECT_NEAR(m.mean.norm(), 0.0, 1e-15);
    EXPECT_NEAR(m.components(0, 0), 1.0 / std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(m.components(0, 1), 1.0 / std::sqrt(2.0), 1e-12);
    EXPECT_NEAR(m.explained_variance_ratio(0), 1.0, 1e-12);
    EXPECT_NEAR(m.explained_variance_ratio(1), 0.0, 1e-12);
}

TEST(PcaFit, HandEigendecomposition) {
    // covariance diag(8/3, 2/3)
    Matrix x(4, 2);
    x << 2, 0, -2, 0, 0, 1, 0, -1;
    const auto m = pca_fit(x, ModeSpec{std::size_t{2}});
    EXPECT_NEAR(m.components(0, 0), 1.0, 1e-12);
    EXPECT_NEAR(m.components(0, 1), 0.0, 1e-12);
    EXPECT_NEAR(m.explained_variance(0), 8.0 / 3.0, 1e-12);
    EXPECT_NEAR(m.explained_variance(1), 2.0 / 3.0, 1e-12);
    EXPECT_NEAR(m.explained_variance_ratio(0), 0.8, 1e-12);
    EXPECT_NEAR(m.explained_variance_ratio(1), 0.2, 1e-12);
}

TEST(PcaFit, MatchesCovarianceEigendecomposition) {
    Rng rng(2024);
    for (int trial = 0; trial < 100; ++trial) {
        const Matrix x = random_matrix(rng, 6, 4);
        const auto m = pca_fit(x, ModeSpec{std::size_t{4}});
        const Matrix centered = x.rowwise() - x.colwise().mean();
        const Matrix cov = centered.transpose() * centered / 5.0;
        const auto [values, vectors] = jacobi_eigen(cov);
        for (Eigen::Index k = 0; k < 4; ++k) {
            EXPECT_NEAR(m.explained_variance(k), values(k), 1e-8);
            const Vector ref = vectors.col(k);
            const double sign = ref.dot(m.components.row(k).transpose()) >= 0 ? 1.0 : -1.0;
            EXPECT_LT((m.components.row(k).transpose() - sign * ref).cwiseAbs().maxCoeff(), 1e-6);
        }
        const Matrix gram = m.components * m.components.transpose();
        EXPECT_LT((gram - Matrix::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(PcaFit, SignConvention) {
    Rng rng(5);
    const auto m = pca_fit(random_matrix(rng, 30, 5), ModeSpec{std::size_t{3}});
    for (Eigen::Index r = 0; r < 3; ++r) {
        Eigen::Index arg;
        m.components.row(r).cwiseAbs().maxCoeff(&arg);
        EXPECT_GT(m.components(r, arg), 0.0);
    }
}

TEST(PcaFit, VarianceTarget) {
    Vector ratios(4);
    ratios << 0.7, 0.25, 0.04, 0.01;
    EXPECT_EQ(modes_for_variance(ratios, 0.99), 3u);
    EXPECT_EQ(modes_for_variance(ratios, 0.7), 1u);
    EXPECT_EQ(modes_for_variance(ratios, 1.0), 4u);
    EXPECT_THROW((void)modes_for_variance(ratios, 0.0), Error);

    Rng rng(8);
    const Matrix x = random_matrix(rng, 50, 6);
    const auto full = pca_fit(x, ModeSpec{std::size_t{6}});
    const auto m = pca_fit(x, ModeSpec{0.9});
    EXPECT_EQ(m.modes(), modes_for_variance(full.full_variance_ratio, 0.9));
}

TEST(PcaFit, Errors) {
    EXPECT_THROW((void)pca_fit(Matrix::Ones(1, 3), ModeSpec{std::size_t{1}}), Error);
    try {
        (void)pca_fit(Matrix::Constant(5, 3, 0.1), ModeSpec{std::size_t{1}});
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("degenerate: no variance"), std::string::npos);
    }
    Rng rng(1);
    EXPECT_THROW((void)pca_fit(random_matrix(rng, 4, 6), ModeSpec{std::size_t{4}}), Error);  // k > n - 1
    EXPECT_THROW((void)pca_fit(random_matrix(rng, 4, 6), ModeSpec{std::size_t{0}}), Error);
}

TEST(PcaTransform, MeanMapsToZero) {
    Rng rng(3);
    const Matrix x = random_matrix(rng, 20, 4);
    const auto m = pca_fit(x, ModeSpec{std::size_t{2}});
    const Matrix z = pca_transform(m, m.mean.transpose());
    EXPECT_LT(z.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(PcaTransform, FullRankReconstructs) {
    Rng rng(4);
    const Matrix x = random_matrix(rng, 20, 4);
    const auto m = pca_fit(x, ModeSpec{std::size_t{4}});
    const Matrix back = pca_inverse_transform(m, pca_transform(m, x));
    EXPECT_LT((back - x).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(PcaTransform, AxisProjection) {
    ProjectionModel m;
    m.mean = Vector::Zero(2);
    m.components = Matrix(1, 2);
    m.components << 1, 0;
    Matrix p(1, 2);
    p << 3, 7;
    EXPECT_EQ(pca_transform(m, p)(0, 0), 3.0);
}

TEST(PcaJson, RoundTrip) {
    Rng rng(6);
    const auto m = pca_fit(random_matrix(rng, 10, 3), ModeSpec{std::size_t{2}});
    const auto back = projection_from_json(to_json(m));
    EXPECT_EQ(back.components, m.components);
    EXPECT_EQ(back.mean, m.mean);
    EXPECT_EQ(back.explained_variance_ratio, m.explained_variance_ratio);
}
