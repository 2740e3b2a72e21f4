#pragma once

// Exact (O(n^2)) t-SNE to two dimensions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "biasaudit/cohort.hpp"
#include "biasaudit/error.hpp"
#include "biasaudit/random.hpp"

namespace biasaudit {

struct TsneConfig {
    double perplexity = 30.0;
    std::size_t iterations = 1000;
    std::uint64_t seed = 0;
    double learning_rate = 200.0;
    double early_exaggeration = 12.0;
    std::size_t exaggeration_iterations = 250;
    double initial_momentum = 0.5;
    double final_momentum = 0.8;
    std::size_t momentum_switch = 250;
    double init_sd = 1e-4;
};

struct TsneResult {
    Matrix coords;  // n x 2
    double kl_initial = 0.0;
    double kl_final = 0.0;
    TsneConfig config;
};

/// Row-conditional affinities P(j|i) with per-row entropies.
struct ConditionalAffinities {
    Matrix p;         // row i holds P(.|i); diagonal is zero
    Vector entropy;   // natural-log entropy of row i
    Vector beta;      // precision 1 / (2 sigma_i^2)
};

inline constexpr double kEntropyTolerance = 1e-5;

namespace detail {

inline Matrix squared_distances(const Matrix& x) {
    const Eigen::Index n = x.rows();
    Matrix d(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        d(i, i) = 0.0;
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = (x.row(i) - x.row(j)).squaredNorm();
            d(i, j) = v;
            d(j, i) = v;
        }
    }
    return d;
}

// Shannon entropy of row weights exp(-beta * (d - dmin)), normalised.
inline double row_entropy(const Matrix& dist, Eigen::Index i, double dmin, double beta, Vector& w) {
    const Eigen::Index n = dist.rows();
    double sum = 0.0;
    double weighted = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        if (j == i) {
            w(j) = 0.0;
            continue;
        }
        const double shifted = dist(i, j) - dmin;
        w(j) = std::exp(-beta * shifted);
        sum += w(j);
        weighted += w(j) * shifted;
    }
    return std::log(sum) + beta * weighted / sum;
}

}  // namespace detail

/// Finds each point's Gaussian precision by bisection so the conditional
/// distribution's entropy equals ln(perplexity).
inline ConditionalAffinities conditional_affinities(const Matrix& x, double perplexity) {
    const Eigen::Index n = x.rows();
    require(n >= 4, "tsne: need at least 4 points, got ", n);
    require(perplexity > 1.0, "tsne: perplexity must exceed 1, got ", perplexity);
    require(perplexity < static_cast<double>(n), "tsne: perplexity ", perplexity, " must be below n = ", n);
    require(perplexity <= static_cast<double>(n - 1), "tsne: perplexity ", perplexity,
            " unreachable with n - 1 = ", n - 1, " neighbours");

    const Matrix dist = detail::squared_distances(x);
    const double target = std::log(perplexity);

    ConditionalAffinities out;
    out.p = Matrix::Zero(n, n);
    out.entropy.resize(n);
    out.beta.resize(n);
    Vector w(n);

    for (Eigen::Index i = 0; i < n; ++i) {
        double dmin = std::numeric_limits<double>::infinity();
        double dmax = 0.0;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j == i) continue;
            dmin = std::min(dmin, dist(i, j));
            dmax = std::max(dmax, dist(i, j));
        }
        // The entropy can fall no lower than ln(#nearest ties).
        std::vector<Eigen::Index> ties;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != i && dist(i, j) == dmin) ties.push_back(j);
        }
        if (static_cast<double>(ties.size()) >= perplexity || (dmax == dmin && perplexity < static_cast<double>(n - 1))) {
            std::string set = std::to_string(i);
            for (auto j : ties) set += "," + std::to_string(j);
            if (dmin == 0.0) {
                fail("tsne: duplicate points {", set, "}: ", ties.size() + 1,
                     " identical rows make a bandwidth for perplexity ", perplexity, " infeasible");
            }
            fail("tsne: points {", set, "} are equidistant from point ", i, "; bandwidth for perplexity ", perplexity,
                 " is infeasible");
        }

        double beta = 1.0 / std::max((dmax - dmin) * 0.5, std::numeric_limits<double>::min());
        double lo = 0.0;
        double hi = std::numeric_limits<double>::infinity();
        double h = detail::row_entropy(dist, i, dmin, beta, w);
        for (int iter = 0; iter < 4000 && std::abs(h - target) > 1e-12; ++iter) {
            if (h > target) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = 0.5 * (lo + beta);
            }
            if (!(beta > lo && beta < hi)) break;  // interval exhausted at double precision
            h = detail::row_entropy(dist, i, dmin, beta, w);
        }
        require(std::abs(h - target) <= kEntropyTolerance, "tsne: bandwidth search for point ", i,
                " did not converge (entropy ", h, ", target ", target, ")");
        out.p.row(i) = w.transpose() / w.sum();
        out.entropy(i) = h;
        out.beta(i) = beta;
    }
    return out;
}

/// Symmetrised joint affinities P_ij = (P(j|i) + P(i|j)) / 2n.
inline Matrix joint_affinities(const Matrix& conditional) {
    const auto n = static_cast<double>(conditional.rows());
    return (conditional + conditional.transpose()) / (2.0 * n);
}

/// KL(P || Q) with Student-t (one degree of freedom) Q.
inline double tsne_kl(const Matrix& p, const Matrix& y) {
    const Eigen::Index n = y.rows();
    double z = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i != j) z += 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm());
        }
    }
    double kl = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j || p(i, j) <= 0.0) continue;
            const double q = 1.0 / (1.0 + (y.row(i) - y.row(j)).squaredNorm()) / z;
            kl += p(i, j) * std::log(p(i, j) / q);
        }
    }
    return kl;
}

namespace detail {

// Gradient of KL(scale * P || Q) into `grad`, reusing `num` as the n x n
// kernel buffer.
inline void tsne_gradient_into(const Matrix& p, double scale, const Matrix& y, Matrix& num, Matrix& grad) {
    const Eigen::Index n = y.rows();
    const Eigen::Index d = y.cols();
    num.resize(n, n);
    double z = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        num(j, j) = 0.0;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            double sq = 0.0;
            for (Eigen::Index c = 0; c < d; ++c) {
                const double diff = y(i, c) - y(j, c);
                sq += diff * diff;
            }
            const double v = 1.0 / (1.0 + sq);
            num(i, j) = v;
            num(j, i) = v;
            z += 2.0 * v;
        }
    }
    grad.setZero(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (i == j) continue;
            // P and the kernel are symmetric: read column i contiguously
            const double coef = 4.0 * (p(j, i) * scale - num(j, i) / z) * num(j, i);
            for (Eigen::Index c = 0; c < d; ++c) grad(i, c) += coef * (y(i, c) - y(j, c));
        }
    }
}

}  // namespace detail

/// dKL/dy_i = 4 sum_j (P_ij - Q_ij) (y_i - y_j) / (1 + |y_i - y_j|^2)
inline Matrix tsne_gradient(const Matrix& p, const Matrix& y) {
    Matrix num, grad;
    detail::tsne_gradient_into(p, 1.0, y, num, grad);
    return grad;
}

/// Gradient descent with momentum, per-coordinate gains and early
/// exaggeration. Deterministic for a given seed.
inline TsneResult tsne_embed(const Matrix& x, const TsneConfig& config) {
    const Eigen::Index n = x.rows();
    require(config.iterations >= 1, "tsne: iterations must be >= 1");
    const auto cond = conditional_affinities(x, config.perplexity);
    const Matrix p = joint_affinities(cond.p);

    Rng rng(config.seed);
    Matrix y(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index c = 0; c < 2; ++c) y(i, c) = config.init_sd * rng.normal();
    }

    TsneResult result;
    result.config = config;
    result.kl_initial = tsne_kl(p, y);

    Matrix update = Matrix::Zero(n, 2);
    Matrix gains = Matrix::Ones(n, 2);
    Matrix num, grad;
    for (std::size_t iter = 0; iter < config.iterations; ++iter) {
        const bool exaggerate = iter < config.exaggeration_iterations;
        const double momentum = iter < config.momentum_switch ? config.initial_momentum : config.final_momentum;
        detail::tsne_gradient_into(p, exaggerate ? config.early_exaggeration : 1.0, y, num, grad);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index c = 0; c < 2; ++c) {
                const bool same_sign = (grad(i, c) > 0.0) == (update(i, c) > 0.0);
                gains(i, c) = same_sign ? std::max(gains(i, c) * 0.8, 0.01) : gains(i, c) + 0.2;
                update(i, c) = momentum * update(i, c) - config.learning_rate * gains(i, c) * grad(i, c);
                y(i, c) += update(i, c);
            }
        }
        y.rowwise() -= y.colwise().mean();
        require(y.allFinite(), "tsne: coordinates diverged at iteration ", iter);
    }
    result.coords = std::move(y);
    result.kl_final = tsne_kl(p, result.coords);
    return result;
}

}  // namespace biasaudit
