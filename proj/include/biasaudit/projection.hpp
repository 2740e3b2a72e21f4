#pragma once

// Principal component analysis of embedding matrices.

#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <variant>

#include "biasaudit/cohort.hpp"
#include "biasaudit/error.hpp"

namespace biasaudit {

/// Fitted PCA basis. Rows of `components` are modes, ordered by decreasing
/// explained variance.
struct ProjectionModel {
    Vector mean;
    Matrix components;  // k x d
    Vector explained_variance;
    Vector explained_variance_ratio;
    /// Ratios over the full spectrum, so cumulative sums past k are reportable.
    Vector full_variance_ratio;

    [[nodiscard]] std::size_t modes() const { return static_cast<std::size_t>(components.rows()); }
    [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(components.cols()); }
};

/// Either an explicit mode count or a cumulative variance target in (0, 1].
using ModeSpec = std::variant<std::size_t, double>;

/// Smallest k with cumulative ratio >= target.
inline std::size_t modes_for_variance(const Vector& ratios, double target) {
    require(target > 0.0 && target <= 1.0, "variance target ", target, " outside (0, 1]");
    double cumulative = 0.0;
    for (Eigen::Index i = 0; i < ratios.size(); ++i) {
        cumulative += ratios(i);
        // absorbs rounding in ratios computed from a fitted spectrum
        if (cumulative >= target - 1e-12) return static_cast<std::size_t>(i + 1);
    }
    return static_cast<std::size_t>(ratios.size());
}

/// Centers (no scaling) and takes the SVD of the centered matrix.
/// explained_variance_i = sigma_i^2 / (n - 1). Each component is flipped so its
/// largest-magnitude entry is positive.
inline ProjectionModel pca_fit(const Matrix& x, ModeSpec k) {
    const Eigen::Index n = x.rows();
    const Eigen::Index d = x.cols();
    require(n >= 2, "pca_fit: need at least 2 rows, got ", n);
    require(d >= 1, "pca_fit: need at least 1 column");

    ProjectionModel model;
    model.mean = x.colwise().mean().transpose();
    bool constant = true;
    for (Eigen::Index i = 1; i < n && constant; ++i) constant = (x.row(i).array() == x.row(0).array()).all();
    require(!constant, "pca_fit: degenerate: no variance");
    const Matrix centered = x.rowwise() - model.mean.transpose();

    Eigen::BDCSVD<Matrix> svd(centered, Eigen::ComputeThinV);
    const Vector sigma = svd.singularValues();
    const Matrix& v = svd.matrixV();  // d x min(n, d)
    const Eigen::Index rank_bound = sigma.size();

    const Vector variance = sigma.array().square() / static_cast<double>(n - 1);
    const double total = variance.sum();
    require(total > 0.0, "pca_fit: degenerate: no variance");
    model.full_variance_ratio = variance / total;

    std::size_t modes = 0;
    if (std::holds_alternative<std::size_t>(k)) {
        modes = std::get<std::size_t>(k);
        const auto max_modes = static_cast<std::size_t>(std::min<Eigen::Index>(n - 1, d));
        require(modes >= 1 && modes <= max_modes, "pca_fit: mode count ", modes, " outside [1, ", max_modes, "]");
    } else {
        modes = modes_for_variance(model.full_variance_ratio, std::get<double>(k));
    }
    modes = std::min(modes, static_cast<std::size_t>(rank_bound));

    const auto km = static_cast<Eigen::Index>(modes);
    model.components = v.leftCols(km).transpose();
    for (Eigen::Index r = 0; r < km; ++r) {
        Eigen::Index arg = 0;
        double best = -1.0;
        for (Eigen::Index c = 0; c < d; ++c) {
            // first index wins on exact ties
            if (std::abs(model.components(r, c)) > best) {
                best = std::abs(model.components(r, c));
                arg = c;
            }
        }
        if (model.components(r, arg) < 0.0) model.components.row(r) *= -1.0;
    }
    model.explained_variance = variance.head(km);
    model.explained_variance_ratio = model.full_variance_ratio.head(km);
    return model;
}

/// coords = (X - mean) * components^T
inline Matrix pca_transform(const ProjectionModel& model, const Matrix& x) {
    require(static_cast<std::size_t>(x.cols()) == model.dim(), "pca_transform: dimension mismatch (input has ",
            x.cols(), " columns, model expects ", model.dim(), ")");
    return (x.rowwise() - model.mean.transpose()) * model.components.transpose();
}

inline Matrix pca_inverse_transform(const ProjectionModel& model, const Matrix& coords) {
    require(static_cast<std::size_t>(coords.cols()) == model.modes(), "pca_inverse_transform: dimension mismatch");
    return (coords * model.components).rowwise() + model.mean.transpose();
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {

inline nlohmann::json to_json_array(const Vector& v) {
    auto a = nlohmann::json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

inline Vector vector_from_json(const nlohmann::json& a) {
    Vector v(static_cast<Eigen::Index>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
    return v;
}

}  // namespace detail

inline nlohmann::json to_json(const ProjectionModel& m) {
    nlohmann::json j;
    j["mean"] = detail::to_json_array(m.mean);
    auto comps = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.components.rows(); ++r) {
        comps.push_back(detail::to_json_array(m.components.row(r).transpose()));
    }
    j["components"] = std::move(comps);
    j["explained_variance"] = detail::to_json_array(m.explained_variance);
    j["explained_variance_ratio"] = detail::to_json_array(m.explained_variance_ratio);
    j["full_variance_ratio"] = detail::to_json_array(m.full_variance_ratio);
    return j;
}

inline ProjectionModel projection_from_json(const nlohmann::json& j) {
    ProjectionModel m;
    m.mean = detail::vector_from_json(j.at("mean"));
    const auto& comps = j.at("components");
    m.components.resize(static_cast<Eigen::Index>(comps.size()), m.mean.size());
    for (std::size_t r = 0; r < comps.size(); ++r) {
        const Vector row = detail::vector_from_json(comps[r]);
        require(row.size() == m.mean.size(), "projection model: component ", r, " has wrong length");
        m.components.row(static_cast<Eigen::Index>(r)) = row.transpose();
    }
    m.explained_variance = detail::vector_from_json(j.at("explained_variance"));
    m.explained_variance_ratio = detail::vector_from_json(j.at("explained_variance_ratio"));
    m.full_variance_ratio = detail::vector_from_json(j.at("full_variance_ratio"));
    return m;
}

/// `sample_id,<prefix>1,...` coordinate CSV for plotting.
inline std::string coords_csv(const std::vector<std::string>& ids, const Matrix& coords,
                              const std::string& prefix = "mode_") {
    require(static_cast<Eigen::Index>(ids.size()) == coords.rows(), "coords_csv: id/row count mismatch");
    std::string out = "sample_id";
    for (Eigen::Index c = 0; c < coords.cols(); ++c) out += "," + prefix + std::to_string(c + 1);
    out += "\n";
    for (Eigen::Index r = 0; r < coords.rows(); ++r) {
        out += csv::quote(ids[static_cast<std::size_t>(r)]);
        for (Eigen::Index c = 0; c < coords.cols(); ++c) out += "," + csv::format_double(coords(r, c));
        out += "\n";
    }
    return out;
}

}  // namespace biasaudit
