#pragma once

// Two-sample Kolmogorov-Smirnov tests, Benjamini-Yekutieli adjustment,
// marginal histograms, and the per-mode subgroup distribution test grid.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "biasaudit/cohort.hpp"
#include "biasaudit/csv.hpp"
#include "biasaudit/error.hpp"

namespace biasaudit {

struct KsResult {
    double d_stat = 0.0;
    double p_raw = 1.0;
    std::size_t n1 = 0;
    std::size_t n2 = 0;
};

/// Survival function of the Kolmogorov distribution,
/// Q(lambda) = 2 sum_{j>=1} (-1)^(j-1) exp(-2 j^2 lambda^2).
/// Below lambda = 1.18 the equivalent Jacobi theta form is summed instead,
/// since the alternating series converges slowly there.
inline double kolmogorov_survival(double lambda) {
    if (lambda <= 0.0) return 1.0;
    if (lambda < 1.18) {
        const double y = std::exp(-std::numbers::pi * std::numbers::pi / (8.0 * lambda * lambda));
        double sum = 0.0;
        for (int j = 1; j <= 6; ++j) {
            const double k = 2.0 * j - 1.0;
            sum += std::pow(y, k * k);
        }
        return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * sum, 0.0, 1.0);
    }
    double sum = 0.0;
    for (int j = 1; j <= 100; ++j) {
        const double term = std::exp(-2.0 * j * j * lambda * lambda);
        sum += (j % 2 == 1) ? term : -term;
        if (term < 1e-300) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

/// Exact sup |ECDF_a - ECDF_b| over the merged sample; asymptotic p-value with
/// effective-n correction lambda = (sqrt(ne) + 0.12 + 0.11 / sqrt(ne)) * D.
inline KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
    require(!a.empty() && !b.empty(), "ks_two_sample: empty sample (sizes ", a.size(), ", ", b.size(), ")");
    std::vector<double> x(a.begin(), a.end());
    std::vector<double> y(b.begin(), b.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    const auto n1 = static_cast<double>(x.size());
    const auto n2 = static_cast<double>(y.size());

    std::size_t i = 0;
    std::size_t j = 0;
    double d = 0.0;
    while (i < x.size() && j < y.size()) {
        const double v = std::min(x[i], y[j]);
        while (i < x.size() && x[i] == v) ++i;
        while (j < y.size() && y[j] == v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / n1 - static_cast<double>(j) / n2));
    }
    // Once one sample is exhausted its ECDF is 1 and the other's only grows,
    // so the gap can only shrink.

    KsResult r;
    r.n1 = x.size();
    r.n2 = y.size();
    r.d_stat = d;
    const double ne = n1 * n2 / (n1 + n2);
    const double root = std::sqrt(ne);
    r.p_raw = std::clamp(kolmogorov_survival((root + 0.12 + 0.11 / root) * d), 0.0, 1.0);
    return r;
}

inline double harmonic_number(std::size_t m) {
    double c = 0.0;
    for (std::size_t i = 1; i <= m; ++i) c += 1.0 / static_cast<double>(i);
    return c;
}

/// Benjamini-Yekutieli step-up adjustment, valid under arbitrary dependence.
/// Output is in input order.
inline std::vector<double> benjamini_yekutieli(std::span<const double> p) {
    for (std::size_t i = 0; i < p.size(); ++i) {
        require(p[i] >= 0.0 && p[i] <= 1.0, "benjamini_yekutieli: p[", i, "] = ", p[i], " outside [0, 1]");
    }
    const std::size_t m = p.size();
    std::vector<double> out(m);
    if (m == 0) return out;
    const double c = harmonic_number(m);
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return p[l] < p[r]; });

    double running = std::numeric_limits<double>::infinity();
    for (std::size_t rank = m; rank >= 1; --rank) {
        const std::size_t idx = order[rank - 1];
        const double adjusted = p[idx] * static_cast<double>(m) * c / static_cast<double>(rank);
        running = std::min(running, adjusted);
        out[idx] = std::min(running, 1.0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Marginal density

struct Histogram {
    std::vector<double> edges;    // bins + 1 edges
    std::vector<double> density;  // count / (n * width)
};

/// Linear-interpolation quantile of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double q) {
    require(!sorted.empty(), "quantile of empty sample");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

/// Density-normalised histogram. bins == 0 picks the count by
/// Freedman-Diaconis, falling back to Sturges when the IQR is zero. A sample
/// with zero range is spread over a unit-width interval centred on its value.
inline Histogram marginal_density(std::span<const double> values, std::size_t bins = 0) {
    require(values.size() >= 2, "marginal_density: need at least 2 values, got ", values.size());
    std::vector<double> v(values.begin(), values.end());
    for (double x : v) require(std::isfinite(x), "marginal_density: non-finite value");
    std::sort(v.begin(), v.end());
    const auto n = static_cast<double>(v.size());
    double lo = v.front();
    double hi = v.back();
    const std::size_t sturges = static_cast<std::size_t>(std::ceil(std::log2(n))) + 1;

    if (bins == 0) {
        const double iqr = quantile_sorted(v, 0.75) - quantile_sorted(v, 0.25);
        if (iqr > 0.0 && hi > lo) {
            const double width = 2.0 * iqr / std::cbrt(n);
            bins = static_cast<std::size_t>(std::ceil((hi - lo) / width));
            bins = std::clamp<std::size_t>(bins, 1, 10000);
        } else {
            bins = sturges;
        }
    }
    if (hi == lo) {
        lo -= 0.5;
        hi += 0.5;
    }
    Histogram h;
    const double width = (hi - lo) / static_cast<double>(bins);
    h.edges.resize(bins + 1);
    for (std::size_t i = 0; i <= bins; ++i) h.edges[i] = lo + width * static_cast<double>(i);
    h.edges.back() = hi;

    std::vector<std::size_t> counts(bins, 0);
    for (double x : v) {
        auto b = static_cast<std::size_t>((x - lo) / width);
        b = std::min(b, bins - 1);
        // floating edges: keep x inside [edges[b], edges[b+1])
        while (b > 0 && x < h.edges[b]) --b;
        while (b + 1 < bins && x >= h.edges[b + 1]) ++b;
        ++counts[b];
    }
    h.density.resize(bins);
    for (std::size_t i = 0; i < bins; ++i) {
        h.density[i] = static_cast<double>(counts[i]) / (n * (h.edges[i + 1] - h.edges[i]));
    }
    return h;
}

// ---------------------------------------------------------------------------
// Subgroup distribution test grid

enum class Tier { NotSignificant, Significant, HighlySignificant };

inline Tier significance_tier(double p_adjusted) {
    if (p_adjusted < 0.001) return Tier::HighlySignificant;
    if (p_adjusted < 0.05) return Tier::Significant;
    return Tier::NotSignificant;
}

inline std::string_view to_string(Tier t) {
    switch (t) {
        case Tier::NotSignificant: return "ns";
        case Tier::Significant: return "*";
        case Tier::HighlySignificant: return "**";
    }
    return "?";
}

/// Which p-values are adjusted together.
enum class TestFamily {
    Grid,     // all modes x pairs
    PerPair,  // each comparison's modes separately
};

inline TestFamily parse_test_family(std::string_view s) {
    if (s == "grid") return TestFamily::Grid;
    if (s == "per_pair") return TestFamily::PerPair;
    fail("unknown test family '", s, "' (expected grid or per_pair)");
}

using GroupPair = std::pair<GroupSelector, GroupSelector>;

/// Parses "sex=Male|sex=Female".
inline GroupPair parse_group_pair(std::string_view text) {
    const auto bar = text.find('|');
    require(bar != std::string_view::npos, "group pair '", text, "' must look like selector|selector");
    return {GroupSelector::parse(text.substr(0, bar)), GroupSelector::parse(text.substr(bar + 1))};
}

inline std::string pair_name(const GroupPair& p) {
    return p.first.display_name() + " / " + p.second.display_name();
}

struct StatRow {
    std::size_t mode = 0;  // 1-based
    double explained_variance_ratio = 0.0;
    std::string comparison;
    std::size_t n1 = 0;
    std::size_t n2 = 0;
    double d_stat = 0.0;
    double p_raw = 1.0;
    double p_adjusted = 1.0;
    Tier tier = Tier::NotSignificant;
};

struct StatReport {
    std::vector<std::string> comparisons;  // column order
    std::size_t modes = 0;
    std::vector<StatRow> rows;  // mode-major, comparisons in configured order
    nlohmann::json metadata = nlohmann::json::object();

    [[nodiscard]] const StatRow& at(std::size_t mode, std::size_t pair) const {
        return rows.at((mode - 1) * comparisons.size() + pair);
    }
};

/// KS test of every (mode, pair) cell on the groups' coordinate marginals,
/// BY-adjusted over the configured family. `ids` names the rows of `coords`.
inline StatReport run_feature_bias_test(const Matrix& coords, std::span<const std::string> ids,
                                        const Cohort& cohort, std::span<const GroupPair> pairs, std::size_t modes,
                                        const Vector& variance_ratio = {}, TestFamily family = TestFamily::Grid) {
    require(static_cast<Eigen::Index>(ids.size()) == coords.rows(), "feature bias test: ", ids.size(), " ids for ",
            coords.rows(), " coordinate rows");
    require(modes >= 1 && static_cast<Eigen::Index>(modes) <= coords.cols(), "feature bias test: ", modes,
            " modes requested but only ", coords.cols(), " coordinates available");
    require(!pairs.empty(), "feature bias test: no group pairs configured");

    // Rows of `coords` belonging to each side of each pair.
    std::vector<std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>>> members(pairs.size());
    for (std::size_t k = 0; k < pairs.size(); ++k) {
        for (std::size_t r = 0; r < ids.size(); ++r) {
            const auto& s = cohort.at(ids[r]);
            if (pairs[k].first.matches(cohort, s).value_or(false)) members[k].first.push_back(static_cast<Eigen::Index>(r));
            if (pairs[k].second.matches(cohort, s).value_or(false)) members[k].second.push_back(static_cast<Eigen::Index>(r));
        }
        require(members[k].first.size() >= 2, "feature bias test: group ", pairs[k].first.to_string(), " has ",
                members[k].first.size(), " samples, need >= 2");
        require(members[k].second.size() >= 2, "feature bias test: group ", pairs[k].second.to_string(), " has ",
                members[k].second.size(), " samples, need >= 2");
    }

    StatReport report;
    report.modes = modes;
    for (const auto& p : pairs) report.comparisons.push_back(pair_name(p));
    std::vector<double> a, b;
    for (std::size_t m = 0; m < modes; ++m) {
        const auto col = static_cast<Eigen::Index>(m);
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            a.clear();
            b.clear();
            for (auto r : members[k].first) a.push_back(coords(r, col));
            for (auto r : members[k].second) b.push_back(coords(r, col));
            const auto ks = ks_two_sample(a, b);
            StatRow row;
            row.mode = m + 1;
            row.explained_variance_ratio = col < variance_ratio.size() ? variance_ratio(col) : std::nan("");
            row.comparison = report.comparisons[k];
            row.n1 = ks.n1;
            row.n2 = ks.n2;
            row.d_stat = ks.d_stat;
            row.p_raw = ks.p_raw;
            report.rows.push_back(std::move(row));
        }
    }

    auto adjust = [&](const std::vector<std::size_t>& cells) {
        std::vector<double> raw;
        for (auto c : cells) raw.push_back(report.rows[c].p_raw);
        const auto adj = benjamini_yekutieli(raw);
        for (std::size_t i = 0; i < cells.size(); ++i) report.rows[cells[i]].p_adjusted = adj[i];
    };
    if (family == TestFamily::Grid) {
        std::vector<std::size_t> all(report.rows.size());
        std::iota(all.begin(), all.end(), 0);
        adjust(all);
    } else {
        for (std::size_t k = 0; k < pairs.size(); ++k) {
            std::vector<std::size_t> cells;
            for (std::size_t m = 0; m < modes; ++m) cells.push_back(m * pairs.size() + k);
            adjust(cells);
        }
    }
    for (auto& row : report.rows) row.tier = significance_tier(row.p_adjusted);
    report.metadata["family"] = family == TestFamily::Grid ? "grid" : "per_pair";
    return report;
}

/// Two significant digits, "<0.0001" below that.
inline std::string format_p_value(double p) {
    if (p < 0.0001) return "<0.0001";
    const int magnitude = static_cast<int>(std::floor(std::log10(p)));
    return csv::format_fixed(p, std::max(2, 1 - magnitude));
}

inline nlohmann::json to_json(const StatReport& r) {
    nlohmann::json j;
    j["comparisons"] = r.comparisons;
    j["modes"] = r.modes;
    auto rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        nlohmann::json o;
        o["mode"] = row.mode;
        o["explained_variance_ratio"] = std::isfinite(row.explained_variance_ratio)
                                            ? nlohmann::json(row.explained_variance_ratio)
                                            : nlohmann::json(nullptr);
        o["comparison"] = row.comparison;
        o["n1"] = row.n1;
        o["n2"] = row.n2;
        o["d_stat"] = row.d_stat;
        o["p_raw"] = row.p_raw;
        o["p_adjusted"] = row.p_adjusted;
        o["tier"] = to_string(row.tier);
        rows.push_back(std::move(o));
    }
    j["rows"] = std::move(rows);
    j["metadata"] = r.metadata;
    return j;
}

/// One row per mode, one column per comparison; cells are adjusted p-values
/// with their significance markers.
inline std::string stat_report_csv(const StatReport& r) {
    csv::Row header{"Mode", "Exp. Var."};
    for (const auto& c : r.comparisons) header.push_back(c);
    std::string out = csv::join(header) + "\n";
    for (std::size_t m = 1; m <= r.modes; ++m) {
        const auto& first = r.at(m, 0);
        csv::Row row{"PCA mode " + std::to_string(m),
                     std::isfinite(first.explained_variance_ratio)
                         ? csv::format_fixed(100.0 * first.explained_variance_ratio, 1) + "%"
                         : std::string("-")};
        for (std::size_t k = 0; k < r.comparisons.size(); ++k) {
            const auto& cell = r.at(m, k);
            std::string text = format_p_value(cell.p_adjusted);
            if (cell.tier != Tier::NotSignificant) text += to_string(cell.tier);
            row.push_back(std::move(text));
        }
        out += csv::join(row) + "\n";
    }
    return out;
}

/// Long-format rows with raw and adjusted values.
inline std::string stat_rows_csv(const StatReport& r) {
    std::string out = "mode,explained_variance_ratio,comparison,n1,n2,d_stat,p_raw,p_adjusted,tier\n";
    for (const auto& row : r.rows) {
        out += csv::join({std::to_string(row.mode), csv::format_double(row.explained_variance_ratio), row.comparison,
                          std::to_string(row.n1), std::to_string(row.n2), csv::format_double(row.d_stat),
                          csv::format_double(row.p_raw), csv::format_double(row.p_adjusted),
                          std::string(to_string(row.tier))}) +
               "\n";
    }
    return out;
}

}  // namespace biasaudit
