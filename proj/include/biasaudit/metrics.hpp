#pragma once

// ROC analysis at a fixed decision threshold, subgroup metric tables with
// percentile bootstrap intervals, and relative-change disparity summaries.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "biasaudit/cohort.hpp"
#include "biasaudit/csv.hpp"
#include "biasaudit/error.hpp"
#include "biasaudit/random.hpp"
#include "biasaudit/sampling.hpp"
#include "biasaudit/stats.hpp"

namespace biasaudit {

// ---------------------------------------------------------------------------
// ScoreTable

/// Per-sample, per-label probabilities from one model.
class ScoreTable {
public:
    ScoreTable() = default;

    ScoreTable(std::vector<std::string> ids, std::vector<std::string> labels, Matrix scores)
        : ids_(std::move(ids)), labels_(std::move(labels)), scores_(std::move(scores)) {
        require(static_cast<Eigen::Index>(ids_.size()) == scores_.rows(), "score table: ", ids_.size(), " ids for ",
                scores_.rows(), " rows");
        require(static_cast<Eigen::Index>(labels_.size()) == scores_.cols(), "score table: ", labels_.size(),
                " labels for ", scores_.cols(), " columns");
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            const auto [it, inserted] = index_.emplace(ids_[i], i);
            require(inserted, "score table row ", i, ": duplicate sample id '", ids_[i], "'");
            for (Eigen::Index l = 0; l < scores_.cols(); ++l) {
                const double s = scores_(static_cast<Eigen::Index>(i), l);
                require(std::isfinite(s) && s >= 0.0 && s <= 1.0, "score table row ", i, ", label ",
                        labels_[static_cast<std::size_t>(l)], ": score ", s, " outside [0, 1]");
            }
        }
    }

    [[nodiscard]] const std::vector<std::string>& ids() const { return ids_; }
    [[nodiscard]] const std::vector<std::string>& labels() const { return labels_; }
    [[nodiscard]] const Matrix& scores() const { return scores_; }

    [[nodiscard]] std::optional<std::size_t> find(const std::string& id) const {
        const auto it = index_.find(id);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    [[nodiscard]] std::size_t label_column(const std::string& label) const {
        for (std::size_t l = 0; l < labels_.size(); ++l) {
            if (labels_[l] == label) return l;
        }
        fail("score table has no column for label '", label, "'");
    }

    [[nodiscard]] double score(const std::string& id, std::size_t column) const {
        const auto r = find(id);
        require(r.has_value(), "score table has no row for sample id '", id, "'");
        return scores_(static_cast<Eigen::Index>(*r), static_cast<Eigen::Index>(column));
    }

private:
    std::vector<std::string> ids_;
    std::vector<std::string> labels_;
    Matrix scores_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// `sample_id,<label>,...`
inline ScoreTable load_score_table(const std::string& path) {
    const auto t = csv::read_file(path);
    require(t.header.size() >= 2 && t.header[0] == "sample_id", "'", path,
            "': malformed header (expected sample_id,<label>,...)");
    std::vector<std::string> labels(t.header.begin() + 1, t.header.end());
    std::vector<std::string> ids;
    Matrix m(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(labels.size()));
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        require(t.rows[i].size() == t.header.size(), "'", path, "': row ", i + 1, ": wrong field count");
        ids.push_back(t.rows[i][0]);
        for (std::size_t l = 0; l < labels.size(); ++l) {
            const auto v = csv::parse_double(t.rows[i][l + 1]);
            require(v.has_value(), "'", path, "': row ", i + 1, ", column ", labels[l], ": unparseable score");
            m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) = *v;
        }
    }
    try {
        return {std::move(ids), std::move(labels), std::move(m)};
    } catch (const Error& e) {
        fail("'", path, "': ", e.what());
    }
}

inline std::string score_table_csv(const ScoreTable& t) {
    csv::Row header{"sample_id"};
    header.insert(header.end(), t.labels().begin(), t.labels().end());
    std::string out = csv::join(header) + "\n";
    for (std::size_t i = 0; i < t.ids().size(); ++i) {
        out += csv::quote(t.ids()[i]);
        for (Eigen::Index l = 0; l < t.scores().cols(); ++l) {
            out += "," + csv::format_double(t.scores()(static_cast<Eigen::Index>(i), l));
        }
        out += "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Threshold-free and fixed-threshold metrics

/// Trapezoidal area under the ROC curve. Computed on integer counts, so it
/// equals the Mann-Whitney probability (ties count 1/2) exactly.
inline double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    require(scores.size() == labels.size(), "auc: ", scores.size(), " scores for ", labels.size(), " labels");
    std::uint64_t pos = 0;
    for (auto y : labels) pos += y ? 1 : 0;
    const std::uint64_t neg = labels.size() - pos;
    require(pos > 0 && neg > 0, "auc: need both classes (", pos, " positives, ", neg, " negatives)");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    // Twice the area, in units of one (positive, negative) pair.
    std::uint64_t area2 = 0;
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double s = scores[order[i]];
        std::uint64_t dtp = 0;
        std::uint64_t dfp = 0;
        for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] ? dtp : dfp) += 1;
        area2 += dfp * (2 * tp + dtp);
        tp += dtp;
        fp += dfp;
    }
    return static_cast<double>(area2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

struct Rates {
    std::optional<double> tpr;  // undefined without positives
    std::optional<double> fpr;  // undefined without negatives
};

/// Decision rule: score > threshold is positive.
inline Rates rates_at(std::span<const double> scores, std::span<const std::uint8_t> labels, double threshold) {
    std::size_t pos = 0, neg = 0, tp = 0, fp = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool flagged = scores[i] > threshold;
        if (labels[i]) {
            ++pos;
            tp += flagged;
        } else {
            ++neg;
            fp += flagged;
        }
    }
    Rates r;
    if (pos) r.tpr = static_cast<double>(tp) / static_cast<double>(pos);
    if (neg) r.fpr = static_cast<double>(fp) / static_cast<double>(neg);
    return r;
}

struct Threshold {
    double value = 0.0;  // may be +-infinity
    double achieved_fpr = 0.0;
};

/// Chooses, among -inf, midpoints between adjacent distinct scores and +inf,
/// the threshold with the largest FPR not exceeding `target_fpr`; among those
/// the lowest one (highest TPR).
inline Threshold calibrate_threshold(std::span<const double> scores, std::span<const std::uint8_t> labels,
                                     double target_fpr) {
    require(scores.size() == labels.size(), "calibrate_threshold: size mismatch");
    require(target_fpr >= 0.0 && target_fpr <= 1.0, "calibrate_threshold: target FPR ", target_fpr,
            " outside [0, 1]");
    std::vector<double> negatives;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (!labels[i]) negatives.push_back(scores[i]);
    }
    require(!negatives.empty(), "calibrate_threshold: no negative samples");
    std::sort(negatives.begin(), negatives.end());
    std::vector<double> distinct(scores.begin(), scores.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    const auto n_neg = static_cast<double>(negatives.size());
    auto fpr_at = [&](double t) {
        const auto above = negatives.end() - std::upper_bound(negatives.begin(), negatives.end(), t);
        return static_cast<double>(above) / n_neg;
    };

    std::vector<double> candidates;
    candidates.reserve(distinct.size() + 1);
    candidates.push_back(-std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i + 1 < distinct.size(); ++i) {
        candidates.push_back(distinct[i] + 0.5 * (distinct[i + 1] - distinct[i]));
    }
    candidates.push_back(std::numeric_limits<double>::infinity());
    // FPR is non-increasing along ascending candidates.
    for (double t : candidates) {
        const double f = fpr_at(t);
        if (f <= target_fpr) return {t, f};
    }
    return {std::numeric_limits<double>::infinity(), 0.0};
}

// ---------------------------------------------------------------------------
// Bootstrap intervals

struct Interval {
    std::optional<double> point;
    std::optional<double> lo;
    std::optional<double> hi;
    std::size_t dropped = 0;  // replicates where the metric was undefined
};

namespace detail {

inline std::optional<double> percentile(std::vector<double>& values, double q) {
    if (values.empty()) return std::nullopt;
    std::sort(values.begin(), values.end());
    return quantile_sorted(values, q);
}

}  // namespace detail

/// A metric family evaluated on a multiset of row indices.
using MultiMetric = std::function<std::vector<std::optional<double>>(std::span<const std::size_t>)>;

/// Percentile intervals (2.5th / 97.5th with linear interpolation) for several
/// metrics sharing the same replicates. Metrics undefined at the point
/// estimate get no interval; a metric defined at the point but undefined on
/// more than half of the replicates is an error.
template <typename Stream>
std::vector<Interval> bootstrap_intervals(const MultiMetric& metric, std::size_t n, const Stream& stream,
                                          const std::vector<std::string>& metric_names = {}) {
    require(stream.size() >= 2, "bootstrap: need at least 2 replicates");
    std::vector<std::size_t> identity(n);
    std::iota(identity.begin(), identity.end(), 0);
    const auto point = metric(identity);
    const std::size_t k = point.size();
    std::vector<std::vector<double>> draws(k);
    std::vector<std::size_t> undefined(k, 0);
    for (std::size_t r = 0; r < stream.size(); ++r) {
        const auto idx = stream.replicate(r);
        const auto values = metric(idx);
        require(values.size() == k, "bootstrap: metric arity changed between replicates");
        for (std::size_t m = 0; m < k; ++m) {
            if (values[m]) {
                draws[m].push_back(*values[m]);
            } else {
                ++undefined[m];
            }
        }
    }
    std::vector<Interval> out(k);
    for (std::size_t m = 0; m < k; ++m) {
        out[m].point = point[m];
        out[m].dropped = undefined[m];
        if (!point[m]) continue;
        if (2 * undefined[m] > stream.size()) {
            fail("bootstrap: metric ", m < metric_names.size() ? metric_names[m] : std::to_string(m),
                 " undefined on ", undefined[m], " of ", stream.size(), " replicates");
        }
        out[m].lo = detail::percentile(draws[m], 0.025);
        out[m].hi = detail::percentile(draws[m], 0.975);
    }
    return out;
}

/// Single-metric percentile bootstrap; errors when the metric is undefined on
/// the original data or on more than half of the replicates.
inline Interval bootstrap_ci(const std::function<std::optional<double>(std::span<const std::size_t>)>& metric,
                             std::size_t n, std::size_t replicates, std::uint64_t seed) {
    require(replicates >= 2, "bootstrap_ci: need at least 2 replicates");
    const auto stream = bootstrap_indices(n, replicates, seed);
    const auto out = bootstrap_intervals(
        [&](std::span<const std::size_t> idx) { return std::vector<std::optional<double>>{metric(idx)}; }, n, stream);
    require(out[0].point.has_value(), "bootstrap_ci: metric undefined on the original data");
    return out[0];
}

// ---------------------------------------------------------------------------
// Subgroup metrics

enum class MetricKind { Auc, Tpr, Fpr, YoudenJ };

inline constexpr std::array<MetricKind, 4> kMetricKinds{MetricKind::Auc, MetricKind::Tpr, MetricKind::Fpr,
                                                       MetricKind::YoudenJ};

inline std::string_view to_string(MetricKind m) {
    switch (m) {
        case MetricKind::Auc: return "AUC";
        case MetricKind::Tpr: return "TPR";
        case MetricKind::Fpr: return "FPR";
        case MetricKind::YoudenJ: return "Youden's J statistic";
    }
    return "?";
}

inline std::string_view metric_key(MetricKind m) {
    switch (m) {
        case MetricKind::Auc: return "auc";
        case MetricKind::Tpr: return "tpr";
        case MetricKind::Fpr: return "fpr";
        case MetricKind::YoudenJ: return "youden_j";
    }
    return "?";
}

struct MetricRecord {
    std::string model;
    std::string label;
    std::string group;
    Interval auc;
    Interval tpr;
    Interval fpr;
    Interval youden_j;

    [[nodiscard]] const Interval& get(MetricKind m) const {
        switch (m) {
            case MetricKind::Auc: return auc;
            case MetricKind::Tpr: return tpr;
            case MetricKind::Fpr: return fpr;
            case MetricKind::YoudenJ: return youden_j;
        }
        return auc;
    }
    Interval& get(MetricKind m) { return const_cast<Interval&>(std::as_const(*this).get(m)); }
};

/// AUC, TPR, FPR and J of one group at a fixed threshold; undefined entries
/// where the group lacks the needed class.
inline std::array<std::optional<double>, 4> group_point_metrics(std::span<const double> scores,
                                                                std::span<const std::uint8_t> labels,
                                                                double threshold) {
    std::array<std::optional<double>, 4> out;
    const auto r = rates_at(scores, labels, threshold);
    const bool both = r.tpr.has_value() && r.fpr.has_value();
    if (both) out[0] = auc(scores, labels);
    out[1] = r.tpr;
    out[2] = r.fpr;
    if (both) out[3] = *r.tpr - *r.fpr;
    return out;
}

/// Evaluation rows of one model on one label: aligned scores, binary labels,
/// and row membership for each reported group.
struct EvalData {
    std::vector<double> scores;
    std::vector<std::uint8_t> labels;
    std::vector<std::vector<bool>> in_group;  // [group][row]
};

namespace detail {

// Metric vector laid out group-major: [g * 4 + metric].
inline std::vector<std::optional<double>> all_group_metrics(const EvalData& data, double threshold,
                                                            std::span<const std::size_t> idx) {
    std::vector<std::optional<double>> out;
    out.reserve(data.in_group.size() * 4);
    std::vector<double> s;
    std::vector<std::uint8_t> y;
    for (const auto& member : data.in_group) {
        s.clear();
        y.clear();
        for (auto i : idx) {
            if (member[i]) {
                s.push_back(data.scores[i]);
                y.push_back(data.labels[i]);
            }
        }
        const auto m = group_point_metrics(s, y, threshold);
        out.insert(out.end(), m.begin(), m.end());
    }
    return out;
}

}  // namespace detail

/// Point estimates per group (no intervals).
inline std::vector<MetricRecord> subgroup_metrics(const EvalData& data, std::span<const std::string> group_names,
                                                  double threshold) {
    require(group_names.size() == data.in_group.size(), "subgroup_metrics: group name count mismatch");
    std::vector<std::size_t> identity(data.scores.size());
    std::iota(identity.begin(), identity.end(), 0);
    const auto values = detail::all_group_metrics(data, threshold, identity);
    std::vector<MetricRecord> out;
    for (std::size_t g = 0; g < group_names.size(); ++g) {
        MetricRecord rec;
        rec.group = group_names[g];
        for (std::size_t m = 0; m < 4; ++m) rec.get(kMetricKinds[m]).point = values[g * 4 + m];
        out.push_back(std::move(rec));
    }
    return out;
}

/// Builds EvalData from the given cohort rows (repeats allowed), one label
/// and a score column. Rows with a missing label are dropped.
inline EvalData make_eval_data(const Cohort& cohort, std::span<const std::size_t> rows, const std::string& label,
                               const ScoreTable& scores, std::span<const GroupSelector> groups) {
    const std::size_t li = cohort.label_index(label);
    const std::size_t col = scores.label_column(label);
    EvalData d;
    d.in_group.assign(groups.size(), {});
    for (auto r : rows) {
        const auto& s = cohort[r];
        const auto v = s.labels[li];
        if (v == LabelValue::Missing) continue;
        d.scores.push_back(scores.score(s.sample_id, col));
        d.labels.push_back(v == LabelValue::Positive ? 1 : 0);
        for (std::size_t g = 0; g < groups.size(); ++g) {
            d.in_group[g].push_back(groups[g].matches(cohort, s).value_or(false));
        }
    }
    return d;
}

inline EvalData make_eval_data(const Cohort& cohort, const std::string& label, const ScoreTable& scores,
                               std::span<const GroupSelector> groups) {
    std::vector<std::size_t> rows(cohort.size());
    std::iota(rows.begin(), rows.end(), 0);
    return make_eval_data(cohort, rows, label, scores, groups);
}

/// 100 * (m_g - mean) / mean over the groups whose metric is defined.
inline std::vector<std::optional<double>> relative_change(std::span<const std::optional<double>> values) {
    double sum = 0.0;
    std::size_t defined = 0;
    for (const auto& v : values) {
        if (v) {
            sum += *v;
            ++defined;
        }
    }
    require(defined >= 2, "relative_change: need at least 2 groups with a defined metric, got ", defined);
    const double mean = sum / static_cast<double>(defined);
    std::vector<std::optional<double>> out(values.size());
    if (mean == 0.0) return out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i]) out[i] = 100.0 * (*values[i] - mean) / mean;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Performance report

struct BootstrapConfig {
    std::size_t replicates = 2000;
    std::uint64_t seed = 0;
    bool cluster_by_patient = false;
};

enum class CalibrationSet { Resampled, Raw };

struct PerformanceConfig {
    std::vector<std::string> labels;
    std::vector<GroupSelector> groups;
    double target_fpr = 0.2;
    std::optional<ResamplePlan> resample;
    BootstrapConfig bootstrap;
    CalibrationSet calibrate_on = CalibrationSet::Resampled;
};

struct ModelSection {
    std::string model;
    std::string label;
    double threshold = 0.0;
    double achieved_fpr = 0.0;  // on the calibration set
    std::size_t eval_rows = 0;
    std::vector<MetricRecord> records;  // one per group
    std::vector<std::optional<double>> relative_change_j;
    std::vector<std::optional<double>> relative_change_auc;
};

struct AuditReport {
    std::vector<std::string> models;
    std::vector<std::string> labels;
    std::vector<std::string> groups;
    std::vector<ModelSection> sections;  // label-major, models in input order
    nlohmann::json provenance = nlohmann::json::object();

    [[nodiscard]] const ModelSection& section(const std::string& model, const std::string& label) const {
        for (const auto& s : sections) {
            if (s.model == model && s.label == label) return s;
        }
        fail("report has no section for model '", model, "', label '", label, "'");
    }
};

struct NamedScores {
    std::string name;
    ScoreTable table;
};

/// Per label: optional balanced resampling, one threshold per model at the
/// target FPR, per-group metrics with percentile bootstrap intervals (the
/// same replicates for every model), and relative change of J and AUC.
inline AuditReport build_performance_report(std::span<const NamedScores> models, const Cohort& cohort,
                                            const PerformanceConfig& config) {
    require(!models.empty(), "performance report: no models");
    require(!config.labels.empty(), "performance report: no labels");
    require(config.groups.size() >= 2, "performance report: need at least 2 groups");

    AuditReport report;
    for (const auto& m : models) report.models.push_back(m.name);
    report.labels = config.labels;
    for (const auto& g : config.groups) report.groups.push_back(g.display_name());
    {
        std::set<std::string> names;
        for (const auto& m : models) require(names.insert(m.name).second, "duplicate model name '", m.name, "'");
    }

    auto& prov = report.provenance;
    prov["version"] = kVersion;
    prov["target_fpr"] = config.target_fpr;
    prov["calibrate_on"] = config.calibrate_on == CalibrationSet::Resampled ? "resampled" : "raw";
    prov["bootstrap"] = {{"replicates", config.bootstrap.replicates},
                         {"seed", config.bootstrap.seed},
                         {"unit", config.bootstrap.cluster_by_patient ? "patient" : "scan"}};
    prov["resample_plan"] = config.resample ? to_json(*config.resample) : nlohmann::json(nullptr);
    prov["groups"] = nlohmann::json::array();
    for (const auto& g : config.groups) prov["groups"].push_back(g.to_string());
    prov["labels"] = nlohmann::json::object();

    for (std::size_t li = 0; li < config.labels.size(); ++li) {
        const auto& label = config.labels[li];
        const std::size_t label_idx = cohort.label_index(label);
        std::vector<std::size_t> rows;
        for (std::size_t i = 0; i < cohort.size(); ++i) {
            if (cohort[i].labels[label_idx] != LabelValue::Missing) rows.push_back(i);
        }
        require(!rows.empty(), "performance report: label '", label, "' has no non-missing values");
        const Cohort labelled = cohort.subset(rows);

        std::vector<std::size_t> eval_rows(labelled.size());
        std::iota(eval_rows.begin(), eval_rows.end(), 0);
        nlohmann::json label_prov;
        label_prov["labelled_rows"] = labelled.size();
        if (config.resample) {
            auto plan = config.resample->bound_to(label);
            plan.seed = mix_seed(config.resample->seed, li);
            const auto ms = stratified_resample(labelled, plan);
            eval_rows = ms.indices;
            label_prov["resample"] = ms.plan;
            label_prov["resample"]["strata"] = ms.strata.size();
            label_prov["resample"]["excluded"] = ms.excluded;
        }
        label_prov["eval_rows"] = eval_rows.size();
        const std::uint64_t boot_seed = mix_seed(config.bootstrap.seed, li);
        label_prov["bootstrap_seed"] = boot_seed;
        label_prov["thresholds"] = nlohmann::json::object();

        std::vector<std::string> metric_names;
        for (const auto& g : report.groups) {
            for (auto m : kMetricKinds) metric_names.push_back(g + "/" + std::string(metric_key(m)));
        }

        for (const auto& model : models) {
            for (const auto& s : labelled.samples()) {
                require(model.table.find(s.sample_id).has_value(), "model '", model.name,
                        "' has no score for sample '", s.sample_id, "'");
            }
            const EvalData data = make_eval_data(labelled, eval_rows, label, model.table, config.groups);
            Threshold thr;
            if (config.calibrate_on == CalibrationSet::Resampled) {
                thr = calibrate_threshold(data.scores, data.labels, config.target_fpr);
            } else {
                const EvalData raw = make_eval_data(labelled, label, model.table, {});
                thr = calibrate_threshold(raw.scores, raw.labels, config.target_fpr);
            }
            auto metric = [&](std::span<const std::size_t> idx) {
                return detail::all_group_metrics(data, thr.value, idx);
            };
            std::vector<Interval> intervals;
            if (config.bootstrap.cluster_by_patient) {
                std::vector<std::string> patients;
                for (auto r : eval_rows) patients.push_back(labelled[r].patient_id);
                intervals = bootstrap_intervals(metric, data.scores.size(),
                                                ClusterBootstrapStream(patients, config.bootstrap.replicates, boot_seed),
                                                metric_names);
            } else {
                intervals = bootstrap_intervals(
                    metric, data.scores.size(),
                    bootstrap_indices(data.scores.size(), config.bootstrap.replicates, boot_seed), metric_names);
            }

            ModelSection sec;
            sec.model = model.name;
            sec.label = label;
            sec.threshold = thr.value;
            sec.achieved_fpr = thr.achieved_fpr;
            sec.eval_rows = eval_rows.size();
            std::vector<std::optional<double>> j_points, auc_points;
            for (std::size_t g = 0; g < config.groups.size(); ++g) {
                MetricRecord rec;
                rec.model = model.name;
                rec.label = label;
                rec.group = report.groups[g];
                for (std::size_t m = 0; m < 4; ++m) {
                    Interval iv = intervals[g * 4 + m];
                    // percentile bounds need not bracket the point estimate
                    if (iv.point && iv.lo) {
                        iv.lo = std::min(*iv.lo, *iv.point);
                        iv.hi = std::max(*iv.hi, *iv.point);
                    }
                    rec.get(kMetricKinds[m]) = iv;
                }
                j_points.push_back(rec.youden_j.point);
                auc_points.push_back(rec.auc.point);
                sec.records.push_back(std::move(rec));
            }
            auto safe_relative = [](const std::vector<std::optional<double>>& v) {
                std::size_t defined = 0;
                for (const auto& x : v) defined += x.has_value();
                return defined >= 2 ? relative_change(v) : std::vector<std::optional<double>>(v.size());
            };
            sec.relative_change_j = safe_relative(j_points);
            sec.relative_change_auc = safe_relative(auc_points);
            label_prov["thresholds"][model.name] = {{"threshold", csv::format_double(thr.value)},
                                                    {"achieved_fpr", thr.achieved_fpr}};
            report.sections.push_back(std::move(sec));
        }
        prov["labels"][label] = std::move(label_prov);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Report rendering

inline nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

inline nlohmann::json to_json(const AuditReport& r) {
    nlohmann::json j;
    j["models"] = r.models;
    j["labels"] = r.labels;
    j["groups"] = r.groups;
    auto sections = nlohmann::json::array();
    for (const auto& s : r.sections) {
        nlohmann::json o;
        o["model"] = s.model;
        o["label"] = s.label;
        o["threshold"] = csv::format_double(s.threshold);
        o["achieved_fpr"] = s.achieved_fpr;
        o["eval_rows"] = s.eval_rows;
        auto recs = nlohmann::json::array();
        for (std::size_t g = 0; g < s.records.size(); ++g) {
            const auto& rec = s.records[g];
            nlohmann::json ro;
            ro["group"] = rec.group;
            for (auto m : kMetricKinds) {
                const auto& iv = rec.get(m);
                ro[std::string(metric_key(m))] = {{"point", optional_json(iv.point)},
                                                  {"lo", optional_json(iv.lo)},
                                                  {"hi", optional_json(iv.hi)},
                                                  {"dropped_replicates", iv.dropped}};
            }
            ro["relative_change_youden_j"] = optional_json(s.relative_change_j[g]);
            ro["relative_change_auc"] = optional_json(s.relative_change_auc[g]);
            recs.push_back(std::move(ro));
        }
        o["records"] = std::move(recs);
        sections.push_back(std::move(o));
    }
    j["sections"] = std::move(sections);
    j["provenance"] = r.provenance;
    return j;
}

/// "0.80 (0.78-0.81)"
inline std::string format_interval(const Interval& iv) {
    if (!iv.point) return "n/a";
    std::string out = csv::format_fixed(*iv.point, 2);
    if (iv.lo && iv.hi) out += " (" + csv::format_fixed(*iv.lo, 2) + "-" + csv::format_fixed(*iv.hi, 2) + ")";
    return out;
}

/// One block per label: metric sub-blocks (AUC, TPR, FPR, J) with one row per
/// model and one column per group.
inline std::string performance_table_csv(const AuditReport& r) {
    std::string out;
    for (const auto& label : r.labels) {
        csv::Row header{label};
        header.insert(header.end(), r.groups.begin(), r.groups.end());
        out += csv::join(header) + "\n";
        for (auto m : kMetricKinds) {
            csv::Row block{std::string(to_string(m)) + " (95% CI)"};
            block.resize(r.groups.size() + 1);
            out += csv::join(block) + "\n";
            for (const auto& model : r.models) {
                const auto& sec = r.section(model, label);
                csv::Row row{model};
                for (const auto& rec : sec.records) row.push_back(format_interval(rec.get(m)));
                out += csv::join(row) + "\n";
            }
        }
    }
    return out;
}

/// Long format for plotting: one row per (label, metric, group, model).
inline std::string performance_plot_csv(const AuditReport& r) {
    std::string out = "label,metric,group,model,point,lo,hi,relative_change\n";
    auto num = [](const std::optional<double>& v) { return v ? csv::format_double(*v) : std::string{}; };
    for (const auto& sec : r.sections) {
        for (auto m : kMetricKinds) {
            for (std::size_t g = 0; g < sec.records.size(); ++g) {
                const auto& iv = sec.records[g].get(m);
                std::optional<double> rel;
                if (m == MetricKind::YoudenJ) rel = sec.relative_change_j[g];
                if (m == MetricKind::Auc) rel = sec.relative_change_auc[g];
                out += csv::join({sec.label, std::string(metric_key(m)), sec.records[g].group, sec.model,
                                  num(iv.point), num(iv.lo), num(iv.hi), num(rel)}) +
                       "\n";
            }
        }
    }
    return out;
}

}  // namespace biasaudit
