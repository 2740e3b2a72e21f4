#pragma once

// Seeded resampling: balanced test-set construction, per-patient
// deduplication, per-group subsampling and bootstrap replicate streams.
//
// Every draw is a pure function of (inputs, seed). Independent units
// (strata, groups, replicates) get their own substream via mix_seed so any one
// of them can be regenerated alone.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "biasaudit/cohort.hpp"
#include "biasaudit/error.hpp"
#include "biasaudit/random.hpp"

namespace biasaudit {

/// A stratifying or grouping attribute. `Label` with an empty name means "the
/// label currently being evaluated" and must be bound before use.
struct AttributeRef {
    enum class Kind { Sex, Race, Age, Label } kind = Kind::Race;
    std::string label;

    static AttributeRef parse(std::string_view s) {
        if (s == "sex") return {Kind::Sex, {}};
        if (s == "race") return {Kind::Race, {}};
        if (s == "age") return {Kind::Age, {}};
        if (s == "label") return {Kind::Label, {}};
        if (s.rfind("label:", 0) == 0 && s.size() > 6) return {Kind::Label, std::string(s.substr(6))};
        fail("unknown attribute '", s, "' (expected sex, race, age, label or label:<name>)");
    }

    [[nodiscard]] std::string to_string() const {
        switch (kind) {
            case Kind::Sex: return "sex";
            case Kind::Race: return "race";
            case Kind::Age: return "age";
            case Kind::Label: return label.empty() ? "label" : "label:" + label;
        }
        return {};
    }
};

struct ResamplePlan {
    std::vector<AttributeRef> attributes{AttributeRef{AttributeRef::Kind::Race, {}},
                                         AttributeRef{AttributeRef::Kind::Age, {}},
                                         AttributeRef{AttributeRef::Kind::Label, {}}};
    double age_bin_width = 10.0;
    std::size_t target = 0;  // per-stratum draws; 0 = median non-empty stratum size
    std::uint64_t seed = 0;
    bool skip_empty = true;  // empty cells of the attribute cross-product

    void validate() const {
        require(!attributes.empty(), "resample plan: no attributes");
        require(age_bin_width > 0.0, "resample plan: age bin width must be > 0");
    }

    /// Binds bare `label` attributes to a concrete label name.
    [[nodiscard]] ResamplePlan bound_to(const std::string& label) const {
        ResamplePlan p = *this;
        for (auto& a : p.attributes) {
            if (a.kind == AttributeRef::Kind::Label && a.label.empty()) a.label = label;
        }
        return p;
    }
};

inline nlohmann::json to_json(const ResamplePlan& p) {
    nlohmann::json j;
    auto attrs = nlohmann::json::array();
    for (const auto& a : p.attributes) attrs.push_back(a.to_string());
    j["attributes"] = std::move(attrs);
    j["age_bin_width"] = p.age_bin_width;
    j["target"] = p.target;
    j["seed"] = p.seed;
    j["skip_empty"] = p.skip_empty;
    return j;
}

struct StratumDraw {
    std::string key;
    std::size_t members = 0;
    std::size_t drawn = 0;
};

/// Ordered sample indices (repeats allowed) plus provenance.
struct IndexMultiset {
    std::vector<std::size_t> indices;
    std::vector<StratumDraw> strata;
    std::size_t excluded = 0;  // samples missing a stratifying attribute
    std::size_t target = 0;
    nlohmann::json plan;
};

namespace detail {

// Stratum coordinate of one sample on one attribute; empty = missing.
inline std::string stratum_value(const Cohort& cohort, const Sample& s, const AttributeRef& a, double bin_width) {
    switch (a.kind) {
        case AttributeRef::Kind::Sex: return s.sex ? std::string(to_string(*s.sex)) : std::string{};
        case AttributeRef::Kind::Race: return s.race;
        case AttributeRef::Kind::Age: {
            const auto bin = static_cast<long long>(std::floor(s.age / bin_width));
            // zero-padded so lexicographic order is numeric order
            char buf[32];
            std::snprintf(buf, sizeof(buf), "age%06lld", bin);
            return buf;
        }
        case AttributeRef::Kind::Label: {
            require(!a.label.empty(), "resample plan: 'label' attribute not bound to a label name");
            const auto v = s.labels[cohort.label_index(a.label)];
            if (v == LabelValue::Missing) return {};
            return v == LabelValue::Positive ? "1" : "0";
        }
    }
    return {};
}

inline std::string describe_stratum(const std::vector<AttributeRef>& attrs, const std::vector<std::string>& values,
                                    double bin_width) {
    std::string out;
    for (std::size_t i = 0; i < attrs.size(); ++i) {
        if (i) out += ", ";
        if (attrs[i].kind == AttributeRef::Kind::Age) {
            const double lo = std::stod(values[i].substr(3)) * bin_width;
            out += "age=[" + csv::format_double(lo) + "," + csv::format_double(lo + bin_width) + ")";
        } else {
            out += attrs[i].to_string() + "=" + values[i];
        }
    }
    return out;
}

}  // namespace detail

/// Draws exactly `target` indices with replacement from every non-empty
/// stratum of the attribute cross-product. Strata are emitted in sorted key
/// order; stratum s uses substream mix_seed(seed, s).
inline IndexMultiset stratified_resample(const Cohort& cohort, const ResamplePlan& plan) {
    plan.validate();
    const std::size_t na = plan.attributes.size();
    std::map<std::vector<std::string>, std::vector<std::size_t>> cells;
    std::vector<std::set<std::string>> observed(na);
    IndexMultiset out;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        std::vector<std::string> key(na);
        bool complete = true;
        for (std::size_t a = 0; a < na && complete; ++a) {
            key[a] = detail::stratum_value(cohort, cohort[i], plan.attributes[a], plan.age_bin_width);
            complete = !key[a].empty();
        }
        if (!complete) {
            ++out.excluded;
            continue;
        }
        for (std::size_t a = 0; a < na; ++a) observed[a].insert(key[a]);
        cells[key].push_back(i);
    }
    require(!cells.empty(), "stratified_resample: no sample has values for every stratifying attribute");

    // Enumerate the full cross-product so empty cells are visible.
    std::vector<std::vector<std::string>> keys{{}};
    for (std::size_t a = 0; a < na; ++a) {
        std::vector<std::vector<std::string>> next;
        for (const auto& prefix : keys) {
            for (const auto& v : observed[a]) {
                auto k = prefix;
                k.push_back(v);
                next.push_back(std::move(k));
            }
        }
        keys = std::move(next);
    }

    std::vector<std::size_t> sizes;
    for (const auto& k : keys) {
        const auto it = cells.find(k);
        if (it == cells.end()) {
            require(plan.skip_empty, "stratified_resample: stratum {",
                    detail::describe_stratum(plan.attributes, k, plan.age_bin_width), "} is empty");
            continue;
        }
        sizes.push_back(it->second.size());
    }
    std::size_t target = plan.target;
    if (target == 0) {
        std::sort(sizes.begin(), sizes.end());
        target = sizes[(sizes.size() - 1) / 2];
    }
    out.target = target;

    std::uint64_t ordinal = 0;
    for (const auto& k : keys) {
        const auto it = cells.find(k);
        if (it == cells.end()) continue;
        const auto& members = it->second;
        Rng rng(mix_seed(plan.seed, ordinal++));
        for (std::size_t t = 0; t < target; ++t) out.indices.push_back(members[rng.index(members.size())]);
        out.strata.push_back({detail::describe_stratum(plan.attributes, k, plan.age_bin_width), members.size(), target});
    }
    out.plan = to_json(plan);
    out.plan["resolved_target"] = target;
    return out;
}

/// One uniformly chosen scan per patient. Returned ids follow cohort order.
inline std::vector<std::string> one_scan_per_patient(const Cohort& cohort, std::uint64_t seed) {
    require(!cohort.empty(), "one_scan_per_patient: empty cohort");
    std::map<std::string, std::vector<std::size_t>> scans;
    for (std::size_t i = 0; i < cohort.size(); ++i) scans[cohort[i].patient_id].push_back(i);
    std::vector<bool> keep(cohort.size(), false);
    Rng rng(seed);
    for (const auto& [patient, rows] : scans) keep[rows[rng.index(rows.size())]] = true;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        if (keep[i]) ids.push_back(cohort[i].sample_id);
    }
    return ids;
}

/// `per_group` distinct samples from every observed value of `attribute`
/// (without replacement). Group g uses substream mix_seed(seed, g) with groups
/// in sorted order. Returned ids follow cohort order.
inline std::vector<std::string> subsample_per_group(const Cohort& cohort, const AttributeRef& attribute,
                                                    std::size_t per_group, std::uint64_t seed) {
    require(per_group >= 1, "subsample_per_group: per_group must be >= 1");
    require(attribute.kind != AttributeRef::Kind::Age, "subsample_per_group: age is not a group attribute");
    std::map<std::string, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto v = detail::stratum_value(cohort, cohort[i], attribute, 1.0);
        if (!v.empty()) groups[v].push_back(i);
    }
    require(!groups.empty(), "subsample_per_group: no sample has a value for ", attribute.to_string());
    std::vector<bool> keep(cohort.size(), false);
    std::uint64_t ordinal = 0;
    for (auto& [name, rows] : groups) {
        require(rows.size() >= per_group, "subsample_per_group: group ", attribute.to_string(), "=", name, " has ",
                rows.size(), " samples, fewer than ", per_group);
        Rng rng(mix_seed(seed, ordinal++));
        // partial Fisher-Yates
        for (std::size_t t = 0; t < per_group; ++t) {
            std::swap(rows[t], rows[t + rng.index(rows.size() - t)]);
            keep[rows[t]] = true;
        }
    }
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        if (keep[i]) ids.push_back(cohort[i].sample_id);
    }
    return ids;
}

/// Bootstrap replicates over n rows. Replicate r depends only on (seed, r).
class BootstrapStream {
public:
    BootstrapStream(std::size_t n, std::size_t replicates, std::uint64_t seed)
        : n_(n), replicates_(replicates), seed_(seed) {
        require(n >= 1, "bootstrap: n must be >= 1");
        require(replicates >= 1, "bootstrap: replicates must be >= 1");
    }

    [[nodiscard]] std::size_t size() const { return replicates_; }
    [[nodiscard]] std::size_t n() const { return n_; }

    [[nodiscard]] std::vector<std::size_t> replicate(std::size_t r) const {
        require(r < replicates_, "bootstrap: replicate ", r, " out of range");
        Rng rng(mix_seed(seed_, r));
        std::vector<std::size_t> idx(n_);
        for (auto& i : idx) i = rng.index(n_);
        return idx;
    }

private:
    std::size_t n_;
    std::size_t replicates_;
    std::uint64_t seed_;
};

inline BootstrapStream bootstrap_indices(std::size_t n, std::size_t replicates, std::uint64_t seed) {
    return {n, replicates, seed};
}

/// Cluster bootstrap: clusters (e.g. patients) are drawn with replacement and
/// contribute all their rows. Replicate r depends only on (seed, r).
class ClusterBootstrapStream {
public:
    ClusterBootstrapStream(std::span<const std::string> cluster_of_row, std::size_t replicates, std::uint64_t seed)
        : replicates_(replicates), seed_(seed) {
        require(!cluster_of_row.empty(), "cluster bootstrap: no rows");
        require(replicates >= 1, "cluster bootstrap: replicates must be >= 1");
        std::map<std::string, std::size_t> id;
        for (std::size_t r = 0; r < cluster_of_row.size(); ++r) {
            const auto [it, inserted] = id.emplace(cluster_of_row[r], clusters_.size());
            if (inserted) clusters_.emplace_back();
            clusters_[it->second].push_back(r);
        }
    }

    [[nodiscard]] std::size_t size() const { return replicates_; }

    [[nodiscard]] std::vector<std::size_t> replicate(std::size_t r) const {
        require(r < replicates_, "cluster bootstrap: replicate ", r, " out of range");
        Rng rng(mix_seed(seed_, r));
        std::vector<std::size_t> idx;
        for (std::size_t c = 0; c < clusters_.size(); ++c) {
            const auto& rows = clusters_[rng.index(clusters_.size())];
            idx.insert(idx.end(), rows.begin(), rows.end());
        }
        return idx;
    }

private:
    std::vector<std::vector<std::size_t>> clusters_;
    std::size_t replicates_;
    std::uint64_t seed_;
};

}  // namespace biasaudit
