#pragma once

// Synthetic cohorts with injected, known bias: Gaussian embeddings with
// additive mean shifts for disease labels and group memberships.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "biasaudit/cohort.hpp"
#include "biasaudit/error.hpp"
#include "biasaudit/metrics.hpp"
#include "biasaudit/random.hpp"

namespace biasaudit {

/// A disease label whose positives are shifted by `magnitude` noise SDs along
/// coordinate axis `axis`.
struct SynthLabel {
    std::string name;
    std::size_t axis = 0;
    double magnitude = 3.0;
    double prevalence = 0.3;
    std::map<std::string, double> prevalence_by_race;
    std::map<std::string, double> magnitude_by_race;  // group-conditional signal
    double missing_rate = 0.0;
};

struct AxisShift {
    std::size_t axis = 1;
    double magnitude = 0.0;  // in noise SDs
};

struct SynthSpec {
    std::vector<std::string> races{"White", "Asian", "Black"};
    std::size_t n_per_group = 1000;  // scans per race group
    double female_fraction = 0.5;
    std::size_t dim = 16;
    double noise_sd = 1.0;
    std::vector<SynthLabel> labels{SynthLabel{"disease", 0, 3.0, 0.3, {}, {}, 0.0}};
    AxisShift sex_shift{1, 0.0};  // applied to Female samples
    std::size_t race_axis = 2;
    std::map<std::string, double> race_shift;  // race -> magnitude in noise SDs
    std::size_t scans_per_patient = 1;
    double train_fraction = 0.6;
    double validation_fraction = 0.2;
    double age_mean = 60.0;
    double age_sd = 15.0;
    std::uint64_t seed = 0;

    void validate() const {
        require(dim >= 2, "synth: dim must be >= 2");
        require(!races.empty(), "synth: no race groups");
        require(n_per_group >= 1, "synth: n_per_group must be >= 1");
        require(female_fraction >= 0.0 && female_fraction <= 1.0, "synth: female_fraction outside [0, 1]");
        require(noise_sd > 0.0, "synth: noise_sd must be > 0");
        require(scans_per_patient >= 1, "synth: scans_per_patient must be >= 1");
        require(train_fraction >= 0.0 && validation_fraction >= 0.0 && train_fraction + validation_fraction <= 1.0,
                "synth: split fractions must be non-negative and sum to at most 1");
        require(age_sd >= 0.0, "synth: age_sd must be >= 0");
        require(sex_shift.axis < dim && race_axis < dim, "synth: shift axis outside [0, dim)");
        require(sex_shift.magnitude >= 0.0, "synth: sex shift magnitude must be >= 0");
        for (const auto& [race, m] : race_shift) require(m >= 0.0, "synth: race shift for ", race, " must be >= 0");
        for (const auto& l : labels) {
            require(!l.name.empty(), "synth: label without a name");
            require(l.axis < dim, "synth: label ", l.name, " axis outside [0, dim)");
            require(l.magnitude >= 0.0, "synth: label ", l.name, " magnitude must be >= 0");
            require(l.prevalence > 0.0 && l.prevalence < 1.0, "synth: label ", l.name, " prevalence outside (0, 1)");
            for (const auto& [race, p] : l.prevalence_by_race) {
                require(p > 0.0 && p < 1.0, "synth: label ", l.name, " prevalence for ", race, " outside (0, 1)");
            }
            for (const auto& [race, m] : l.magnitude_by_race) {
                require(m >= 0.0, "synth: label ", l.name, " magnitude for ", race, " must be >= 0");
            }
            require(l.missing_rate >= 0.0 && l.missing_rate < 1.0, "synth: label ", l.name,
                    " missing_rate outside [0, 1)");
        }
    }
};

struct SynthData {
    EmbeddingSet embeddings;
    Cohort cohort;
};

/// x = noise_sd * (N(0, I) + sum_l y_l m_l e_l + [female] s e_sex + r_race e_race)
inline SynthData generate(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const auto d = static_cast<Eigen::Index>(spec.dim);
    const std::size_t total = spec.races.size() * spec.n_per_group;
    Matrix x(static_cast<Eigen::Index>(total), d);
    std::vector<std::string> ids;
    std::vector<Sample> samples;
    std::vector<std::string> label_names;
    for (const auto& l : spec.labels) label_names.push_back(l.name);

    char buf[64];
    std::size_t row = 0;
    std::size_t patient_no = 0;
    for (const auto& race : spec.races) {
        const auto shift_it = spec.race_shift.find(race);
        const double race_shift = shift_it == spec.race_shift.end() ? 0.0 : shift_it->second;
        Sample patient;
        for (std::size_t k = 0; k < spec.n_per_group; ++k, ++row) {
            if (k % spec.scans_per_patient == 0) {
                ++patient_no;
                std::snprintf(buf, sizeof(buf), "p%06zu", patient_no);
                patient.patient_id = buf;
                patient.race = race;
                patient.sex = rng.bernoulli(spec.female_fraction) ? Sex::Female : Sex::Male;
                patient.age = std::clamp(rng.normal(spec.age_mean, spec.age_sd), 18.0, 95.0);
                const double u = rng.uniform();
                patient.split = u < spec.train_fraction                               ? Split::Train
                                : u < spec.train_fraction + spec.validation_fraction ? Split::Validation
                                                                                      : Split::Test;
            }
            Sample s = patient;
            std::snprintf(buf, sizeof(buf), "s%07zu", row + 1);
            s.sample_id = buf;
            s.labels.clear();
            const auto r = static_cast<Eigen::Index>(row);
            for (Eigen::Index c = 0; c < d; ++c) x(r, c) = rng.normal();
            for (const auto& l : spec.labels) {
                const auto p_it = l.prevalence_by_race.find(race);
                const double prevalence = p_it == l.prevalence_by_race.end() ? l.prevalence : p_it->second;
                const auto m_it = l.magnitude_by_race.find(race);
                const double magnitude = m_it == l.magnitude_by_race.end() ? l.magnitude : m_it->second;
                const bool positive = rng.bernoulli(prevalence);
                const bool missing = rng.bernoulli(l.missing_rate);
                if (positive) x(r, static_cast<Eigen::Index>(l.axis)) += magnitude;
                s.labels.push_back(missing ? LabelValue::Missing
                                           : (positive ? LabelValue::Positive : LabelValue::Negative));
            }
            if (s.sex == Sex::Female) x(r, static_cast<Eigen::Index>(spec.sex_shift.axis)) += spec.sex_shift.magnitude;
            x(r, static_cast<Eigen::Index>(spec.race_axis)) += race_shift;
            ids.push_back(s.sample_id);
            samples.push_back(std::move(s));
        }
    }
    x *= spec.noise_sd;
    return {EmbeddingSet(std::move(ids), std::move(x)), Cohort(std::move(label_names), std::move(samples))};
}

/// Scores sigmoid(N(0, 1) + y * separation) for one label, with the
/// separation overridden for samples matching a group selector (first match
/// wins). Binormal AUC is Phi(separation / sqrt(2)). Samples with a missing
/// label are scored as negatives.
inline ScoreTable synthesize_scores(const Cohort& cohort, const std::string& label, double separation,
                                    const std::vector<std::pair<GroupSelector, double>>& overrides,
                                    std::uint64_t seed) {
    const std::size_t li = cohort.label_index(label);
    Rng rng(seed);
    std::vector<std::string> ids;
    Matrix scores(static_cast<Eigen::Index>(cohort.size()), 1);
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const auto& s = cohort[i];
        double sep = separation;
        for (const auto& [sel, value] : overrides) {
            if (sel.matches(cohort, s).value_or(false)) {
                sep = value;
                break;
            }
        }
        const double z = rng.normal() + (s.labels[li] == LabelValue::Positive ? sep : 0.0);
        scores(static_cast<Eigen::Index>(i), 0) = 1.0 / (1.0 + std::exp(-z));
        ids.push_back(s.sample_id);
    }
    return {std::move(ids), {label}, std::move(scores)};
}

}  // namespace biasaudit
