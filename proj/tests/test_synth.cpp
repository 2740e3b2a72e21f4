#include <gtest/gtest.h>

#include <cmath>

#include "biasaudit/metrics.hpp"
#include "biasaudit/synth.hpp"

using namespace biasaudit;

TEST(Synth, SizesAndIds) {
    SynthSpec spec;
    spec.n_per_group = 50;
    spec.scans_per_patient = 2;
    const auto d = generate(spec);
    EXPECT_EQ(d.embeddings.rows(), 150u);
    EXPECT_EQ(d.embeddings.dim(), 16u);
    EXPECT_EQ(d.cohort.size(), 150u);
    EXPECT_EQ(d.embeddings.ids().front(), "s0000001");
    EXPECT_EQ(d.cohort[0].patient_id, "p000001");
    EXPECT_EQ(d.cohort[1].patient_id, "p000001");
    EXPECT_EQ(d.cohort[2].patient_id, "p000002");
    for (std::size_t i = 0; i < d.cohort.size(); ++i) EXPECT_EQ(d.cohort[i].sample_id, d.embeddings.ids()[i]);
}

TEST(Synth, Deterministic) {
    SynthSpec spec;
    spec.n_per_group = 40;
    spec.seed = 7;
    const auto a = generate(spec);
    const auto b = generate(spec);
    EXPECT_TRUE(a.embeddings == b.embeddings);
    spec.seed = 8;
    EXPECT_FALSE(a.embeddings == generate(spec).embeddings);
}

TEST(Synth, InjectedShiftsRecovered) {
    SynthSpec spec;
    spec.n_per_group = 4000;
    spec.sex_shift = {1, 2.0};
    spec.race_shift = {{"Black", 1.5}};
    spec.seed = 3;
    const auto d = generate(spec);
    const auto& x = d.embeddings.matrix();
    double f = 0, m = 0, nf = 0, nm = 0, b = 0, w = 0, nb = 0, nw = 0, pos = 0, neg = 0, np = 0, nn = 0;
    for (std::size_t i = 0; i < d.cohort.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        const auto& s = d.cohort[i];
        (s.sex == Sex::Female ? f : m) += x(r, 1);
        (s.sex == Sex::Female ? nf : nm) += 1;
        if (s.race == "Black") { b += x(r, 2); nb += 1; }
        if (s.race == "White") { w += x(r, 2); nw += 1; }
        if (s.labels[0] == LabelValue::Positive) { pos += x(r, 0); np += 1; } else { neg += x(r, 0); nn += 1; }
    }
    EXPECT_NEAR(f / nf - m / nm, 2.0, 0.1);
    EXPECT_NEAR(b / nb - w / nw, 1.5, 0.1);
    EXPECT_NEAR(pos / np - neg / nn, 3.0, 0.1);
    EXPECT_NEAR(np / (np + nn), 0.3, 0.02);
}

TEST(Synth, MissingRateAndSplits) {
    SynthSpec spec;
    spec.n_per_group = 3000;
    spec.labels[0].missing_rate = 0.25;
    const auto d = generate(spec);
    std::size_t missing = 0, train = 0, val = 0;
    for (const auto& s : d.cohort.samples()) {
        missing += s.labels[0] == LabelValue::Missing;
        train += s.split == Split::Train;
        val += s.split == Split::Validation;
    }
    const double n = static_cast<double>(d.cohort.size());
    EXPECT_NEAR(missing / n, 0.25, 0.02);
    EXPECT_NEAR(train / n, 0.6, 0.02);
    EXPECT_NEAR(val / n, 0.2, 0.02);
}

TEST(Synth, ValidationErrors) {
    SynthSpec spec;
    spec.dim = 1;
    EXPECT_THROW((void)generate(spec), Error);
    spec = {};
    spec.labels[0].prevalence = 1.0;
    EXPECT_THROW((void)generate(spec), Error);
    spec = {};
    spec.race_axis = 16;
    EXPECT_THROW((void)generate(spec), Error);
}

TEST(SynthScores, GroupAucMatchesBinormal) {
    SynthSpec spec;
    spec.n_per_group = 6000;
    spec.seed = 11;
    const auto d = generate(spec);
    const auto scores = synthesize_scores(d.cohort, "disease", 2.0,
                                          {{GroupSelector::parse("race=Black"), 1.0}}, 5);
    for (const std::string race : {"White", "Black"}) {
        std::vector<double> s;
        std::vector<std::uint8_t> y;
        for (std::size_t i = 0; i < d.cohort.size(); ++i) {
            if (d.cohort[i].race != race) continue;
            s.push_back(scores.scores()(static_cast<Eigen::Index>(i), 0));
            y.push_back(d.cohort[i].labels[0] == LabelValue::Positive);
        }
        const double sep = race == "Black" ? 1.0 : 2.0;
        const double expected = 0.5 * std::erfc(-sep / 2.0);  // Phi(sep / sqrt 2)
        EXPECT_NEAR(auc(s, y), expected, 0.02) << race;
    }
}
