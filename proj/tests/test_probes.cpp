#include <gtest/gtest.h>

#include <cmath>

#include "biasaudit/probes.hpp"
#include "biasaudit/random.hpp"
#include "test_util.hpp"

using namespace biasaudit;

namespace {

struct Dataset {
    EmbeddingSet emb;
    Cohort cohort;
};

// Two Gaussians at +-shift along axis 0; labels[1] (if requested) along axis 1.
Dataset separable(std::size_t n, std::size_t d, double shift, std::uint64_t seed, const std::string& prefix,
                  double missing_rate = 0.0) {
    Rng rng(seed);
    Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    std::vector<std::string> ids;
    std::vector<Sample> samples;
    for (std::size_t i = 0; i < n; ++i) {
        const bool y0 = i % 2 == 0;
        const bool y1 = rng.bernoulli(0.4);
        for (std::size_t j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.normal();
        x(static_cast<Eigen::Index>(i), 0) += y0 ? shift : -shift;
        x(static_cast<Eigen::Index>(i), 1) += y1 ? shift : -shift;
        const auto id = prefix + std::to_string(i);
        ids.push_back(id);
        std::vector<LabelValue> labels{y0 ? LabelValue::Positive : LabelValue::Negative,
                                       y1 ? LabelValue::Positive : LabelValue::Negative};
        if (rng.bernoulli(missing_rate)) labels[1] = LabelValue::Missing;
        samples.push_back(testutil::sample(id, "p" + id, Sex::Male, "White", 50, labels));
    }
    return {EmbeddingSet(ids, x), Cohort({"a", "b"}, samples)};
}

const std::vector<std::string> kLabels{"a", "b"};

// Logistic regression by Newton's method on one label (independent oracle).
Vector logistic_regression(const Matrix& x, const Vector& y) {
    const Eigen::Index d = x.cols() + 1;
    Matrix xb(x.rows(), d);
    xb << x, Vector::Ones(x.rows());
    Vector w = Vector::Zero(d);
    for (int it = 0; it < 25; ++it) {
        const Vector p = (xb * w).unaryExpr([](double z) { return 1.0 / (1.0 + std::exp(-z)); });
        const Vector g = xb.transpose() * (p - y) + 1e-3 * w;
        Matrix h = xb.transpose() * (p.cwiseProduct(Vector::Ones(p.size()) - p)).asDiagonal() * xb;
        h += 1e-3 * Matrix::Identity(d, d);
        w -= h.ldlt().solve(g);
    }
    return w;
}

}  // namespace

TEST(ProbeSpec, Presets) {
    EXPECT_EQ(ProbeSpec::preset("linear").architecture, ProbeSpec::Architecture::Linear);
    EXPECT_EQ(ProbeSpec::preset("mlp3").hidden_layers, 3u);
    EXPECT_EQ(ProbeSpec::preset("mlp5").hidden_layers, 5u);
    EXPECT_EQ(ProbeSpec::preset("mlp5").hidden_width, 256u);
    EXPECT_THROW((void)ProbeSpec::preset("mlp4"), Error);
}

TEST(ProbeModel, LayerShapesChain) {
    auto spec = ProbeSpec::preset("mlp3");
    spec.hidden_width = 8;
    const auto m = init_probe(spec, 5, kLabels);
    ASSERT_EQ(m.layers.size(), 4u);
    EXPECT_EQ(m.layers[0].weight.cols(), 5);
    EXPECT_EQ(m.layers[3].weight.rows(), 2);
    EXPECT_EQ(m.parameter_count(), 5u * 8 + 8 + 2 * (8 * 8 + 8) + 8 * 2 + 2);
}

TEST(Predict, ZeroModelGivesHalf) {
    auto m = init_probe(ProbeSpec::preset("linear"), 3, kLabels);
    m.layers[0].weight.setZero();
    m.layers[0].bias.setZero();
    Rng rng(1);
    Matrix x(4, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    const auto s = predict_probe(m, EmbeddingSet({"a", "b", "c", "d"}, x));
    EXPECT_TRUE((s.scores().array() == 0.5).all());
}

TEST(Predict, LogisticLimits) {
    auto m = init_probe(ProbeSpec::preset("linear"), 1, {"a"});
    m.layers[0].weight(0, 0) = 1.0;
    m.layers[0].bias(0) = 0.0;
    EXPECT_EQ(predict_probe(m, EmbeddingSet({"z"}, Matrix::Zero(1, 1))).scores()(0, 0), 0.5);
    const auto big = predict_probe(m, EmbeddingSet({"z"}, Matrix::Constant(1, 1, 50.0))).scores()(0, 0);
    EXPECT_GT(big, 1.0 - 1e-15);
    EXPECT_LE(big, 1.0);
    EXPECT_THROW((void)predict_probe(m, EmbeddingSet({"z"}, Matrix::Zero(1, 2))), Error);
}

TEST(Predict, BatchEqualsPerRow) {
    auto spec = ProbeSpec::preset("mlp3");
    spec.hidden_width = 16;
    const auto m = init_probe(spec, 4, kLabels);
    const auto data = separable(10, 4, 1.0, 3, "r");
    const auto batch = predict_probe(m, data.emb);
    for (std::size_t i = 0; i < 10; ++i) {
        const std::vector<std::size_t> one{i};
        const auto single = predict_probe(m, data.emb.subset(one));
        EXPECT_LT((single.scores().row(0) - batch.scores().row(static_cast<Eigen::Index>(i))).cwiseAbs().maxCoeff(),
                  1e-15);
    }
}

TEST(Loss, HalfPredictorIsLn2) {
    auto m = init_probe(ProbeSpec::preset("linear"), 3, kLabels);
    m.layers[0].weight.setZero();
    m.layers[0].bias.setZero();
    const auto data = separable(6, 3, 1.0, 4, "h", 0.5);
    const auto t = targets_for(data.cohort, data.emb.ids(), kLabels);
    EXPECT_NEAR(probe_loss(m, data.emb.matrix(), t), std::log(2.0), 1e-15);
}

TEST(GradientCheck, LinearPreset) {
    const auto data = separable(4, 6, 1.0, 5, "g");
    const auto t = targets_for(data.cohort, data.emb.ids(), kLabels);
    auto spec = ProbeSpec::preset("linear");
    spec.seed = 3;
    EXPECT_LE(gradient_check(spec, data.emb.matrix(), t, kLabels), 1e-4);
}

TEST(GradientCheck, Mlp3Preset) {
    const auto data = separable(4, 6, 1.0, 6, "g");
    const auto t = targets_for(data.cohort, data.emb.ids(), kLabels);
    auto spec = ProbeSpec::preset("mlp3");
    spec.hidden_width = 32;
    spec.seed = 4;
    EXPECT_LE(gradient_check(spec, data.emb.matrix(), t, kLabels), 1e-4);
}

TEST(GradientCheck, MaskedEntries) {
    const auto data = separable(8, 5, 1.0, 7, "g", 0.5);
    const auto t = targets_for(data.cohort, data.emb.ids(), kLabels);
    ASSERT_LT(t.mask.sum(), 16.0);
    auto spec = ProbeSpec::preset("mlp3");
    spec.hidden_width = 12;
    EXPECT_LE(gradient_check(spec, data.emb.matrix(), t, kLabels), 1e-4);
}

TEST(GradientCheck, NearStationaryPoint) {
    // saturated, correctly signed outputs: gradient ~ 0
    Matrix x(4, 1);
    x << 1, 1, -1, -1;
    std::vector<Sample> s;
    std::vector<std::string> ids{"a", "b", "c", "d"};
    for (int i = 0; i < 4; ++i)
        s.push_back(testutil::sample(ids[i], ids[i], Sex::Male, "W", 50, {i < 2 ? LabelValue::Positive : LabelValue::Negative}));
    const Cohort c({"y"}, s);
    auto m = init_probe(ProbeSpec::preset("linear"), 1, {"y"});
    m.layers[0].weight(0, 0) = 15.0;
    m.layers[0].bias(0) = 0.0;
    const auto t = targets_for(c, ids, std::vector<std::string>{"y"});
    const auto g = probe_gradient(m, x, t);
    EXPECT_LT(std::abs(g[0].weight(0, 0)), 1e-6);
    EXPECT_LE(gradient_check(m, x, t), 1e-3);
}

TEST(Train, SeparableReachesHighAuc) {
    const auto train = separable(600, 8, 3.0, 10, "t");
    const auto val = separable(200, 8, 3.0, 11, "v");
    auto spec = ProbeSpec::preset("linear");
    spec.max_epochs = 50;
    spec.batch_size = 64;
    spec.learning_rate = 1e-2;
    const auto r = train_probe(spec, train.emb, train.cohort, val.emb, val.cohort, kLabels);
    const auto t = targets_for(train.cohort, train.emb.ids(), kLabels);
    EXPECT_GE(*macro_auc(probe_logits(r.model, train.emb.matrix()), t), 0.99);

    // independent oracle reaches the same regime on label a
    const Vector w = logistic_regression(train.emb.matrix(), t.y.col(0));
    Matrix xb(train.emb.rows(), 9);
    xb << train.emb.matrix(), Vector::Ones(static_cast<Eigen::Index>(train.emb.rows()));
    Targets ta{t.y.leftCols(1), t.mask.leftCols(1)};
    EXPECT_GE(*macro_auc(xb * w, ta), 0.99);
}

TEST(Train, BestEpochIsReturned) {
    const auto train = separable(300, 6, 0.5, 12, "t", 0.2);
    const auto val = separable(100, 6, 0.5, 13, "v");
    auto spec = ProbeSpec::preset("mlp3");
    spec.hidden_width = 16;
    spec.max_epochs = 30;
    spec.patience = 5;
    spec.batch_size = 32;
    spec.learning_rate = 1e-3;
    const auto r = train_probe(spec, train.emb, train.cohort, val.emb, val.cohort, kLabels);
    double best = 0.0;
    for (const auto& e : r.log) best = std::max(best, e.val_macro_auc);
    EXPECT_EQ(best, r.best_val_macro_auc);
    EXPECT_EQ(r.log[r.best_epoch - 1].val_macro_auc, best);
    const auto val_t = targets_for(val.cohort, val.emb.ids(), kLabels);
    EXPECT_EQ(*macro_auc(probe_logits(r.model, val.emb.matrix()), val_t), best);
    EXPECT_LE(r.log.size(), r.best_epoch + spec.patience);
}

TEST(Train, DeterministicAndInputsUnchanged) {
    const auto train = separable(200, 5, 1.0, 14, "t");
    const auto val = separable(80, 5, 1.0, 15, "v");
    const Matrix before = train.emb.matrix();
    auto spec = ProbeSpec::preset("linear");
    spec.max_epochs = 5;
    spec.batch_size = 16;
    spec.seed = 99;
    const auto a = train_probe(spec, train.emb, train.cohort, val.emb, val.cohort, kLabels);
    const auto b = train_probe(spec, train.emb, train.cohort, val.emb, val.cohort, kLabels);
    EXPECT_EQ(a.model.layers[0].weight, b.model.layers[0].weight);
    EXPECT_EQ(a.model.layers[0].bias, b.model.layers[0].bias);
    EXPECT_EQ(train.emb.matrix(), before);
}

TEST(Train, FullyMaskedSampleChangesNothing) {
    const auto train = separable(120, 5, 1.0, 16, "t");
    const auto val = separable(60, 5, 1.0, 17, "v");
    // same data plus one sample whose labels are all missing, in the middle
    std::vector<std::string> ids = train.emb.ids();
    Matrix x(train.emb.rows() + 1, 5);
    x.topRows(60) = train.emb.matrix().topRows(60);
    x.row(60) = Vector::Constant(5, 7.0).transpose();
    x.bottomRows(60) = train.emb.matrix().bottomRows(60);
    ids.insert(ids.begin() + 60, "ghost");
    std::vector<Sample> samples = train.cohort.samples();
    samples.push_back(testutil::sample("ghost", "pg", Sex::Male, "White", 50, {LabelValue::Missing, LabelValue::Missing}));
    const EmbeddingSet emb2(ids, x);
    const Cohort cohort2({"a", "b"}, samples);

    auto spec = ProbeSpec::preset("mlp3");
    spec.hidden_width = 8;
    spec.max_epochs = 4;
    spec.batch_size = 16;
    const auto a = train_probe(spec, train.emb, train.cohort, val.emb, val.cohort, kLabels);
    const auto b = train_probe(spec, emb2, cohort2, val.emb, val.cohort, kLabels);
    for (std::size_t l = 0; l < a.model.layers.size(); ++l) {
        EXPECT_EQ(a.model.layers[l].weight, b.model.layers[l].weight);
        EXPECT_EQ(a.model.layers[l].bias, b.model.layers[l].bias);
    }
    const auto t1 = targets_for(train.cohort, train.emb.ids(), kLabels);
    const auto t2 = targets_for(cohort2, ids, kLabels);
    const auto m = init_probe(spec, 5, kLabels);
    const auto g1 = probe_gradient(m, train.emb.matrix(), t1);
    const auto g2 = probe_gradient(m, x, t2);
    for (std::size_t l = 0; l < g1.size(); ++l) EXPECT_EQ(g1[l].weight, g2[l].weight);
}

TEST(Train, Errors) {
    const auto train = separable(50, 4, 1.0, 18, "t");
    const auto val = separable(20, 4, 1.0, 19, "v");
    const auto spec = ProbeSpec::preset("linear");

    std::vector<Sample> missing = train.cohort.samples();
    for (auto& s : missing) s.labels = {LabelValue::Missing, LabelValue::Missing};
    try {
        (void)train_probe(spec, train.emb, Cohort({"a", "b"}, missing), val.emb, val.cohort, kLabels);
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("no supervised signal"), std::string::npos);
    }

    std::vector<Sample> single = train.cohort.samples();
    for (auto& s : single) s.labels[0] = LabelValue::Negative;
    EXPECT_THROW((void)train_probe(spec, train.emb, Cohort({"a", "b"}, single), val.emb, val.cohort, kLabels),
                 Error);

    const auto wide = separable(20, 5, 1.0, 20, "v");
    EXPECT_THROW((void)train_probe(spec, train.emb, train.cohort, wide.emb, wide.cohort, kLabels), Error);

    auto blowup = spec;
    blowup.learning_rate = std::numeric_limits<double>::infinity();
    EXPECT_THROW((void)train_probe(blowup, train.emb, train.cohort, val.emb, val.cohort, kLabels), Error);
}

TEST(ProbeJson, RoundTrip) {
    auto spec = ProbeSpec::preset("mlp3");
    spec.hidden_width = 4;
    const auto m = init_probe(spec, 3, kLabels);
    const auto j = to_json(m, &spec);
    const auto back = probe_from_json(nlohmann::json::parse(j.dump()));
    ASSERT_EQ(back.layers.size(), m.layers.size());
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        EXPECT_EQ(back.layers[l].weight, m.layers[l].weight);
        EXPECT_EQ(back.layers[l].bias, m.layers[l].bias);
    }
    EXPECT_EQ(back.labels, m.labels);
    EXPECT_EQ(j["spec"]["hidden_layers"], 3);
}
