#pragma once

// Classification heads trained on frozen embeddings: a single linear layer or
// a ReLU MLP, multi-label sigmoid outputs, masked binary cross-entropy, Adam.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "biasaudit/cohort.hpp"
#include "biasaudit/error.hpp"
#include "biasaudit/metrics.hpp"
#include "biasaudit/random.hpp"

namespace biasaudit {

struct ProbeSpec {
    enum class Architecture { Linear, Mlp };

    std::string name = "linear";
    Architecture architecture = Architecture::Linear;
    std::size_t hidden_layers = 0;
    std::size_t hidden_width = 256;
    double learning_rate = 1e-4;
    std::size_t batch_size = 256;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    std::uint64_t seed = 0;

    /// "linear", "mlp3", "mlp5".
    static ProbeSpec preset(std::string_view name) {
        ProbeSpec s;
        s.name = std::string(name);
        if (name == "linear") return s;
        s.architecture = Architecture::Mlp;
        if (name == "mlp3") {
            s.hidden_layers = 3;
        } else if (name == "mlp5") {
            s.hidden_layers = 5;
        } else {
            fail("unknown probe preset '", name, "' (expected linear, mlp3 or mlp5)");
        }
        return s;
    }

    void validate() const {
        require(architecture == Architecture::Linear || (hidden_layers >= 1 && hidden_width >= 1),
                "probe spec '", name, "': an MLP needs hidden_layers >= 1 and hidden_width >= 1");
        require(learning_rate > 0.0 && std::isfinite(learning_rate), "probe spec '", name,
                "': learning rate must be positive");
        require(batch_size >= 1 && max_epochs >= 1 && patience >= 1, "probe spec '", name,
                "': batch size, epochs and patience must be positive");
    }
};

struct Layer {
    Matrix weight;  // out x in
    Vector bias;    // out
};

struct ProbeModel {
    std::string name;
    std::size_t input_dim = 0;
    std::vector<std::string> labels;
    std::vector<Layer> layers;
    std::string activation = "relu";  // between hidden layers; output is sigmoid

    [[nodiscard]] std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
        return n;
    }

    void validate() const {
        require(!layers.empty(), "probe model: no layers");
        require(!labels.empty(), "probe model: no labels");
        Eigen::Index in = static_cast<Eigen::Index>(input_dim);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            require(layers[i].weight.cols() == in, "probe model: layer ", i, " expects ", layers[i].weight.cols(),
                    " inputs, previous layer gives ", in);
            require(layers[i].bias.size() == layers[i].weight.rows(), "probe model: layer ", i, " bias length");
            require(layers[i].weight.allFinite() && layers[i].bias.allFinite(), "probe model: layer ", i,
                    " has non-finite parameters");
            in = layers[i].weight.rows();
        }
        require(in == static_cast<Eigen::Index>(labels.size()), "probe model: output width ", in, " != ",
                labels.size(), " labels");
    }
};

/// 0/1 targets with a mask (1 = observed, 0 = missing).
struct Targets {
    Matrix y;
    Matrix mask;
};

inline Targets targets_for(const Cohort& cohort, std::span<const std::string> ids,
                           std::span<const std::string> labels) {
    Targets t;
    t.y = Matrix::Zero(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(labels.size()));
    t.mask = Matrix::Zero(t.y.rows(), t.y.cols());
    std::vector<std::size_t> cols;
    for (const auto& l : labels) cols.push_back(cohort.label_index(l));
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto& s = cohort.at(ids[i]);
        for (std::size_t l = 0; l < cols.size(); ++l) {
            const auto v = s.labels[cols[l]];
            if (v == LabelValue::Missing) continue;
            t.y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) = v == LabelValue::Positive ? 1.0 : 0.0;
            t.mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) = 1.0;
        }
    }
    return t;
}

/// PyTorch-style uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
inline ProbeModel init_probe(const ProbeSpec& spec, std::size_t input_dim, std::vector<std::string> labels) {
    spec.validate();
    require(input_dim >= 1, "probe: input dimension must be >= 1");
    ProbeModel m;
    m.name = spec.name;
    m.input_dim = input_dim;
    m.labels = std::move(labels);
    std::vector<std::size_t> widths{input_dim};
    if (spec.architecture == ProbeSpec::Architecture::Mlp) {
        for (std::size_t i = 0; i < spec.hidden_layers; ++i) widths.push_back(spec.hidden_width);
    }
    widths.push_back(m.labels.size());
    Rng rng(mix_seed(spec.seed, 0));
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        const auto in = static_cast<Eigen::Index>(widths[i]);
        const auto out = static_cast<Eigen::Index>(widths[i + 1]);
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        Layer layer{Matrix(out, in), Vector(out)};
        for (Eigen::Index r = 0; r < out; ++r) {
            for (Eigen::Index c = 0; c < in; ++c) layer.weight(r, c) = bound * (2.0 * rng.uniform() - 1.0);
        }
        for (Eigen::Index r = 0; r < out; ++r) layer.bias(r) = bound * (2.0 * rng.uniform() - 1.0);
        m.layers.push_back(std::move(layer));
    }
    m.validate();
    return m;
}

namespace detail {

struct ForwardPass {
    std::vector<Matrix> pre;   // pre-activations per layer
    std::vector<Matrix> post;  // post[0] = input, post[i+1] = act(pre[i]) (hidden layers)
};

inline ForwardPass forward(const ProbeModel& m, const Matrix& x) {
    ForwardPass f;
    f.post.push_back(x);
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
        Matrix z = f.post.back() * m.layers[i].weight.transpose();
        z.rowwise() += m.layers[i].bias.transpose();
        f.pre.push_back(z);
        if (i + 1 < m.layers.size()) f.post.push_back(z.cwiseMax(0.0));
    }
    return f;
}

inline double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// BCE with logits: max(z, 0) - z y + log(1 + exp(-|z|))
inline double bce_logit(double z, double y) { return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))); }

// Rows with at least one observed label. Unobserved rows contribute nothing,
// and dropping them up front keeps every floating-point sum unchanged.
inline std::vector<Eigen::Index> supervised_rows(const Targets& t) {
    std::vector<Eigen::Index> rows;
    for (Eigen::Index i = 0; i < t.mask.rows(); ++i) {
        if (t.mask.row(i).sum() > 0.0) rows.push_back(i);
    }
    return rows;
}

inline Matrix take_rows(const Matrix& m, std::span<const Eigen::Index> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(rows[i]);
    return out;
}

}  // namespace detail

/// Logits, n x labels.
inline Matrix probe_logits(const ProbeModel& m, const Matrix& x) {
    require(static_cast<std::size_t>(x.cols()) == m.input_dim, "probe: dimension mismatch (input has ", x.cols(),
            " columns, model expects ", m.input_dim, ")");
    return detail::forward(m, x).pre.back();
}

/// Mean binary cross-entropy over observed (sample, label) entries.
inline double probe_loss(const ProbeModel& m, const Matrix& x, const Targets& t) {
    const auto rows = detail::supervised_rows(t);
    require(!rows.empty(), "probe: no supervised signal (every label is missing)");
    const Matrix xs = detail::take_rows(x, rows);
    const Matrix ys = detail::take_rows(t.y, rows);
    const Matrix ms = detail::take_rows(t.mask, rows);
    const Matrix z = probe_logits(m, xs);
    double sum = 0.0;
    double count = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        for (Eigen::Index l = 0; l < z.cols(); ++l) {
            if (ms(i, l) == 0.0) continue;
            sum += detail::bce_logit(z(i, l), ys(i, l));
            count += 1.0;
        }
    }
    return sum / count;
}

/// Analytic gradient of probe_loss, same shapes as the model's layers.
inline std::vector<Layer> probe_gradient(const ProbeModel& m, const Matrix& x, const Targets& t) {
    const auto rows = detail::supervised_rows(t);
    require(!rows.empty(), "probe: no supervised signal (every label is missing)");
    const Matrix xs = detail::take_rows(x, rows);
    const Matrix ys = detail::take_rows(t.y, rows);
    const Matrix ms = detail::take_rows(t.mask, rows);
    require(static_cast<std::size_t>(xs.cols()) == m.input_dim, "probe: dimension mismatch");
    const auto f = detail::forward(m, xs);

    const double count = ms.sum();
    Matrix dz = f.pre.back().unaryExpr([](double z) { return detail::sigmoid(z); });
    dz = (dz - ys).cwiseProduct(ms) / count;

    std::vector<Layer> grads(m.layers.size());
    for (std::size_t li = m.layers.size(); li-- > 0;) {
        grads[li].weight = dz.transpose() * f.post[li];
        grads[li].bias = dz.colwise().sum().transpose();
        if (li == 0) break;
        Matrix da = dz * m.layers[li].weight;
        dz = da.cwiseProduct(f.pre[li - 1].unaryExpr([](double z) { return z > 0.0 ? 1.0 : 0.0; }));
    }
    return grads;
}

/// Largest relative error between the analytic gradient and central finite
/// differences (step 1e-5) over every parameter. Relative error is
/// |a - f| / max(|a|, |f|, 1e-6).
inline double gradient_check(const ProbeModel& model, const Matrix& x, const Targets& t) {
    constexpr double step = 1e-5;
    const auto grads = probe_gradient(model, x, t);
    ProbeModel probe = model;
    double worst = 0.0;
    auto check = [&](double& param, double analytic) {
        const double saved = param;
        param = saved + step;
        const double up = probe_loss(probe, x, t);
        param = saved - step;
        const double down = probe_loss(probe, x, t);
        param = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        worst = std::max(worst, std::abs(analytic - numeric) / denom);
    };
    for (std::size_t li = 0; li < probe.layers.size(); ++li) {
        auto& layer = probe.layers[li];
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) check(layer.weight(r, c), grads[li].weight(r, c));
        }
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) check(layer.bias(r), grads[li].bias(r));
    }
    return worst;
}

/// Gradient check of a freshly initialised model for `spec` on a tiny batch.
inline double gradient_check(const ProbeSpec& spec, const Matrix& x, const Targets& t,
                             std::vector<std::string> labels) {
    require(x.rows() >= 1 && x.rows() <= 8, "gradient_check: batch must hold 1 to 8 samples");
    return gradient_check(init_probe(spec, static_cast<std::size_t>(x.cols()), std::move(labels)), x, t);
}

// ---------------------------------------------------------------------------
// Training

struct EpochLog {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_macro_auc = 0.0;
};

struct TrainedProbe {
    ProbeModel model;
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;
    double best_val_macro_auc = 0.0;
};

/// Mean AUC over labels with both classes observed; nullopt if none.
inline std::optional<double> macro_auc(const Matrix& logits, const Targets& t) {
    double sum = 0.0;
    std::size_t used = 0;
    std::vector<double> s;
    std::vector<std::uint8_t> y;
    for (Eigen::Index l = 0; l < logits.cols(); ++l) {
        s.clear();
        y.clear();
        for (Eigen::Index i = 0; i < logits.rows(); ++i) {
            if (t.mask(i, l) == 0.0) continue;
            s.push_back(logits(i, l));
            y.push_back(t.y(i, l) > 0.5 ? 1 : 0);
        }
        const auto pos = std::count(y.begin(), y.end(), 1);
        if (pos == 0 || pos == static_cast<std::ptrdiff_t>(y.size())) continue;
        sum += auc(s, y);
        ++used;
    }
    if (used == 0) return std::nullopt;
    return sum / static_cast<double>(used);
}

namespace detail {

struct AdamState {
    std::vector<Layer> m;
    std::vector<Layer> v;
    std::size_t step = 0;
};

inline void adam_update(ProbeModel& model, const std::vector<Layer>& grads, AdamState& st, double lr) {
    constexpr double beta1 = 0.9;
    constexpr double beta2 = 0.999;
    constexpr double eps = 1e-8;
    ++st.step;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(st.step));
    auto apply = [&](auto& param, const auto& g, auto& m, auto& v) {
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
        param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        apply(model.layers[i].weight, grads[i].weight, st.m[i].weight, st.v[i].weight);
        apply(model.layers[i].bias, grads[i].bias, st.m[i].bias, st.v[i].bias);
    }
}

}  // namespace detail

/// Mini-batch Adam on masked BCE. After each epoch the validation macro-AUC
/// is recorded; the best epoch's parameters are returned, and training stops
/// after `patience` epochs without improvement. Epoch e shuffles with
/// substream mix_seed(seed, e). Inputs are never modified.
inline TrainedProbe train_probe(const ProbeSpec& spec, const EmbeddingSet& train, const Cohort& train_cohort,
                                const EmbeddingSet& val, const Cohort& val_cohort,
                                const std::vector<std::string>& labels) {
    spec.validate();
    require(!labels.empty(), "train_probe: no labels");
    require(train.dim() == val.dim(), "train_probe: dimension mismatch (train d=", train.dim(), ", validation d=",
            val.dim(), ")");
    train_cohort.require_covers(train);
    val_cohort.require_covers(val);

    const Targets train_t = targets_for(train_cohort, train.ids(), labels);
    const Targets val_t = targets_for(val_cohort, val.ids(), labels);
    const auto rows = detail::supervised_rows(train_t);
    require(!rows.empty(), "train_probe: no supervised signal (every training label is missing)");
    for (std::size_t l = 0; l < labels.size(); ++l) {
        double pos = 0.0, obs = 0.0;
        for (Eigen::Index i = 0; i < train_t.y.rows(); ++i) {
            pos += train_t.y(i, static_cast<Eigen::Index>(l)) * train_t.mask(i, static_cast<Eigen::Index>(l));
            obs += train_t.mask(i, static_cast<Eigen::Index>(l));
        }
        require(pos > 0.0 && pos < obs, "train_probe: label '", labels[l],
                "' has a single class in the training data (", pos, " positives of ", obs, " observed)");
    }
    require(macro_auc(Matrix::Zero(val_t.y.rows(), val_t.y.cols()), val_t).has_value(),
            "train_probe: no label has both classes in the validation data");

    const Matrix x = detail::take_rows(train.matrix(), rows);
    const Matrix y = detail::take_rows(train_t.y, rows);
    const Matrix mask = detail::take_rows(train_t.mask, rows);
    const auto n = static_cast<std::size_t>(x.rows());

    ProbeModel model = init_probe(spec, train.dim(), labels);
    detail::AdamState adam;
    for (const auto& l : model.layers) {
        adam.m.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
        adam.v.push_back(adam.m.back());
    }

    TrainedProbe out;
    out.model = model;
    out.best_val_macro_auc = -1.0;
    std::size_t since_best = 0;
    std::vector<Eigen::Index> order(n);
    for (std::size_t epoch = 1; epoch <= spec.max_epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(mix_seed(spec.seed, epoch));
        rng.shuffle(order);
        double loss_sum = 0.0;
        double loss_weight = 0.0;
        for (std::size_t start = 0; start < n; start += spec.batch_size) {
            const std::size_t end = std::min(n, start + spec.batch_size);
            const std::span<const Eigen::Index> batch(order.data() + start, end - start);
            const Targets bt{detail::take_rows(y, batch), detail::take_rows(mask, batch)};
            const Matrix bx = detail::take_rows(x, batch);
            if (detail::supervised_rows(bt).empty()) continue;
            const double loss = probe_loss(model, bx, bt);
            require(std::isfinite(loss), "train_probe: non-finite loss at epoch ", epoch, ", batch starting at ",
                    start, " (learning rate ", spec.learning_rate, ")");
            const double w = bt.mask.sum();
            loss_sum += loss * w;
            loss_weight += w;
            detail::adam_update(model, probe_gradient(model, bx, bt), adam, spec.learning_rate);
        }
        const auto val_auc = macro_auc(probe_logits(model, val.matrix()), val_t);
        out.log.push_back({epoch, loss_sum / loss_weight, *val_auc});
        if (*val_auc > out.best_val_macro_auc) {
            out.best_val_macro_auc = *val_auc;
            out.best_epoch = epoch;
            out.model = model;
            since_best = 0;
        } else if (++since_best >= spec.patience) {
            break;
        }
    }
    return out;
}

/// Sigmoid probabilities, one column per model label, rows in input order.
inline ScoreTable predict_probe(const ProbeModel& m, const EmbeddingSet& x) {
    const Matrix z = probe_logits(m, x.matrix());
    return {x.ids(), m.labels, z.unaryExpr([](double v) { return detail::sigmoid(v); })};
}

// ---------------------------------------------------------------------------
// Serialization

inline nlohmann::json to_json(const ProbeModel& m, const ProbeSpec* spec = nullptr) {
    nlohmann::json j;
    j["name"] = m.name;
    j["input_dim"] = m.input_dim;
    j["labels"] = m.labels;
    j["activation"] = m.activation;
    j["output_activation"] = "sigmoid";
    auto layers = nlohmann::json::array();
    for (const auto& l : m.layers) {
        nlohmann::json o;
        o["rows"] = l.weight.rows();
        o["cols"] = l.weight.cols();
        std::vector<double> w;
        w.reserve(static_cast<std::size_t>(l.weight.size()));
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
        }
        o["weight"] = std::move(w);
        o["bias"] = std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size());
        layers.push_back(std::move(o));
    }
    j["layers"] = std::move(layers);
    if (spec) {
        j["spec"] = {{"architecture", spec->architecture == ProbeSpec::Architecture::Linear ? "linear" : "mlp"},
                     {"hidden_layers", spec->hidden_layers},
                     {"hidden_width", spec->hidden_width},
                     {"learning_rate", spec->learning_rate},
                     {"batch_size", spec->batch_size},
                     {"max_epochs", spec->max_epochs},
                     {"patience", spec->patience},
                     {"seed", spec->seed},
                     {"loss", "masked multi-label binary cross-entropy"},
                     {"optimizer", "adam"}};
    }
    return j;
}

inline ProbeModel probe_from_json(const nlohmann::json& j) {
    ProbeModel m;
    m.name = j.at("name").get<std::string>();
    m.input_dim = j.at("input_dim").get<std::size_t>();
    m.labels = j.at("labels").get<std::vector<std::string>>();
    m.activation = j.value("activation", "relu");
    require(m.activation == "relu", "probe model: unsupported activation '", m.activation, "'");
    for (const auto& o : j.at("layers")) {
        const auto rows = o.at("rows").get<Eigen::Index>();
        const auto cols = o.at("cols").get<Eigen::Index>();
        const auto w = o.at("weight").get<std::vector<double>>();
        const auto b = o.at("bias").get<std::vector<double>>();
        require(static_cast<Eigen::Index>(w.size()) == rows * cols, "probe model: weight array has ", w.size(),
                " values for a ", rows, "x", cols, " layer");
        require(static_cast<Eigen::Index>(b.size()) == rows, "probe model: bias length mismatch");
        Layer l{Matrix(rows, cols), Vector(rows)};
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (Eigen::Index c = 0; c < cols; ++c) l.weight(r, c) = w[static_cast<std::size_t>(r * cols + c)];
            l.bias(r) = b[static_cast<std::size_t>(r)];
        }
        m.layers.push_back(std::move(l));
    }
    m.validate();
    return m;
}

inline std::string training_log_csv(const TrainedProbe& t) {
    std::string out = "epoch,train_loss,val_macro_auc\n";
    for (const auto& e : t.log) {
        out += std::to_string(e.epoch) + "," + csv::format_double(e.train_loss) + "," +
               csv::format_double(e.val_macro_auc) + "\n";
    }
    return out;
}

}  // namespace biasaudit
