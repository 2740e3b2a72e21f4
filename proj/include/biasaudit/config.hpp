#pragma once

// Audit configuration: a YAML document of nested mappings whose leaves are
// scalars or flat sequences of scalars, mapped onto AuditConfig with every
// default filled in.

#include <nlohmann/json.hpp>
#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "biasaudit/cohort.hpp"
#include "biasaudit/csv.hpp"
#include "biasaudit/error.hpp"
#include "biasaudit/metrics.hpp"
#include "biasaudit/probes.hpp"
#include "biasaudit/sampling.hpp"
#include "biasaudit/stats.hpp"
#include "biasaudit/synth.hpp"

namespace biasaudit {

struct ConfigValue {
    enum class Kind { String, Number, Bool, Array } kind = Kind::String;
    std::string text;  // string payload, or the literal for numbers
    double number = 0.0;
    bool boolean = false;
    std::vector<ConfigValue> items;
    std::size_t line = 0;
};

/// Parsed document; keys are "section.key" ("key" at top level).
class ConfigDocument {
public:
    static ConfigDocument parse(std::string_view text, const std::string& origin = "<config>") {
        ConfigDocument doc;
        doc.origin_ = origin;
        YAML::Node root;
        try {
            root = YAML::Load(std::string(text));
        } catch (const YAML::Exception& e) {
            fail(origin, ":", e.mark.line + 1, ": ", e.msg);
        }
        if (!root.IsNull()) {
            require(root.IsMap(), origin, ": top level must be a mapping");
            doc.flatten(root, "");
        }
        return doc;
    }

    static ConfigDocument load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        require(in.good(), "cannot open config '", path, "'");
        std::stringstream ss;
        ss << in.rdbuf();
        auto doc = parse(ss.str(), path);
        doc.base_dir_ = std::filesystem::path(path).parent_path().string();
        return doc;
    }

    [[nodiscard]] bool has(const std::string& key) const { return values_.count(key) != 0; }

    [[nodiscard]] const ConfigValue* find(const std::string& key) const {
        const auto it = values_.find(key);
        if (it == values_.end()) return nullptr;
        used_.insert(key);
        return &it->second;
    }

    [[nodiscard]] std::string get_string(const std::string& key, const std::string& fallback) const {
        const auto* v = find(key);
        if (!v) return fallback;
        require(v->kind == ConfigValue::Kind::String, where(*v), "'", key, "' must be a string");
        return v->text;
    }

    [[nodiscard]] double get_number(const std::string& key, double fallback) const {
        const auto* v = find(key);
        if (!v) return fallback;
        require(v->kind == ConfigValue::Kind::Number, where(*v), "'", key, "' must be a number");
        return v->number;
    }

    [[nodiscard]] std::size_t get_count(const std::string& key, std::size_t fallback) const {
        const double d = get_number(key, static_cast<double>(fallback));
        require(d >= 0.0 && d == std::floor(d) && d < 9.0e15, "config: '", key, "' must be a non-negative integer");
        return static_cast<std::size_t>(d);
    }

    [[nodiscard]] std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
        const auto* v = find(key);
        if (!v) return fallback;
        require(v->kind == ConfigValue::Kind::Number, where(*v), "'", key, "' must be an integer");
        std::uint64_t out = 0;
        const auto [ptr, ec] = std::from_chars(v->text.data(), v->text.data() + v->text.size(), out);
        require(ec == std::errc() && ptr == v->text.data() + v->text.size(), where(*v), "'", key,
                "' must be an unsigned 64-bit integer");
        return out;
    }

    [[nodiscard]] bool get_bool(const std::string& key, bool fallback) const {
        const auto* v = find(key);
        if (!v) return fallback;
        require(v->kind == ConfigValue::Kind::Bool, where(*v), "'", key, "' must be true or false");
        return v->boolean;
    }

    [[nodiscard]] std::vector<std::string> get_strings(const std::string& key,
                                                       const std::vector<std::string>& fallback) const {
        const auto* v = find(key);
        if (!v) return fallback;
        require(v->kind == ConfigValue::Kind::Array, where(*v), "'", key, "' must be an array of strings");
        std::vector<std::string> out;
        for (const auto& item : v->items) {
            require(item.kind == ConfigValue::Kind::String, where(*v), "'", key, "' must be an array of strings");
            out.push_back(item.text);
        }
        return out;
    }

    /// Resolves a path relative to the config file's directory.
    [[nodiscard]] std::string get_path(const std::string& key, const std::string& fallback) const {
        const std::string p = get_string(key, fallback);
        return resolve(p);
    }

    [[nodiscard]] std::string resolve(const std::string& p) const {
        if (p.empty() || base_dir_.empty() || std::filesystem::path(p).is_absolute()) return p;
        return (std::filesystem::path(base_dir_) / p).lexically_normal().string();
    }

    /// Keys present in the document but never read (typos, unsupported keys).
    [[nodiscard]] std::vector<std::string> unused_keys() const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_) {
            if (!used_.count(k)) out.push_back(k);
        }
        return out;
    }

    [[nodiscard]] std::vector<std::string> keys_with_prefix(const std::string& prefix) const {
        std::vector<std::string> out;
        for (const auto& [k, v] : values_) {
            if (k.rfind(prefix, 0) == 0) out.push_back(k);
        }
        return out;
    }

private:
    static std::size_t line_of(const YAML::Node& n) { return static_cast<std::size_t>(n.Mark().line + 1); }

    // Quoted YAML scalars are strings; plain ones are booleans or numbers
    // when they read as such.
    ConfigValue scalar(const YAML::Node& n) const {
        ConfigValue v;
        v.line = line_of(n);
        v.text = n.Scalar();
        if (n.Tag() == "!") return v;
        if (v.text == "true" || v.text == "false") {
            v.kind = ConfigValue::Kind::Bool;
            v.boolean = v.text == "true";
            return v;
        }
        if (const auto num = csv::parse_double(v.text); num && std::isfinite(*num)) {
            v.kind = ConfigValue::Kind::Number;
            v.number = *num;
        }
        return v;
    }

    void flatten(const YAML::Node& map, const std::string& prefix) {
        for (const auto& kv : map) {
            require(kv.first.IsScalar(), origin_, ":", line_of(kv.first), ": keys must be scalars");
            const std::string key = prefix + kv.first.Scalar();
            const YAML::Node& node = kv.second;
            if (node.IsMap()) {
                flatten(node, key + ".");
                continue;
            }
            ConfigValue v;
            if (node.IsSequence()) {
                v.kind = ConfigValue::Kind::Array;
                v.line = line_of(node);
                for (const auto& item : node) {
                    require(item.IsScalar(), origin_, ":", line_of(item), ": '", key,
                            "' must be a flat list of scalars");
                    v.items.push_back(scalar(item));
                }
            } else if (node.IsScalar()) {
                v = scalar(node);
            } else {
                fail(origin_, ":", line_of(kv.first), ": '", key, "' has no value");
            }
            require(values_.emplace(key, std::move(v)).second, origin_, ":", line_of(kv.first), ": duplicate key '",
                    key, "'");
        }
    }

    [[nodiscard]] std::string where(const ConfigValue& v) const {
        return origin_ + ":" + std::to_string(v.line) + ": ";
    }

    std::map<std::string, ConfigValue> values_;
    mutable std::set<std::string> used_;
    std::string origin_;
    std::string base_dir_;
};

enum class OutputFormat { Both, Json, Csv };

inline OutputFormat parse_output_format(std::string_view s) {
    if (s == "json") return OutputFormat::Json;
    if (s == "csv") return OutputFormat::Csv;
    if (s == "both") return OutputFormat::Both;
    fail("unknown output format '", s, "' (expected json or csv)");
}

struct DataConfig {
    std::string embeddings;
    EmbeddingFormat embeddings_format = EmbeddingFormat::Binary;
    std::string ids;  // binary sidecar; empty = <embeddings>.ids
    std::string cohort;
};

struct InspectConfig {
    std::string split = "test";  // train / validation / test / all
    std::string subsample_attribute = "race";  // empty = no subsampling
    std::size_t per_group = 1000;
    bool one_scan_per_patient = false;
    std::size_t modes = 4;
    double variance_target = 0.99;
    bool tsne = false;
    double perplexity = 30.0;
    std::size_t tsne_iterations = 1000;
    std::vector<std::string> pairs{"sex=Male|sex=Female", "race=White|race=Asian", "race=Asian|race=Black",
                                   "race=Black|race=White"};
    TestFamily family = TestFamily::Grid;
    std::size_t marginal_bins = 0;  // 0 = automatic
};

struct TrainConfig {
    std::vector<std::string> presets{"linear", "mlp3", "mlp5"};
    std::vector<std::string> labels;  // empty = every cohort label
    std::size_t hidden_width = 256;
    double learning_rate = 1e-4;
    std::size_t batch_size = 256;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
};

struct EvaluateConfig {
    std::string split = "test";
    std::vector<std::string> labels;  // empty = every cohort label
    std::vector<std::string> groups{"race=White", "race=Asian", "race=Black", "sex=Female", "sex=Male"};
    double target_fpr = 0.2;
    std::vector<std::string> probes;  // model JSON paths, optionally "name=path"
    std::vector<std::string> scores;  // "name=path" score-table CSVs
    CalibrationSet calibrate_on = CalibrationSet::Resampled;
    bool resample = true;
    std::size_t replicates = 2000;
    bool cluster_by_patient = false;
};

struct SynthScoresConfig {
    std::string name;
    std::string label;
    double separation = 2.0;
    std::vector<std::pair<GroupSelector, double>> overrides;
    std::string split = "all";
};

struct AuditConfig {
    std::uint64_t seed = 0;
    std::string out_dir = "biasaudit_out";
    DataConfig data;
    InspectConfig inspect;
    ResamplePlan resample;  // seed derived from the master seed
    TrainConfig train;
    EvaluateConfig evaluate;
    SynthSpec synth;
    EmbeddingFormat synth_format = EmbeddingFormat::Binary;
    std::vector<SynthScoresConfig> synth_scores;
    std::vector<Attribute> summarize_group_by{Attribute::Race, Attribute::Sex};
    nlohmann::json echo;  // effective configuration
};

namespace detail {

inline std::pair<std::string, std::string> split_name_path(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) return {{}, s};
    return {s.substr(0, eq), s.substr(eq + 1)};
}

inline std::map<std::string, double> parse_race_map(const std::vector<std::string>& items, const std::string& key) {
    std::map<std::string, double> out;
    for (const auto& item : items) {
        const auto eq = item.rfind('=');
        require(eq != std::string::npos, "config: '", key, "' entries must look like Race=value");
        const auto v = csv::parse_double(item.substr(eq + 1));
        require(v.has_value(), "config: '", key, "': cannot parse number in '", item, "'");
        out[item.substr(0, eq)] = *v;
    }
    return out;
}

inline Attribute parse_summary_attribute(const std::string& s) {
    if (s == "race") return Attribute::Race;
    if (s == "sex") return Attribute::Sex;
    fail("config: summarize.group_by entries must be race or sex, got '", s, "'");
}

inline std::string_view format_name(EmbeddingFormat f) { return f == EmbeddingFormat::Binary ? "binary" : "csv"; }

}  // namespace detail

/// Builds the effective configuration. Unknown keys are errors. Stage seeds
/// are derived from the master seed after any override.
inline AuditConfig make_audit_config(const ConfigDocument& doc,
                                     std::optional<std::uint64_t> seed_override = std::nullopt) {
    AuditConfig c;
    c.seed = doc.get_u64("seed", 0);
    if (seed_override) c.seed = *seed_override;
    c.out_dir = doc.get_path("out", c.out_dir);

    c.data.embeddings = doc.get_path("data.embeddings", "");
    c.data.embeddings_format = parse_embedding_format(doc.get_string("data.embeddings_format", "binary"));
    c.data.ids = doc.get_path("data.ids", "");
    c.data.cohort = doc.get_path("data.cohort", "");

    auto& in = c.inspect;
    in.split = doc.get_string("inspect.split", in.split);
    in.subsample_attribute = doc.get_string("inspect.subsample_attribute", in.subsample_attribute);
    in.per_group = doc.get_count("inspect.per_group", in.per_group);
    in.one_scan_per_patient = doc.get_bool("inspect.one_scan_per_patient", in.one_scan_per_patient);
    in.modes = doc.get_count("inspect.modes", in.modes);
    in.variance_target = doc.get_number("inspect.variance_target", in.variance_target);
    in.tsne = doc.get_bool("inspect.tsne", in.tsne);
    in.perplexity = doc.get_number("inspect.perplexity", in.perplexity);
    in.tsne_iterations = doc.get_count("inspect.tsne_iterations", in.tsne_iterations);
    in.pairs = doc.get_strings("inspect.pairs", in.pairs);
    in.family = parse_test_family(doc.get_string("inspect.family", "grid"));
    in.marginal_bins = doc.get_count("inspect.marginal_bins", in.marginal_bins);
    for (const auto& p : in.pairs) (void)parse_group_pair(p);
    require(in.split == "all" || parse_split(in.split).has_value(), "config: inspect.split must be train, validation, test or all");

    auto& rp = c.resample;
    std::vector<std::string> attrs;
    for (const auto& a : rp.attributes) attrs.push_back(a.to_string());
    attrs = doc.get_strings("resample.attributes", attrs);
    rp.attributes.clear();
    for (const auto& a : attrs) rp.attributes.push_back(AttributeRef::parse(a));
    rp.age_bin_width = doc.get_number("resample.age_bin_width", rp.age_bin_width);
    rp.target = doc.get_count("resample.target", rp.target);
    rp.skip_empty = doc.get_bool("resample.skip_empty", rp.skip_empty);
    rp.seed = stage_seed(c.seed, Stage::Resample);
    rp.validate();

    auto& tr = c.train;
    tr.presets = doc.get_strings("probe.presets", tr.presets);
    tr.labels = doc.get_strings("probe.labels", tr.labels);
    tr.hidden_width = doc.get_count("probe.hidden_width", tr.hidden_width);
    tr.learning_rate = doc.get_number("probe.learning_rate", tr.learning_rate);
    tr.batch_size = doc.get_count("probe.batch_size", tr.batch_size);
    tr.max_epochs = doc.get_count("probe.max_epochs", tr.max_epochs);
    tr.patience = doc.get_count("probe.patience", tr.patience);
    for (const auto& p : tr.presets) (void)ProbeSpec::preset(p);

    auto& ev = c.evaluate;
    ev.split = doc.get_string("evaluate.split", ev.split);
    ev.labels = doc.get_strings("evaluate.labels", ev.labels);
    ev.groups = doc.get_strings("evaluate.groups", ev.groups);
    ev.target_fpr = doc.get_number("evaluate.target_fpr", ev.target_fpr);
    ev.probes = doc.get_strings("evaluate.probes", ev.probes);
    for (auto& p : ev.probes) {
        auto [name, path] = detail::split_name_path(p);
        p = name.empty() ? doc.resolve(path) : name + "=" + doc.resolve(path);
    }
    ev.scores = doc.get_strings("evaluate.scores", ev.scores);
    for (auto& s : ev.scores) {
        auto [name, path] = detail::split_name_path(s);
        require(!name.empty(), "config: evaluate.scores entries must look like name=path");
        s = name + "=" + doc.resolve(path);
    }
    const auto cal = doc.get_string("evaluate.calibrate_on", "resampled");
    require(cal == "resampled" || cal == "raw", "config: evaluate.calibrate_on must be resampled or raw");
    ev.calibrate_on = cal == "raw" ? CalibrationSet::Raw : CalibrationSet::Resampled;
    ev.resample = doc.get_bool("evaluate.resample", ev.resample);
    ev.replicates = doc.get_count("bootstrap.replicates", ev.replicates);
    const auto unit = doc.get_string("bootstrap.unit", "scan");
    require(unit == "scan" || unit == "patient", "config: bootstrap.unit must be scan or patient");
    ev.cluster_by_patient = unit == "patient";
    require(ev.target_fpr >= 0.0 && ev.target_fpr <= 1.0, "config: evaluate.target_fpr outside [0, 1]");
    for (const auto& g : ev.groups) (void)GroupSelector::parse(g);
    require(ev.split == "all" || parse_split(ev.split).has_value(), "config: evaluate.split must be train, validation, test or all");

    auto& sy = c.synth;
    sy.races = doc.get_strings("synth.races", sy.races);
    sy.n_per_group = doc.get_count("synth.n_per_group", sy.n_per_group);
    sy.female_fraction = doc.get_number("synth.female_fraction", sy.female_fraction);
    sy.dim = doc.get_count("synth.dim", sy.dim);
    sy.noise_sd = doc.get_number("synth.noise_sd", sy.noise_sd);
    sy.sex_shift.axis = doc.get_count("synth.sex_axis", sy.sex_shift.axis);
    sy.sex_shift.magnitude = doc.get_number("synth.sex_shift", sy.sex_shift.magnitude);
    sy.race_axis = doc.get_count("synth.race_axis", sy.race_axis);
    sy.race_shift = detail::parse_race_map(doc.get_strings("synth.race_shift", {}), "synth.race_shift");
    sy.scans_per_patient = doc.get_count("synth.scans_per_patient", sy.scans_per_patient);
    sy.train_fraction = doc.get_number("synth.train_fraction", sy.train_fraction);
    sy.validation_fraction = doc.get_number("synth.validation_fraction", sy.validation_fraction);
    sy.age_mean = doc.get_number("synth.age_mean", sy.age_mean);
    sy.age_sd = doc.get_number("synth.age_sd", sy.age_sd);
    sy.seed = stage_seed(c.seed, Stage::Synth);
    c.synth_format = parse_embedding_format(doc.get_string("synth.format", "binary"));
    const auto synth_labels = doc.get_strings("synth.labels", {});
    if (!synth_labels.empty()) {
        sy.labels.clear();
        std::size_t axis = 3;
        for (const auto& name : synth_labels) {
            const std::string p = "synth.label." + name + ".";
            SynthLabel l;
            l.name = name;
            l.axis = doc.get_count(p + "axis", axis++);
            l.magnitude = doc.get_number(p + "magnitude", l.magnitude);
            l.prevalence = doc.get_number(p + "prevalence", l.prevalence);
            l.missing_rate = doc.get_number(p + "missing_rate", l.missing_rate);
            l.prevalence_by_race = detail::parse_race_map(doc.get_strings(p + "prevalence_by_race", {}),
                                                          p + "prevalence_by_race");
            l.magnitude_by_race = detail::parse_race_map(doc.get_strings(p + "magnitude_by_race", {}),
                                                         p + "magnitude_by_race");
            sy.labels.push_back(std::move(l));
        }
    }
    for (const auto& name : doc.get_strings("synth.score_models", {})) {
        const std::string p = "synth.scores." + name + ".";
        SynthScoresConfig s;
        s.name = name;
        s.label = doc.get_string(p + "label", sy.labels.front().name);
        s.separation = doc.get_number(p + "separation", s.separation);
        s.split = doc.get_string(p + "split", s.split);
        for (const auto& o : doc.get_strings(p + "overrides", {})) {
            // "race=Black:1.2"
            const auto colon = o.rfind(':');
            require(colon != std::string::npos, "config: ", p, "overrides entries must look like selector:separation");
            const auto v = csv::parse_double(o.substr(colon + 1));
            require(v.has_value(), "config: ", p, "overrides: cannot parse '", o, "'");
            s.overrides.emplace_back(GroupSelector::parse(o.substr(0, colon)), *v);
        }
        c.synth_scores.push_back(std::move(s));
    }

    std::vector<std::string> gb{"race", "sex"};
    gb = doc.get_strings("summarize.group_by", gb);
    c.summarize_group_by.clear();
    for (const auto& g : gb) c.summarize_group_by.push_back(detail::parse_summary_attribute(g));

    const auto unused = doc.unused_keys();
    if (!unused.empty()) {
        std::string list;
        for (const auto& k : unused) list += (list.empty() ? "" : ", ") + k;
        fail("config: unknown keys: ", list);
    }

    // Effective configuration echo (all defaults resolved).
    auto& e = c.echo;
    e["seed"] = c.seed;
    e["data"] = {{"embeddings", c.data.embeddings},
                 {"embeddings_format", detail::format_name(c.data.embeddings_format)},
                 {"ids", c.data.ids},
                 {"cohort", c.data.cohort}};
    e["inspect"] = {{"split", in.split},
                    {"subsample_attribute", in.subsample_attribute},
                    {"per_group", in.per_group},
                    {"one_scan_per_patient", in.one_scan_per_patient},
                    {"modes", in.modes},
                    {"variance_target", in.variance_target},
                    {"tsne", in.tsne},
                    {"perplexity", in.perplexity},
                    {"tsne_iterations", in.tsne_iterations},
                    {"pairs", in.pairs},
                    {"family", in.family == TestFamily::Grid ? "grid" : "per_pair"},
                    {"marginal_bins", in.marginal_bins}};
    e["resample"] = to_json(rp);
    e["probe"] = {{"presets", tr.presets},         {"labels", tr.labels},
                  {"hidden_width", tr.hidden_width}, {"learning_rate", tr.learning_rate},
                  {"batch_size", tr.batch_size},     {"max_epochs", tr.max_epochs},
                  {"patience", tr.patience}};
    e["evaluate"] = {{"split", ev.split},
                     {"labels", ev.labels},
                     {"groups", ev.groups},
                     {"target_fpr", ev.target_fpr},
                     {"probes", ev.probes},
                     {"scores", ev.scores},
                     {"calibrate_on", cal},
                     {"resample", ev.resample}};
    e["bootstrap"] = {{"replicates", ev.replicates}, {"unit", unit}};
    auto labels_json = nlohmann::json::array();
    for (const auto& l : sy.labels) {
        labels_json.push_back({{"name", l.name},
                               {"axis", l.axis},
                               {"magnitude", l.magnitude},
                               {"prevalence", l.prevalence},
                               {"prevalence_by_race", l.prevalence_by_race},
                               {"magnitude_by_race", l.magnitude_by_race},
                               {"missing_rate", l.missing_rate}});
    }
    auto scores_json = nlohmann::json::array();
    for (const auto& s : c.synth_scores) {
        auto ov = nlohmann::json::array();
        for (const auto& [sel, v] : s.overrides) ov.push_back({{"group", sel.to_string()}, {"separation", v}});
        scores_json.push_back(
            {{"name", s.name}, {"label", s.label}, {"separation", s.separation}, {"split", s.split}, {"overrides", ov}});
    }
    e["synth"] = {{"races", sy.races},
                  {"n_per_group", sy.n_per_group},
                  {"female_fraction", sy.female_fraction},
                  {"dim", sy.dim},
                  {"noise_sd", sy.noise_sd},
                  {"sex_axis", sy.sex_shift.axis},
                  {"sex_shift", sy.sex_shift.magnitude},
                  {"race_axis", sy.race_axis},
                  {"race_shift", sy.race_shift},
                  {"scans_per_patient", sy.scans_per_patient},
                  {"train_fraction", sy.train_fraction},
                  {"validation_fraction", sy.validation_fraction},
                  {"age_mean", sy.age_mean},
                  {"age_sd", sy.age_sd},
                  {"format", detail::format_name(c.synth_format)},
                  {"labels", labels_json},
                  {"score_models", scores_json}};
    e["summarize"] = {{"group_by", gb}};
    return c;
}

}  // namespace biasaudit
