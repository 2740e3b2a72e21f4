#pragma once

// End-to-end commands behind the CLI. Every command writes into an output
// directory and embeds the version, the master seed, the derived stage
// seeds and the effective configuration in its JSON outputs and manifest.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "biasaudit/cohort.hpp"
#include "biasaudit/config.hpp"
#include "biasaudit/csv.hpp"
#include "biasaudit/error.hpp"
#include "biasaudit/metrics.hpp"
#include "biasaudit/probes.hpp"
#include "biasaudit/projection.hpp"
#include "biasaudit/random.hpp"
#include "biasaudit/sampling.hpp"
#include "biasaudit/stats.hpp"
#include "biasaudit/synth.hpp"
#include "biasaudit/tsne.hpp"

namespace biasaudit {

namespace fs = std::filesystem;

struct RunOptions {
    fs::path out_dir;
    OutputFormat format = OutputFormat::Both;
    std::ostream* log = &std::cerr;
};

namespace detail {

inline bool want_json(OutputFormat f) { return f != OutputFormat::Csv; }
inline bool want_csv(OutputFormat f) { return f != OutputFormat::Json; }

inline void write_json(const fs::path& path, const nlohmann::json& j) { csv::write_file(path.string(), j.dump(2) + "\n"); }

inline nlohmann::json provenance(const AuditConfig& c, std::string_view command) {
    nlohmann::json stages = {{"subsample", stage_seed(c.seed, Stage::Subsample)},
                             {"one_scan", stage_seed(c.seed, Stage::OneScan)},
                             {"tsne", stage_seed(c.seed, Stage::Tsne)},
                             {"resample", stage_seed(c.seed, Stage::Resample)},
                             {"bootstrap", stage_seed(c.seed, Stage::Bootstrap)},
                             {"probe", stage_seed(c.seed, Stage::Probe)},
                             {"synth", stage_seed(c.seed, Stage::Synth)}};
    return {{"tool", "biasaudit"},
            {"version", kVersion},
            {"command", command},
            {"seed", c.seed},
            {"stage_seeds", stages},
            {"config", c.echo}};
}

inline void write_manifest(const RunOptions& opt, const nlohmann::json& prov, const std::vector<std::string>& files) {
    nlohmann::json m = prov;
    m["outputs"] = files;
    write_json(opt.out_dir / "manifest.json", m);
}

inline EmbeddingSet load_configured_embeddings(const AuditConfig& c) {
    require(!c.data.embeddings.empty(), "config: data.embeddings is not set");
    return load_embeddings(c.data.embeddings, c.data.embeddings_format, c.data.ids);
}

inline Cohort load_configured_cohort(const AuditConfig& c, std::ostream& log) {
    require(!c.data.cohort.empty(), "config: data.cohort is not set");
    return load_cohort(c.data.cohort, [&log](const std::string& msg) { log << "warning: " << msg << "\n"; });
}

inline Cohort restrict_split(const Cohort& cohort, const std::string& split) {
    if (split == "all") return cohort;
    const auto s = parse_split(split);
    require(s.has_value(), "unknown split '", split, "'");
    return cohort.filter_split(*s);
}

inline std::vector<std::string> labels_or_all(const std::vector<std::string>& configured, const Cohort& cohort) {
    if (configured.empty()) return cohort.label_names();
    for (const auto& l : configured) require(cohort.has_label(l), "cohort has no label '", l, "'");
    return configured;
}

inline std::vector<std::string> cohort_ids(const Cohort& cohort) {
    std::vector<std::string> ids;
    ids.reserve(cohort.size());
    for (const auto& s : cohort.samples()) ids.push_back(s.sample_id);
    return ids;
}

}  // namespace detail

/// Dimensionality reduction plus per-mode KS tests between demographic groups.
inline void cmd_inspect(const AuditConfig& c, const RunOptions& opt) {
    auto& log = *opt.log;
    const auto& in = c.inspect;
    fs::create_directories(opt.out_dir);
    const auto prov = detail::provenance(c, "inspect");

    const EmbeddingSet emb = detail::load_configured_embeddings(c);
    const Cohort full = detail::load_configured_cohort(c, log);
    full.require_covers(emb);

    Cohort base = detail::restrict_split(full.select(emb.ids()), in.split);
    require(!base.empty(), "inspect: no samples in split '", in.split, "'");
    if (in.one_scan_per_patient) {
        const auto ids = one_scan_per_patient(base, stage_seed(c.seed, Stage::OneScan));
        base = base.select(ids);
    }
    if (!in.subsample_attribute.empty() && in.per_group > 0) {
        const auto ids = subsample_per_group(base, AttributeRef::parse(in.subsample_attribute), in.per_group,
                                             stage_seed(c.seed, Stage::Subsample));
        base = base.select(ids);
    }
    const auto ids = detail::cohort_ids(base);
    log << "inspect: " << ids.size() << " samples, d=" << emb.dim() << "\n";
    const Matrix x = emb.select(ids).matrix();

    ProjectionModel model = pca_fit(x, ModeSpec{in.modes});
    std::size_t tsne_modes = 0;
    if (in.tsne) {
        tsne_modes = modes_for_variance(model.full_variance_ratio, in.variance_target);
        if (tsne_modes > model.modes()) model = pca_fit(x, ModeSpec{tsne_modes});
        tsne_modes = std::min(tsne_modes, model.modes());
    }
    const Matrix coords = pca_transform(model, x);

    std::vector<GroupPair> pairs;
    for (const auto& p : in.pairs) pairs.push_back(parse_group_pair(p));
    StatReport report = run_feature_bias_test(coords, ids, base, pairs, in.modes, model.explained_variance_ratio,
                                              in.family);
    report.metadata["provenance"] = prov;
    report.metadata["samples"] = ids.size();

    std::vector<std::string> files;
    auto emit = [&](const std::string& name, const std::string& content) {
        csv::write_file((opt.out_dir / name).string(), content);
        files.push_back(name);
    };

    // Marginal densities of each tested group along each tested mode.
    std::vector<GroupSelector> groups;
    {
        std::set<std::string> seen;
        for (const auto& [a, b] : pairs) {
            for (const auto* g : {&a, &b}) {
                if (seen.insert(g->to_string()).second) groups.push_back(*g);
            }
        }
    }
    std::string marginals = "mode,group,bin_lo,bin_hi,density\n";
    for (std::size_t m = 0; m < in.modes; ++m) {
        for (const auto& g : groups) {
            std::vector<double> values;
            for (std::size_t i = 0; i < base.size(); ++i) {
                if (g.matches(base, base[i]).value_or(false)) {
                    values.push_back(coords(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(m)));
                }
            }
            if (values.empty()) continue;
            const Histogram h = marginal_density(values, in.marginal_bins);
            for (std::size_t b = 0; b < h.density.size(); ++b) {
                marginals += csv::join({std::to_string(m + 1), g.display_name(),
                                        csv::format_double(h.edges[b]), csv::format_double(h.edges[b + 1]),
                                        csv::format_double(h.density[b])}) +
                             "\n";
            }
        }
    }

    nlohmann::json tsne_json = nullptr;
    if (in.tsne) {
        TsneConfig tc;
        tc.perplexity = in.perplexity;
        tc.iterations = in.tsne_iterations;
        tc.seed = stage_seed(c.seed, Stage::Tsne);
        log << "inspect: t-SNE on " << tsne_modes << " PCA modes\n";
        const TsneResult t = tsne_embed(coords.leftCols(static_cast<Eigen::Index>(tsne_modes)), tc);
        tsne_json = {{"pca_modes", tsne_modes},
                     {"perplexity", tc.perplexity},
                     {"iterations", tc.iterations},
                     {"seed", tc.seed},
                     {"kl_initial", t.kl_initial},
                     {"kl_final", t.kl_final}};
        if (detail::want_csv(opt.format)) emit("tsne_coords.csv", coords_csv(ids, t.coords, "tsne_"));
    }

    if (detail::want_csv(opt.format)) {
        emit("pca_coords.csv", coords_csv(ids, coords.leftCols(static_cast<Eigen::Index>(in.modes))));
        emit("feature_bias_tests.csv", stat_report_csv(report));
        emit("feature_bias_tests_long.csv", stat_rows_csv(report));
        emit("marginals.csv", marginals);
    }
    if (detail::want_json(opt.format)) {
        nlohmann::json pj = to_json(model);
        pj["provenance"] = prov;
        pj["samples"] = ids;
        detail::write_json(opt.out_dir / "projection.json", pj);
        files.push_back("projection.json");
        nlohmann::json rj = to_json(report);
        rj["tsne"] = tsne_json;
        detail::write_json(opt.out_dir / "feature_bias_tests.json", rj);
        files.push_back("feature_bias_tests.json");
    }
    detail::write_manifest(opt, prov, files);

    for (std::size_t m = 1; m <= report.modes; ++m) {
        log << "mode " << m << ":";
        for (std::size_t k = 0; k < report.comparisons.size(); ++k) {
            const auto& r = report.at(m, k);
            log << "  " << r.comparison << " " << format_p_value(r.p_adjusted) << " " << to_string(r.tier);
        }
        log << "\n";
    }
}

/// Trains each configured probe preset on the train split, selecting the
/// epoch with the best validation macro-AUC.
inline void cmd_train(const AuditConfig& c, const RunOptions& opt) {
    auto& log = *opt.log;
    fs::create_directories(opt.out_dir);
    const auto prov = detail::provenance(c, "train-probe");

    const EmbeddingSet emb = detail::load_configured_embeddings(c);
    const Cohort full = detail::load_configured_cohort(c, log);
    full.require_covers(emb);
    const Cohort covered = full.select(emb.ids());
    const Cohort train_c = covered.filter_split(Split::Train);
    const Cohort val_c = covered.filter_split(Split::Validation);
    require(!train_c.empty(), "train-probe: no training samples");
    require(!val_c.empty(), "train-probe: no validation samples");
    const EmbeddingSet train = emb.select(detail::cohort_ids(train_c));
    const EmbeddingSet val = emb.select(detail::cohort_ids(val_c));
    const auto labels = detail::labels_or_all(c.train.labels, full);

    std::vector<std::string> files;
    const std::uint64_t probe_seed = stage_seed(c.seed, Stage::Probe);
    for (std::size_t p = 0; p < c.train.presets.size(); ++p) {
        ProbeSpec spec = ProbeSpec::preset(c.train.presets[p]);
        spec.hidden_width = c.train.hidden_width;
        spec.learning_rate = c.train.learning_rate;
        spec.batch_size = c.train.batch_size;
        spec.max_epochs = c.train.max_epochs;
        spec.patience = c.train.patience;
        spec.seed = mix_seed(probe_seed, p);
        log << "train-probe: " << spec.name << " (" << train.rows() << " train, " << val.rows() << " validation)\n";
        const TrainedProbe t = train_probe(spec, train, train_c, val, val_c, labels);
        log << "train-probe: " << spec.name << " best epoch " << t.best_epoch << ", validation macro-AUC "
            << csv::format_fixed(t.best_val_macro_auc, 4) << "\n";

        const std::string stem = "probe_" + spec.name;
        if (detail::want_json(opt.format)) {
            nlohmann::json j = to_json(t.model, &spec);
            j["best_epoch"] = t.best_epoch;
            j["best_val_macro_auc"] = t.best_val_macro_auc;
            j["provenance"] = prov;
            detail::write_json(opt.out_dir / (stem + ".json"), j);
            files.push_back(stem + ".json");
        }
        if (detail::want_csv(opt.format)) {
            csv::write_file((opt.out_dir / (stem + "_log.csv")).string(), training_log_csv(t));
            files.push_back(stem + "_log.csv");
        }
    }
    detail::write_manifest(opt, prov, files);
}

/// Subgroup performance of probes and external score tables at a shared
/// target-FPR threshold, with bootstrap intervals.
inline void cmd_evaluate(const AuditConfig& c, const RunOptions& opt) {
    auto& log = *opt.log;
    const auto& ev = c.evaluate;
    fs::create_directories(opt.out_dir);
    const auto prov = detail::provenance(c, "evaluate");
    require(!ev.probes.empty() || !ev.scores.empty(), "evaluate: no models (set evaluate.probes or evaluate.scores)");

    const Cohort full = detail::load_configured_cohort(c, log);
    Cohort eval = detail::restrict_split(full, ev.split);

    std::vector<NamedScores> models;
    if (!ev.probes.empty()) {
        const EmbeddingSet emb = detail::load_configured_embeddings(c);
        full.require_covers(emb);
        eval = eval.select(detail::cohort_ids(detail::restrict_split(full.select(emb.ids()), ev.split)));
        const EmbeddingSet x = emb.select(detail::cohort_ids(eval));
        for (const auto& entry : ev.probes) {
            auto [name, path] = detail::split_name_path(entry);
            std::ifstream in(path);
            require(in.good(), "evaluate: cannot open probe '", path, "'");
            nlohmann::json j;
            try {
                in >> j;
            } catch (const nlohmann::json::exception& e) {
                fail("evaluate: probe '", path, "' is not valid JSON: ", e.what());
            }
            const ProbeModel m = probe_from_json(j);
            models.push_back({name.empty() ? m.name : name, predict_probe(m, x)});
        }
    }
    for (const auto& entry : ev.scores) {
        auto [name, path] = detail::split_name_path(entry);
        models.push_back({name, load_score_table(path)});
    }
    require(!eval.empty(), "evaluate: no samples in split '", ev.split, "'");

    PerformanceConfig pc;
    pc.labels = detail::labels_or_all(ev.labels, full);
    for (const auto& g : ev.groups) pc.groups.push_back(GroupSelector::parse(g));
    pc.target_fpr = ev.target_fpr;
    if (ev.resample) pc.resample = c.resample;
    pc.bootstrap.replicates = ev.replicates;
    pc.bootstrap.seed = stage_seed(c.seed, Stage::Bootstrap);
    pc.bootstrap.cluster_by_patient = ev.cluster_by_patient;
    pc.calibrate_on = ev.calibrate_on;
    log << "evaluate: " << models.size() << " model(s), " << eval.size() << " samples, " << pc.labels.size()
        << " label(s)\n";

    AuditReport report = build_performance_report(models, eval, pc);
    report.provenance["run"] = prov;

    std::vector<std::string> files;
    if (detail::want_csv(opt.format)) {
        csv::write_file((opt.out_dir / "performance_tables.csv").string(), performance_table_csv(report));
        csv::write_file((opt.out_dir / "performance_plot.csv").string(), performance_plot_csv(report));
        files.insert(files.end(), {"performance_tables.csv", "performance_plot.csv"});
    }
    if (detail::want_json(opt.format)) {
        detail::write_json(opt.out_dir / "performance_report.json", to_json(report));
        files.push_back("performance_report.json");
    }
    detail::write_manifest(opt, prov, files);

    for (const auto& s : report.sections) {
        log << s.model << " / " << s.label << ": threshold " << csv::format_fixed(s.threshold, 4);
        for (std::size_t g = 0; g < s.records.size(); ++g) {
            log << "  " << s.records[g].group << " J=" << format_interval(s.records[g].youden_j);
        }
        log << "\n";
    }
}

/// Synthetic cohort with injected group shifts, plus optional score tables.
inline void cmd_synth(const AuditConfig& c, const RunOptions& opt) {
    auto& log = *opt.log;
    fs::create_directories(opt.out_dir);
    const auto prov = detail::provenance(c, "synth");

    const SynthData data = generate(c.synth);
    const std::string emb_name = c.synth_format == EmbeddingFormat::Binary ? "embeddings.bin" : "embeddings.csv";
    save_embeddings(data.embeddings, (opt.out_dir / emb_name).string(), c.synth_format);
    save_cohort(data.cohort, (opt.out_dir / "cohort.csv").string());
    std::vector<std::string> files{emb_name, "cohort.csv"};
    if (c.synth_format == EmbeddingFormat::Binary) files.push_back(emb_name + ".ids");

    for (std::size_t k = 0; k < c.synth_scores.size(); ++k) {
        const auto& s = c.synth_scores[k];
        const Cohort part = detail::restrict_split(data.cohort, s.split);
        const ScoreTable t = synthesize_scores(part, s.label, s.separation, s.overrides,
                                               mix_seed(c.synth.seed, 1000 + k));
        const std::string name = "scores_" + s.name + ".csv";
        csv::write_file((opt.out_dir / name).string(), score_table_csv(t));
        files.push_back(name);
    }
    detail::write_manifest(opt, prov, files);
    log << "synth: " << data.embeddings.rows() << " samples, d=" << data.embeddings.dim() << "\n";
}

/// Demographic summary of the cohort, split by the configured attributes.
inline void cmd_summarize(const AuditConfig& c, const RunOptions& opt) {
    auto& log = *opt.log;
    fs::create_directories(opt.out_dir);
    const auto prov = detail::provenance(c, "summarize");
    const Cohort cohort = detail::load_configured_cohort(c, log);
    const CohortSummary summary = summarize_cohort(cohort, c.summarize_group_by);

    std::vector<std::string> files;
    if (detail::want_csv(opt.format)) {
        csv::write_file((opt.out_dir / "cohort_summary.csv").string(), render_summary_csv(summary));
        files.push_back("cohort_summary.csv");
    }
    if (detail::want_json(opt.format)) {
        nlohmann::json j;
        j["labels"] = summary.label_names;
        j["sections"] = nlohmann::json::array();
        for (const auto& sec : summary.sections) {
            nlohmann::json cols = nlohmann::json::array();
            for (const auto& col : sec.columns) {
                cols.push_back({{"name", col.name},
                                {"patients", col.patients},
                                {"scans", col.scans},
                                {"scans_pct", col.scans_pct},
                                {"age_mean", col.age_mean},
                                {"age_sd", col.age_sd},
                                {"female", col.female ? nlohmann::json(*col.female) : nlohmann::json(nullptr)},
                                {"label_positive", col.label_positive}});
            }
            j["sections"].push_back({{"title", sec.title}, {"columns", cols}});
        }
        j["provenance"] = prov;
        detail::write_json(opt.out_dir / "cohort_summary.json", j);
        files.push_back("cohort_summary.json");
    }
    detail::write_manifest(opt, prov, files);
    log << "summarize: " << cohort.size() << " scans\n";
}

}  // namespace biasaudit
