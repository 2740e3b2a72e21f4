// Command-line front end: inspect, train-probe, evaluate, synth, summarize.

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "biasaudit/biasaudit.hpp"

namespace {

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string format = "both";
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
    auto* opt = cmd->add_option("-c,--config", c.config, "audit configuration file");
    if (config_required) opt->required()->check(CLI::ExistingFile);
    else opt->check(CLI::ExistingFile);
    cmd->add_option("-o,--out", c.out, "output directory (overrides `out` in the config)");
    cmd->add_option("--seed", c.seed, "master seed (overrides `seed` in the config)");
    cmd->add_option("--format", c.format, "json, csv or both")->check(CLI::IsMember({"json", "csv", "both"}));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Representation bias audit for embedding-based classifiers"};
    app.set_version_flag("--version", std::string(biasaudit::kVersion));
    app.require_subcommand(1);

    Common common;
    auto* inspect = app.add_subcommand("inspect", "PCA / t-SNE projection and per-mode KS tests between groups");
    auto* train = app.add_subcommand("train-probe", "train linear and MLP probes on frozen embeddings");
    auto* evaluate = app.add_subcommand("evaluate", "subgroup AUC / TPR / FPR / Youden's J with bootstrap CIs");
    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort with injected group shifts");
    auto* summarize = app.add_subcommand("summarize", "demographic summary table of a cohort");
    for (auto* cmd : {inspect, train, evaluate, summarize}) add_common(cmd, common, true);
    std::optional<std::size_t> modes;
    inspect->add_option("--modes", modes, "number of PCA modes to test (overrides inspect.modes)")
        ->check(CLI::PositiveNumber);
    add_common(synth, common, false);

    CLI11_PARSE(app, argc, argv);

    try {
        biasaudit::ConfigDocument doc;
        if (!common.config.empty()) doc = biasaudit::ConfigDocument::load(common.config);
        biasaudit::AuditConfig config = biasaudit::make_audit_config(doc, common.seed);
        if (modes) {
            config.inspect.modes = *modes;
            config.echo["inspect"]["modes"] = *modes;
        }
        biasaudit::RunOptions opt;
        opt.out_dir = common.out.empty() ? config.out_dir : common.out;
        opt.format = biasaudit::parse_output_format(common.format);

        if (*inspect) biasaudit::cmd_inspect(config, opt);
        else if (*train) biasaudit::cmd_train(config, opt);
        else if (*evaluate) biasaudit::cmd_evaluate(config, opt);
        else if (*synth) biasaudit::cmd_synth(config, opt);
        else if (*summarize) biasaudit::cmd_summarize(config, opt);
    } catch (const biasaudit::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
