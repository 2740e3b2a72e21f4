#include <gtest/gtest.h>

#include <fstream>

#include "biasaudit/config.hpp"
#include "test_util.hpp"

using namespace biasaudit;

TEST(ConfigParse, ScalarsSequencesComments) {
    const auto doc = ConfigDocument::parse(R"(
seed: 42   # master
out: "result dir"
inspect:
  modes: 6
  tsne: true
  pairs: ["sex=Male|sex=Female", "race=A|race=B"]
  empty: []
  hash: "a # b"
  quoted_number: "12"
  block:
    - x
    - y
)");
    EXPECT_EQ(doc.get_u64("seed", 0), 42u);
    EXPECT_EQ(doc.get_string("out", ""), "result dir");
    EXPECT_EQ(doc.get_count("inspect.modes", 0), 6u);
    EXPECT_TRUE(doc.get_bool("inspect.tsne", false));
    EXPECT_EQ(doc.get_strings("inspect.pairs", {}).size(), 2u);
    EXPECT_TRUE(doc.get_strings("inspect.empty", {"x"}).empty());
    EXPECT_EQ(doc.get_string("inspect.hash", ""), "a # b");
    EXPECT_EQ(doc.get_string("inspect.quoted_number", ""), "12");
    EXPECT_EQ(doc.get_strings("inspect.block", {}), (std::vector<std::string>{"x", "y"}));
    EXPECT_EQ(doc.get_number("missing", 1.5), 1.5);
}

TEST(ConfigParse, Errors) {
    EXPECT_THROW((void)ConfigDocument::parse("a: [1, 2\n"), Error);
    EXPECT_THROW((void)ConfigDocument::parse("- 1\n- 2\n"), Error);
    EXPECT_THROW((void)ConfigDocument::parse("a: [[1], [2]]\n"), Error);
    EXPECT_THROW((void)ConfigDocument::parse("a:\n"), Error);
    const auto doc = ConfigDocument::parse("a: text\nb: 1.5\nc: -1\nd: \"3\"\n");
    EXPECT_THROW((void)doc.get_number("a", 0), Error);
    EXPECT_THROW((void)doc.get_count("b", 0), Error);
    EXPECT_THROW((void)doc.get_count("c", 0), Error);
    EXPECT_THROW((void)doc.get_bool("b", false), Error);
    EXPECT_THROW((void)doc.get_number("d", 0), Error);
}

TEST(ConfigParse, ErrorNamesLine) {
    try {
        (void)ConfigDocument::parse("a: 1\nb: 2\nb: [\n", "x.yaml");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(std::string(e.what()).rfind("x.yaml:", 0), 0u) << e.what();
    }
}

TEST(ConfigParse, LargeSeedExact) {
    const auto doc = ConfigDocument::parse("seed: 18446744073709551615\n");
    EXPECT_EQ(doc.get_u64("seed", 0), 18446744073709551615ull);
}

TEST(AuditConfig, Defaults) {
    const auto c = make_audit_config(ConfigDocument::parse(""));
    EXPECT_EQ(c.seed, 0u);
    EXPECT_EQ(c.inspect.modes, 4u);
    EXPECT_EQ(c.inspect.pairs.size(), 4u);
    EXPECT_EQ(c.evaluate.target_fpr, 0.2);
    EXPECT_EQ(c.evaluate.replicates, 2000u);
    EXPECT_EQ(c.evaluate.groups.size(), 5u);
    EXPECT_FALSE(c.evaluate.cluster_by_patient);
    EXPECT_EQ(c.train.presets.size(), 3u);
    EXPECT_EQ(c.resample.attributes.size(), 3u);
    EXPECT_EQ(c.resample.seed, stage_seed(0, Stage::Resample));
    EXPECT_EQ(c.echo["inspect"]["modes"], 4);
}

TEST(AuditConfig, UnknownKeysRejected) {
    try {
        (void)make_audit_config(ConfigDocument::parse("inspect:\n  modez: 3\n"));
        FAIL();
    } catch (const Error& e) {
        EXPECT_NE(std::string(e.what()).find("inspect.modez"), std::string::npos);
    }
}

TEST(AuditConfig, InvalidValuesRejected) {
    EXPECT_THROW((void)make_audit_config(ConfigDocument::parse("evaluate:\n  target_fpr: 1.5\n")), Error);
    EXPECT_THROW((void)make_audit_config(ConfigDocument::parse("probe:\n  presets: [mlp7]\n")), Error);
    EXPECT_THROW((void)make_audit_config(ConfigDocument::parse("bootstrap:\n  unit: site\n")), Error);
    EXPECT_THROW((void)make_audit_config(ConfigDocument::parse("inspect:\n  pairs: [\"sex=Male\"]\n")), Error);
    EXPECT_THROW((void)make_audit_config(ConfigDocument::parse("inspect:\n  split: holdout\n")), Error);
}

TEST(AuditConfig, SeedOverrideRederivesStages) {
    const auto a = make_audit_config(ConfigDocument::parse("seed: 5\n"));
    const auto b = make_audit_config(ConfigDocument::parse("seed: 5\n"), 9);
    EXPECT_EQ(a.seed, 5u);
    EXPECT_EQ(b.seed, 9u);
    EXPECT_EQ(b.resample.seed, stage_seed(9, Stage::Resample));
    EXPECT_EQ(b.synth.seed, stage_seed(9, Stage::Synth));
    EXPECT_EQ(b.echo["seed"], 9);
}

TEST(AuditConfig, SynthSections) {
    const auto c = make_audit_config(ConfigDocument::parse(R"(
synth:
  races: [A, B]
  race_shift: ["B=1.5"]
  labels: [x, y]
  score_models: [m]
  label:
    y:
      axis: 7
      prevalence_by_race: ["A=0.1"]
  scores:
    m:
      label: y
      overrides: ["race=B:0.5"]
)"));
    ASSERT_EQ(c.synth.labels.size(), 2u);
    EXPECT_EQ(c.synth.labels[0].axis, 3u);
    EXPECT_EQ(c.synth.labels[1].axis, 7u);
    EXPECT_EQ(c.synth.labels[1].prevalence_by_race.at("A"), 0.1);
    EXPECT_EQ(c.synth.race_shift.at("B"), 1.5);
    ASSERT_EQ(c.synth_scores.size(), 1u);
    EXPECT_EQ(c.synth_scores[0].label, "y");
    EXPECT_EQ(c.synth_scores[0].overrides[0].second, 0.5);
}

TEST(AuditConfig, PathsResolveAgainstConfigDir) {
    testutil::TempDir dir("config");
    const auto path = dir.file("audit.yaml");
    std::ofstream(path) << "out: res\ndata:\n  cohort: c.csv\n  embeddings: /abs/e.bin\n"
                           "evaluate:\n  scores: [\"m=s.csv\"]\n";
    const auto c = make_audit_config(ConfigDocument::load(path));
    EXPECT_EQ(c.out_dir, (dir.path() / "res").string());
    EXPECT_EQ(c.data.cohort, (dir.path() / "c.csv").string());
    EXPECT_EQ(c.data.embeddings, "/abs/e.bin");
    EXPECT_EQ(c.evaluate.scores[0], "m=" + (dir.path() / "s.csv").string());
}

TEST(AuditConfig, ShippedConfigsParse) {
    std::size_t seen = 0;
    for (const auto& entry : std::filesystem::directory_iterator(BIASAUDIT_CONFIG_DIR)) {
        if (entry.path().extension() != ".yaml") continue;
        EXPECT_NO_THROW((void)make_audit_config(ConfigDocument::load(entry.path().string()))) << entry.path();
        ++seen;
    }
    EXPECT_GE(seen, 2u);
}
