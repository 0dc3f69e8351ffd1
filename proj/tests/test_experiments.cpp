#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "clab/experiments.hpp"
#include "clab/report.hpp"

using namespace clab;
namespace fs = std::filesystem;

namespace {

// A grid small enough to train in well under a second per point.
const char* kTinyModel = R"(
  "dataset": {"classes": 3, "per_class": 8, "hw": 16, "eval_per_class": 10},
  "model": {"encoder": {"kind": "mlp", "widths": [32], "h_dim": 16},
            "head": {"depth": 2, "hidden": 16, "z_dim": 8},
            "vae": {"latent": 2, "decoder_hidden": 8}},
  "train": {"batch_size": 8, "epochs": 2},
  "probe": {"steps": 20},
  "diagnostics": {"projections": 3, "bins": 7, "samples": 16})";

std::string tiny(const std::string& head) { return "{" + head + "," + kTinyModel + "}"; }

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("clab_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ConfigError parse_error(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e;
  }
  ADD_FAILURE() << "expected a config error for " << text;
  return ConfigError(ConfigError::Kind::Malformed, "", "none");
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(CLAB_CLI) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(ParseConfig, MinimalPresetRoundTrips) {
  const auto cfg = parse_config(R"({"preset": "randbit-sweep"})");
  EXPECT_EQ(cfg.preset, Preset::RandbitSweep);
  const std::string text = serialize_config(cfg);
  const auto again = parse_config(text);
  EXPECT_EQ(serialize_config(again), text);
  EXPECT_EQ(config_hash(again), config_hash(cfg));
}

TEST(ParseConfig, EveryPresetRoundTrips) {
  for (const auto& [preset, name] : kPresetNames) {
    const auto cfg = preset_defaults(preset);
    EXPECT_EQ(serialize_config(parse_config(serialize_config(cfg))), serialize_config(cfg)) << name;
  }
}

TEST(ParseConfig, NegativeTauNamesTau) {
  const auto e = parse_error(R"({"preset": "loss-comparison", "methods": [{"name": "a", "loss": {"tau": -1}}]})");
  EXPECT_EQ(e.kind(), ConfigError::Kind::OutOfRange);
  EXPECT_NE(e.path().find("tau"), std::string::npos);
}

TEST(ParseConfig, MisspelledKeyIsRejected) {
  const auto e =
      parse_error(R"({"preset": "loss-comparison", "methods": [{"name": "a", "loss": {"temprature": 0.1}}]})");
  EXPECT_EQ(e.kind(), ConfigError::Kind::UnknownKey);
  EXPECT_NE(std::string(e.what()).find("temprature"), std::string::npos);
}

TEST(ParseConfig, DistinctDiagnostics) {
  EXPECT_EQ(parse_error(R"({"preset": )").kind(), ConfigError::Kind::Malformed);
  EXPECT_EQ(parse_error(R"({"seeds": [1]})").kind(), ConfigError::Kind::MissingField);
  EXPECT_EQ(parse_error(R"({"preset": "saturation", "seeds": []})").kind(), ConfigError::Kind::OutOfRange);
  EXPECT_EQ(parse_error(R"({"preset": "saturation", "seeds": "1"})").kind(), ConfigError::Kind::WrongType);
  EXPECT_EQ(parse_error(R"({"preset": "randbit-sweep", "sweep": [{"param": "k", "values": []}]})").kind(),
            ConfigError::Kind::OutOfRange);
  EXPECT_EQ(parse_error(R"({"preset": "nope"})").kind(), ConfigError::Kind::OutOfRange);
  EXPECT_EQ(parse_error(R"({"preset": "saturation", "seeds": [1], "seeds": [2]})").path(), "seeds");
}

TEST(ConfigHash, StableUnderKeyPermutation) {
  const auto a = parse_config(R"({"preset": "glyph-sweep", "seeds": [4, 5], "train": {"epochs": 3, "batch_size": 32}})");
  const auto b = parse_config(R"({"train": {"batch_size": 32, "epochs": 3}, "seeds": [4, 5], "preset": "glyph-sweep"})");
  EXPECT_EQ(config_hash(a), config_hash(b));
  const auto c = parse_config(R"({"preset": "glyph-sweep", "seeds": [4, 5], "train": {"epochs": 4, "batch_size": 32}})");
  EXPECT_NE(config_hash(a), config_hash(c));
}

TEST(Grid, RandbitSingleKSingleSeedGivesOneRecordPerMethod) {
  auto cfg = parse_config(R"({"preset": "randbit-sweep", "sweep": [{"param": "k", "values": [0]}], "seeds": [1]})");
  const auto grid = expand_grid(cfg);
  ASSERT_EQ(grid.size(), cfg.methods.size());
  for (std::size_t i = 0; i < grid.size(); ++i) EXPECT_EQ(grid[i].method, i);
}

TEST(Grid, SizeIsProductOfAxesSeedsAndMethods) {
  const auto cfg = preset_defaults(Preset::TauLambdaGrid);
  EXPECT_EQ(expand_grid(cfg).size(), 4u * 5u * cfg.seeds.size() * cfg.methods.size());
  const auto g = preset_defaults(Preset::Gaussianity);
  EXPECT_EQ(expand_grid(g).size(), (3u + 3u) * g.seeds.size());
}

TEST(Grid, SweepValuesReachTheRunSpec) {
  const auto cfg = parse_config(
      R"({"preset": "tau-lambda-grid", "sweep": [{"param": "tau", "values": [0.3]}, {"param": "lambda", "values": [2]}]})");
  const auto run = resolve_run(cfg, expand_grid(cfg).front());
  const auto* lse = std::get_if<LogSumExpTerm>(&run.train.loss.distribution);
  ASSERT_NE(lse, nullptr);
  EXPECT_EQ(lse->tau, 0.3);
  EXPECT_EQ(run.train.loss.lambda, 2.0);
}

TEST(RunExperiment, FailuresAreIsolatedPerGridPoint) {
  // batch size 64 exceeds the 24-image training set only for the second method's override.
  auto cfg = parse_config(tiny(R"("preset": "loss-comparison", "seeds": [1],
      "methods": [{"name": "ok"}, {"name": "broken", "sweep": [{"param": "batch_size", "values": [64]}]}])"));
  const auto records = run_grid(cfg);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_TRUE(records[0].ok);
  EXPECT_FALSE(records[1].ok);
  EXPECT_NE(records[1].error.find("batch size"), std::string::npos);
  const std::string csv = results_csv(cfg, records);
  EXPECT_NE(csv.find(",error,"), std::string::npos);
}

TEST(RunExperiment, RerunIsByteIdentical) {
  const auto cfg = parse_config(tiny(R"("preset": "randbit-sweep", "seeds": [1, 2],
      "sweep": [{"param": "k", "values": [0, 3]}])"));
  const auto a = scratch("rerun_a"), b = scratch("rerun_b");
  RunOptions two;
  two.jobs = 2;
  run_experiment(cfg, a);
  run_experiment(cfg, b, two);
  for (const char* f : {"results.csv", "summary.json", "config.json"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  std::size_t curves = 0;
  for (const auto& e : fs::directory_iterator(a / "curves")) {
    EXPECT_EQ(slurp(e.path()), slurp(b / "curves" / e.path().filename()));
    ++curves;
  }
  EXPECT_EQ(curves, 8u);
  run_experiment(cfg, a);
  EXPECT_EQ(slurp(a / "results.csv"), slurp(b / "results.csv"));
}

TEST(RunExperiment, RecordsCarryMatchingConfigHash) {
  const auto cfg = parse_config(tiny(R"("preset": "loss-comparison", "seeds": [3])"));
  const auto grid = expand_grid(cfg);
  const auto rec = run_point(cfg, grid[1]);
  ASSERT_TRUE(rec.ok) << rec.error;
  EXPECT_EQ(rec.config_hash, json_hash(run_config_json(cfg, grid[1], resolve_run(cfg, grid[1]))));
  EXPECT_TRUE(rec.accuracy.count(LabelField::Base));
  EXPECT_TRUE(rec.ks_mean.has_value());
}

TEST(Summary, GlyphSweepHasSpearmanPerProbeAccuracy) {
  const auto cfg = parse_config(tiny(R"("preset": "glyph-sweep", "seeds": [1],
      "sweep": [{"param": "num_unique", "values": [1, 4, 16]}])"));
  const auto records = run_grid(cfg);
  const auto s = summary_json(cfg, records);
  EXPECT_EQ(s.at("schema_version"), kResultsSchemaVersion);
  for (const auto& m : cfg.methods) {
    const auto& rho = s.at("trends").at(m.name).at("spearman").at("num_unique");
    EXPECT_TRUE(rho.contains("acc_base")) << m.name;
    EXPECT_TRUE(rho.contains("acc_glyph")) << m.name;
  }
}

TEST(Summary, SpearmanMatchesHandComputedRanks) {
  EXPECT_DOUBLE_EQ(*spearman({1, 2, 3, 4}, {10, 20, 30, 40}), 1.0);
  EXPECT_DOUBLE_EQ(*spearman({1, 2, 3, 4}, {4, 3, 2, 1}), -1.0);
  EXPECT_NEAR(*spearman({1, 2, 3}, {1, 3, 2}), 0.5, 1e-15);
  EXPECT_FALSE(spearman({1, 2, 3}, {5, 5, 5}).has_value());
  EXPECT_FALSE(spearman({1}, {2}).has_value());
}

TEST(Report, EmptySummaryGivesNoDataPanel) {
  const auto dir = scratch("report_empty");
  fs::create_directories(dir);
  std::ofstream(dir / "summary.json") << R"({"preset": "glyph-sweep", "methods": {}, "sweep": {}, "histograms": []})";
  const auto files = render_report(dir);
  EXPECT_TRUE(fs::exists(dir / "report" / "no_data.svg"));
  EXPECT_NE(slurp(dir / "report" / "index.md").find("no data"), std::string::npos);
  EXPECT_EQ(files.size(), 2u);
}

TEST(Report, MissingOrCorruptSummaryThrows) {
  const auto dir = scratch("report_bad");
  fs::create_directories(dir);
  EXPECT_THROW(render_report(dir), ReportError);
  std::ofstream(dir / "summary.json") << "{\"methods\": ";
  EXPECT_THROW(render_report(dir), ReportError);
}

TEST(Report, HistogramPanelsUseConfiguredBinsAndRegenerateIdentically) {
  const auto cfg = parse_config(tiny(R"("preset": "gaussianity", "seeds": [1],
      "sweep": [{"param": "lambda", "values": [5]}],
      "methods": [{"name": "swd", "loss": {"type": "generalized", "alignment": "mse-normalized",
                   "distribution": {"kind": "swd"}, "lambda": 5, "scale": 1}}])"));
  const auto dir = scratch("report_hist");
  run_experiment(cfg, dir);
  const auto files = render_report(dir);
  const fs::path hist = dir / "report" / "hist_0000.svg";
  ASSERT_TRUE(fs::exists(hist));
  const std::string svg = slurp(hist);
  std::size_t bars = 0;
  for (auto pos = svg.find("#1f77b4"); pos != std::string::npos; pos = svg.find("#1f77b4", pos + 1)) ++bars;
  EXPECT_EQ(bars, cfg.train.diagnostics.projections * cfg.train.diagnostics.bins);

  std::vector<std::string> first;
  for (const auto& f : files) first.push_back(slurp(f));
  const auto again = render_report(dir);
  ASSERT_EQ(again.size(), files.size());
  for (std::size_t i = 0; i < files.size(); ++i) EXPECT_EQ(slurp(again[i]), first[i]) << again[i];
}

TEST(OutputDir, PriorityOrder) {
  auto cfg = preset_defaults(Preset::Saturation);
  EXPECT_EQ(resolve_output_dir(cfg, "x"), fs::path("x"));
  cfg.output_dir = "y";
  EXPECT_EQ(resolve_output_dir(cfg, ""), fs::path("y"));
  cfg.output_dir.clear();
  ::setenv("CONTRASTIVE_LAB_OUT", "/tmp/root", 1);
  EXPECT_EQ(resolve_output_dir(cfg, ""), fs::path("/tmp/root/saturation"));
  ::unsetenv("CONTRASTIVE_LAB_OUT");
  EXPECT_EQ(resolve_output_dir(cfg, ""), fs::path("results/saturation"));
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  fs::create_directories(dir);
  std::ofstream(dir / "bad.json") << R"({"preset": "saturation", "temprature": 1})";
  std::ofstream(dir / "good.json") << tiny(R"("preset": "loss-comparison", "seeds": [1],
      "methods": [{"name": "nt-xent"}])");
  std::ofstream(dir / "fails.json") << tiny(R"("preset": "loss-comparison", "seeds": [1],
      "methods": [{"name": "nt-xent", "sweep": [{"param": "batch_size", "values": [500]}]}])");
  EXPECT_EQ(run_cli("validate " + (dir / "good.json").string()), 0);
  EXPECT_EQ(run_cli("validate " + (dir / "bad.json").string()), 1);
  EXPECT_EQ(run_cli("validate " + (dir / "missing.json").string()), 1);
  EXPECT_EQ(run_cli("validate " + (dir / "good.json").string() + " --seed-override 1,x"), 1);
  EXPECT_EQ(run_cli("run " + (dir / "good.json").string() + " --out " + (dir / "out").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "out" / "results.csv"));
  EXPECT_EQ(run_cli("report " + (dir / "out").string()), 0);
  EXPECT_EQ(run_cli("report " + (dir / "nowhere").string()), 1);
  EXPECT_EQ(run_cli("run " + (dir / "fails.json").string() + " --out " + (dir / "out2").string()), 2);
  EXPECT_EQ(run_cli("frobnicate"), 1);
}
