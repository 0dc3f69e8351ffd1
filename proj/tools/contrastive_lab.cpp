#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "clab/experiments.hpp"
#include "clab/report.hpp"
#include "clab/selftest.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) {
      throw clab::ConfigError(clab::ConfigError::Kind::WrongType, "--seed-override",
                              "expected comma-separated non-negative integers, got '" + text + "'");
    }
    seeds.push_back(v);
  }
  if (seeds.empty()) throw clab::ConfigError(clab::ConfigError::Kind::OutOfRange, "--seed-override", "no seeds given");
  return seeds;
}

clab::ExperimentConfig load_config(const std::string& path, const std::string& seed_override) {
  clab::ExperimentConfig cfg = clab::parse_config(read_file(path));
  if (!seed_override.empty()) cfg.seeds = parse_seed_list(seed_override);
  return cfg;
}

int cmd_validate(const std::string& path, const std::string& seed_override) {
  const auto cfg = load_config(path, seed_override);
  const auto grid = clab::expand_grid(cfg);
  std::printf("ok: preset %s, %zu grid points, config hash %s\n", clab::to_string(cfg.preset).c_str(), grid.size(),
              clab::config_hash(cfg).c_str());
  return kExitOk;
}

int cmd_run(const std::string& path, const std::string& seed_override, const std::string& out, std::size_t jobs) {
  const auto cfg = load_config(path, seed_override);
  const auto dir = clab::resolve_output_dir(cfg, out);
  clab::RunOptions opts;
  opts.jobs = jobs;
  opts.progress = [](const clab::ResultRecord& r, std::size_t done, std::size_t total) {
    std::fprintf(stderr, "[%zu/%zu] %s %s seed=%llu %s (%.1fs)%s%s\n", done, total, r.method.c_str(),
                 clab::sweep_label(r.sweep).c_str(), static_cast<unsigned long long>(r.seed), r.ok ? "ok" : "FAILED",
                 r.seconds, r.ok ? "" : ": ", r.error.c_str());
  };
  const auto records = clab::run_experiment(cfg, dir, opts);
  std::size_t failed = 0;
  for (const auto& r : records) failed += !r.ok;
  std::printf("%zu runs, %zu failed, results in %s\n", records.size(), failed, dir.string().c_str());
  return !records.empty() && failed == records.size() ? kExitRuntime : kExitOk;
}

int cmd_report(const std::string& dir) {
  const auto files = clab::render_report(dir);
  std::printf("wrote %zu report files under %s\n", files.size(), (std::filesystem::path(dir) / "report").string().c_str());
  return kExitOk;
}

int cmd_selftest() {
  const auto results = clab::run_selftest();
  bool all = true;
  for (const auto& r : results) {
    std::printf("%s  %s: %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    all = all && r.pass;
  }
  return all ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale contrastive representation learning experiments"};
  app.require_subcommand(1);

  std::string config_path, seed_override, out_dir, report_dir;
  std::size_t jobs = 1;

  auto* run = app.add_subcommand("run", "Execute a preset sweep and write results");
  run->add_option("config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--seed-override", seed_override, "Comma-separated seeds replacing the config's list");
  run->add_option("--out", out_dir, "Output directory");
  run->add_option("--jobs,-j", jobs, "Concurrent grid points")->check(CLI::PositiveNumber);

  auto* validate = app.add_subcommand("validate", "Parse and check a config without running it");
  validate->add_option("config", config_path, "Experiment config (JSON)")->required();
  validate->add_option("--seed-override", seed_override, "Comma-separated seeds replacing the config's list");

  auto* report = app.add_subcommand("report", "Render SVG charts and a markdown index from a result directory");
  report->add_option("dir", report_dir, "Result directory")->required();

  auto* selftest = app.add_subcommand("selftest", "Run the fast invariant suites");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config_path, seed_override, out_dir, jobs);
    if (*validate) return cmd_validate(config_path, seed_override);
    if (*report) return cmd_report(report_dir);
    if (*selftest) return cmd_selftest();
  } catch (const clab::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const clab::ReportError& e) {
    std::fprintf(stderr, "report error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitOk;
}
