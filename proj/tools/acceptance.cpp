#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "clab/experiments.hpp"
#include "clab/selftest.hpp"

namespace {

namespace fs = std::filesystem;
using clab::ExperimentConfig;
using clab::Preset;
using clab::ResultRecord;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Every CSV a pipeline writes except timing.csv, keyed by relative path.
std::map<std::string, std::string> result_csvs(const fs::path& dir) {
  std::map<std::string, std::string> out;
  out["results.csv"] = slurp(dir / "results.csv");
  if (fs::exists(dir / "curves")) {
    for (const auto& e : fs::directory_iterator(dir / "curves")) {
      out["curves/" + e.path().filename().string()] = slurp(e.path());
    }
  }
  return out;
}

/// One preset run at its default configuration, executed on first use.
class Pipelines {
 public:
  Pipelines(fs::path root, std::size_t jobs) : root_(std::move(root)), jobs_(jobs) {}

  const std::vector<ResultRecord>& records(Preset p) {
    auto it = runs_.find(p);
    if (it != runs_.end()) return it->second.records;
    Run run;
    run.cfg = clab::preset_defaults(p);
    run.dir = root_ / clab::to_string(p);
    std::fprintf(stderr, "running %s (%zu grid points)\n", clab::to_string(p).c_str(), clab::expand_grid(run.cfg).size());
    run.records = clab::run_experiment(run.cfg, run.dir, options());
    return runs_.emplace(p, std::move(run)).first->second.records;
  }

  const ExperimentConfig& config(Preset p) {
    records(p);
    return runs_.at(p).cfg;
  }

  /// Reruns a finished pipeline into a sibling directory and compares every CSV.
  Outcome rerun_matches(Preset p) {
    const Run& first = runs_.at(p);
    const fs::path again = root_ / (clab::to_string(p) + "-rerun");
    std::fprintf(stderr, "re-running %s\n", clab::to_string(p).c_str());
    clab::run_experiment(first.cfg, again, options());
    const auto a = result_csvs(first.dir), b = result_csvs(again);
    std::size_t differing = 0;
    for (const auto& [name, text] : a) {
      auto it = b.find(name);
      differing += it == b.end() || it->second != text;
    }
    differing += b.size() > a.size() ? b.size() - a.size() : 0;
    return {differing == 0, clab::to_string(p) + ": " + std::to_string(a.size()) + " CSVs, " +
                                std::to_string(differing) + " differ"};
  }

 private:
  struct Run {
    ExperimentConfig cfg;
    fs::path dir;
    std::vector<ResultRecord> records;
  };

  clab::RunOptions options() const {
    clab::RunOptions o;
    o.jobs = jobs_;
    o.progress = [](const ResultRecord& r, std::size_t done, std::size_t total) {
      std::fprintf(stderr, "  [%zu/%zu] %s %s seed=%llu %s (%.1fs)\n", done, total, r.method.c_str(),
                   clab::sweep_label(r.sweep).c_str(), static_cast<unsigned long long>(r.seed),
                   r.ok ? "ok" : r.error.c_str(), r.seconds);
    };
    return o;
  }

  fs::path root_;
  std::size_t jobs_;
  std::map<Preset, Run> runs_;
};

/// Seed-mean of `metric` for `method` at each value of the single swept
/// parameter, ordered by sweep value. Missing means are reported as NaN.
std::vector<std::pair<double, double>> mean_curve(const std::vector<ResultRecord>& records, const std::string& method,
                                                  const std::string& metric) {
  std::vector<std::pair<double, double>> out;
  for (const auto& p : clab::summarize_method(records, method)) {
    auto it = p.mean.find(metric);
    out.emplace_back(p.sweep.at(0).second, it == p.mean.end() ? std::nan("") : it->second);
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::string curve_text(const std::vector<std::pair<double, double>>& c) {
  std::string s;
  for (const auto& [x, y] : c) s += (s.empty() ? "" : " ") + fmt(x) + ":" + fmt(y);
  return s;
}

double at(const std::vector<std::pair<double, double>>& c, double x) {
  for (const auto& [cx, cy] : c)
    if (cx == x) return cy;
  return std::nan("");
}

std::size_t failures(const std::vector<ResultRecord>& records) {
  std::size_t n = 0;
  for (const auto& r : records) n += !r.ok;
  return n;
}

std::string failure_note(const std::vector<ResultRecord>& records) {
  const auto n = failures(records);
  return n == 0 ? "" : "; " + std::to_string(n) + " failed runs";
}

// ---------------------------------------------------------------------------
// Criteria

Outcome decomposition() {
  const auto t0 = std::chrono::steady_clock::now();
  const double e = clab::selftest::decomposition_error(11);
  const double s = seconds_since(t0);
  return {e < 1e-9 && s < 1.0, "27 combinations, max |error| " + fmt(e, 3) + " (< 1e-9), " + fmt(s, 3) + " s (< 1 s)"};
}

Outcome reduction() {
  const auto t0 = std::chrono::steady_clock::now();
  const double e = clab::selftest::reduction_error(12);
  const double s = seconds_since(t0);
  return {e < 1e-9 && s < 1.0, "27 combinations, max |error| " + fmt(e, 3) + " (< 1e-9), " + fmt(s, 3) + " s (< 1 s)"};
}

Outcome swd_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto bad = clab::selftest::swd_oracle_mismatches(8, 13);
  const double s = seconds_since(t0);
  return {bad == 0 && s < 5.0,
          "b = 2..8, " + std::to_string(bad) + " inexact batch sizes, " + fmt(s, 3) + " s (< 5 s)"};
}

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  auto cases = clab::selftest::loss_gradient_cases(14);
  auto more = clab::selftest::model_gradient_cases(15);
  cases.insert(cases.end(), more.begin(), more.end());
  double worst = 0.0;
  std::string where;
  for (const auto& c : cases) {
    const double e = clab::selftest::gradient_error(c, 5, 16);
    if (e >= worst) {
      worst = e;
      where = c.name;
    }
  }
  const double s = seconds_since(t0);
  return {worst < 1e-4 && s < 30.0, std::to_string(cases.size()) + " losses x 5 points, worst relative error " +
                                        fmt(worst, 3) + " (" + where + ", < 1e-4), " + fmt(s, 3) + " s (< 30 s)"};
}

/// Strictly decreasing with every step larger than `margin`.
bool decreasing_by(const std::vector<double>& v, double margin) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i - 1] - v[i] > margin)) return false;
  return true;
}

Outcome gaussianity(Pipelines& pl) {
  const auto& rec = pl.records(Preset::Gaussianity);
  const auto swd = mean_curve(rec, "swd-sphere", "ks_mean");  // lambda ascending
  const auto nt = mean_curve(rec, "nt-xent", "ks_mean");      // tau ascending
  const std::vector<double> swd_ks{at(swd, 0.5), at(swd, 5.0), at(swd, 50.0)};
  const std::vector<double> nt_ks{at(nt, 0.4), at(nt, 0.2), at(nt, 0.1)};
  const bool pass = decreasing_by(swd_ks, 0.005) && decreasing_by(nt_ks, 0.005) && failures(rec) == 0;
  return {pass, "mean KS swd-sphere lambda 0.5/5/50: " + fmt(swd_ks[0]) + " " + fmt(swd_ks[1]) + " " +
                    fmt(swd_ks[2]) + "; nt-xent tau 0.4/0.2/0.1: " + fmt(nt_ks[0]) + " " + fmt(nt_ks[1]) + " " +
                    fmt(nt_ks[2]) + " (each step down by > 0.005)" + failure_note(rec)};
}

Outcome saturation(Pipelines& pl) {
  const auto& rec = pl.records(Preset::Saturation);
  bool pass = failures(rec) == 0;
  std::string detail;
  for (const char* method : {"logsumexp", "swd"}) {
    const auto c = mean_curve(rec, method, "final_loss");
    const double l1 = at(c, 1), l2 = at(c, 2), l4 = at(c, 4), l8 = at(c, 8);
    const bool ok = l1 > l2 && l2 > l4 && l4 > l8 && (l4 - l8) < 0.25 * (l1 - l2);
    pass = pass && ok;
    detail += std::string(detail.empty() ? "" : "; ") + method + " k=1/2/4/8: " + fmt(l1) + " " + fmt(l2) + " " +
              fmt(l4) + " " + fmt(l8) + ", drop ratio (4->8)/(1->2) " + fmt((l4 - l8) / (l1 - l2), 3) +
              (ok ? "" : " [fails]");
  }
  return {pass, detail + " (strictly decreasing, ratio < 0.25)" + failure_note(rec)};
}

Outcome suppression(Pipelines& pl) {
  const auto& rec = pl.records(Preset::RandbitSweep);
  const auto base = mean_curve(rec, "nt-xent", "acc_base");
  const auto bit = mean_curve(rec, "nt-xent", "acc_bit");
  std::vector<double> ks, accs;
  for (const auto& [k, a] : base) {
    ks.push_back(k);
    accs.push_back(a);
  }
  const auto rho = clab::spearman(ks, accs);
  const double chance = 1.0 / clab::preset_defaults(Preset::RandbitSweep).dataset.classes;
  const double at16 = at(base, 16);
  bool bits_ok = true;
  std::string bit_text;
  for (const auto& [k, a] : bit) {
    if (k < 8) continue;
    bits_ok = bits_ok && a >= 0.9;
    bit_text += (bit_text.empty() ? "" : " ") + fmt(k) + ":" + fmt(a);
  }
  const bool pass = rho && *rho <= -0.8 && std::abs(at16 - chance) <= 0.05 && bits_ok && failures(rec) == 0;
  return {pass, "nt-xent base accuracy " + curve_text(base) + ", Spearman " + (rho ? fmt(*rho, 3) : "undefined") +
                    " (<= -0.8), k=16 vs chance " + fmt(at16 - chance, 3) + " (|.| <= 0.05); bit accuracy " +
                    bit_text + " (>= 0.9)" + failure_note(rec)};
}

Outcome vae_control(Pipelines& pl) {
  const auto& rec = pl.records(Preset::RandbitSweep);
  const auto nt = mean_curve(rec, "nt-xent", "acc_base");
  const auto vae = mean_curve(rec, "vae", "acc_base");
  const double nt_drop = at(nt, 0) - at(nt, 16), vae_drop = at(vae, 0) - at(vae, 16);
  return {vae_drop < 0.5 * nt_drop && failures(rec) == 0,
          "base accuracy drop k=0->16: vae " + fmt(vae_drop, 3) + " (" + fmt(at(vae, 0), 3) + " -> " +
              fmt(at(vae, 16), 3) + "), nt-xent " + fmt(nt_drop, 3) + "; need vae < half of nt-xent" +
              failure_note(rec)};
}

Outcome glyph_tradeoff(Pipelines& pl) {
  const auto& rec = pl.records(Preset::GlyphSweep);
  auto rho_of = [](const std::vector<std::pair<double, double>>& c) {
    std::vector<double> x, y;
    for (const auto& [a, b] : c) {
      x.push_back(a);
      y.push_back(b);
    }
    return clab::spearman(x, y);
  };
  const auto glyph = mean_curve(rec, "nt-xent", "acc_glyph");
  const auto base = mean_curve(rec, "nt-xent", "acc_base");
  const auto sup = mean_curve(rec, "supervised", "acc_base");
  const auto rg = rho_of(glyph), rb = rho_of(base);
  double lo = 1.0, hi = 0.0;
  for (const auto& [_, a] : sup) {
    lo = std::min(lo, a);
    hi = std::max(hi, a);
  }
  const bool pass = rg && *rg >= 0.8 && rb && *rb <= -0.8 && hi - lo <= 0.05 && failures(rec) == 0;
  return {pass, "nt-xent glyph accuracy " + curve_text(glyph) + " (Spearman " + (rg ? fmt(*rg, 3) : "undefined") +
                    ", >= 0.8); base accuracy " + curve_text(base) + " (Spearman " + (rb ? fmt(*rb, 3) : "undefined") +
                    ", <= -0.8); supervised base range " + fmt(hi - lo, 3) + " (<= 0.05)" + failure_note(rec)};
}

Outcome loss_family(Pipelines& pl) {
  const auto& rec = pl.records(Preset::LossComparison);
  double lo = 1.0, hi = 0.0;
  std::string detail;
  for (const auto& m : pl.config(Preset::LossComparison).methods) {
    const auto c = mean_curve(rec, m.name, "acc_base");
    const double a = c.empty() ? std::nan("") : c.front().second;
    lo = std::min(lo, a);
    hi = std::max(hi, a);
    detail += (detail.empty() ? "" : ", ") + m.name + " " + fmt(a, 3);
  }
  return {hi - lo <= 0.05 && failures(rec) == 0,
          "base accuracy " + detail + "; band " + fmt(hi - lo, 3) + " (<= 0.05)" + failure_note(rec)};
}

Outcome loss_vs_bits(Pipelines& pl) {
  const auto& rec = pl.records(Preset::RandbitSweep);
  std::map<std::uint64_t, std::vector<std::pair<double, double>>> per_seed;
  for (const auto& r : rec)
    if (r.method == "nt-xent" && r.ok) per_seed[r.seed].emplace_back(r.sweep.at(0).second, r.final_loss);
  bool pass = !per_seed.empty() && failures(rec) == 0;
  std::string detail;
  for (auto& [seed, c] : per_seed) {
    std::sort(c.begin(), c.end());
    bool ok = true;
    for (std::size_t i = 1; i < c.size(); ++i) ok = ok && c[i].second <= c[i - 1].second;
    pass = pass && ok;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(seed) + " " + curve_text(c) +
              (ok ? "" : " [increases]");
  }
  return {pass, "nt-xent final loss by k: " + detail + " (non-increasing)" + failure_note(rec)};
}

Outcome tau_lambda(Pipelines& pl) {
  const auto& rec = pl.records(Preset::TauLambdaGrid);
  const auto& cfg = pl.config(Preset::TauLambdaGrid);
  const auto points = clab::summarize_method(rec, cfg.methods.at(0).name);
  std::vector<std::pair<double, double>> argmax;  // tau -> best lambda
  for (double tau : cfg.sweep.at(0).values) {
    double best = -1.0, best_lambda = std::nan("");
    for (const auto& p : points) {
      if (p.sweep.at(0).second != tau) continue;
      auto it = p.mean.find("acc_base");
      if (it != p.mean.end() && it->second > best) {
        best = it->second;
        best_lambda = p.sweep.at(1).second;
      }
    }
    argmax.emplace_back(tau, best_lambda);
  }
  bool pass = failures(rec) == 0;
  for (std::size_t i = 1; i < argmax.size(); ++i) pass = pass && argmax[i].second <= argmax[i - 1].second;
  return {pass, "argmax lambda by tau " + curve_text(argmax) + " (non-increasing)" + failure_note(rec)};
}

/// Pipelines behind the selected trend criteria; all of them when none is selected.
std::vector<Preset> pipelines_for(const std::set<int>& selected) {
  const std::vector<std::pair<int, Preset>> uses{{5, Preset::Gaussianity},     {6, Preset::Saturation},
                                                 {7, Preset::RandbitSweep},    {8, Preset::RandbitSweep},
                                                 {9, Preset::GlyphSweep},      {10, Preset::LossComparison},
                                                 {11, Preset::RandbitSweep},   {12, Preset::TauLambdaGrid}};
  std::set<Preset> out;
  for (const auto& [id, p] : uses)
    if (selected.count(id)) out.insert(p);
  if (out.empty())
    for (const auto& [_, p] : uses) out.insert(p);
  return {out.begin(), out.end()};
}

Outcome determinism(Pipelines& pl, const std::vector<Preset>& presets) {
  bool pass = true;
  std::string detail;
  for (Preset p : presets) {
    pl.records(p);
    const auto o = pl.rerun_matches(p);
    pass = pass && o.pass;
    detail += (detail.empty() ? "" : "; ") + o.detail;
  }
  return {pass, detail};
}

std::set<int> parse_list(const std::string& text) {
  std::set<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks: one PASS/FAIL line per criterion"};
  std::string only, work = "acceptance-work";
  std::size_t jobs = 1;
  app.add_option("--only", only, "Comma-separated criterion numbers to run (default: all)");
  app.add_option("--work", work, "Directory for pipeline outputs");
  app.add_option("--jobs,-j", jobs, "Concurrent grid points")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  try {
    selected = only.empty() ? std::set<int>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13} : parse_list(only);
  } catch (const std::exception&) {
    std::fprintf(stderr, "--only expects comma-separated integers\n");
    return 1;
  }

  Pipelines pipelines(work, jobs);
  const std::vector<std::pair<int, std::pair<std::string, std::function<Outcome()>>>> criteria{
      {1, {"loss decomposition identity", decomposition}},
      {2, {"decoupled loss reduction", reduction}},
      {3, {"SWD matches optimal matching", swd_oracle}},
      {4, {"finite-difference gradients", gradients}},
      {5, {"Gaussianity ordering", [&] { return gaussianity(pipelines); }}},
      {6, {"distribution-term saturation", [&] { return saturation(pipelines); }}},
      {7, {"feature suppression by random bits", [&] { return suppression(pipelines); }}},
      {8, {"VAE control", [&] { return vae_control(pipelines); }}},
      {9, {"glyph trade-off", [&] { return glyph_tradeoff(pipelines); }}},
      {10, {"loss-family similarity", [&] { return loss_family(pipelines); }}},
      {11, {"contrastive loss falls with k", [&] { return loss_vs_bits(pipelines); }}},
      {12, {"tau-lambda argmax ordering", [&] { return tau_lambda(pipelines); }}},
      {13, {"byte-identical reruns", [&] { return determinism(pipelines, pipelines_for(selected)); }}},
  };

  int failed = 0;
  for (const auto& [id, entry] : criteria) {
    if (!selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = entry.second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2d %s  %s: %s [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", entry.first.c_str(),
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
