#pragma once

// Sweep execution: expands a config into grid points, runs each one in
// isolation (optionally on a worker pool) and writes results, curves and a
// summary with trend statistics.

#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "clab/experiment_config.hpp"
#include "clab/train.hpp"

namespace clab {

inline constexpr int kResultsSchemaVersion = 1;

using SweepPoint = std::vector<std::pair<std::string, double>>;

struct GridPoint {
  std::size_t index = 0;
  std::size_t method = 0;
  SweepPoint sweep;
  std::uint64_t seed = 0;
};

struct ResultRecord {
  std::size_t index = 0;
  std::string preset;
  std::string method;
  SweepPoint sweep;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  double final_loss = std::nan("");
  double initial_loss = std::nan("");  // distribution term at initialization (saturation)
  std::map<LabelField, double> accuracy;
  std::optional<double> ks_mean;
  double seconds = 0.0;
  std::string config_hash;
  std::vector<CurveRow> curve;
  std::optional<DiagnosticsReport> diagnostics;
};

// ---------------------------------------------------------------------------
// Formatting

/// Shortest round-trip decimal text; NaN becomes the empty string.
inline std::string fmt_double(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string sweep_label(const SweepPoint& s) {
  std::string out;
  for (const auto& [p, v] : s) out += (out.empty() ? "" : "_") + p + "=" + fmt_double(v);
  return out.empty() ? "none" : out;
}

// ---------------------------------------------------------------------------
// Grid

/// Grid order: method, then the cartesian product of its sweep axes (first
/// axis slowest), then seed.
inline std::vector<GridPoint> expand_grid(const ExperimentConfig& cfg) {
  std::vector<GridPoint> grid;
  for (std::size_t m = 0; m < cfg.methods.size(); ++m) {
    const auto& axes = cfg.sweep_for(cfg.methods[m]);
    std::vector<std::size_t> pos(axes.size(), 0);
    while (true) {
      SweepPoint point;
      for (std::size_t a = 0; a < axes.size(); ++a) point.emplace_back(axes[a].param, axes[a].values[pos[a]]);
      for (auto seed : cfg.seeds) grid.push_back({grid.size(), m, point, seed});
      std::size_t a = axes.size();
      while (a > 0 && ++pos[a - 1] == axes[a - 1].values.size()) pos[--a] = 0;
      if (a == 0) break;
    }
  }
  return grid;
}

struct RunSpec {
  MethodConfig method;
  TrainConfig train;
  DatasetParams data;
};

/// Applies a grid point's sweep values to the config template.
inline RunSpec resolve_run(const ExperimentConfig& cfg, const GridPoint& gp) {
  RunSpec run{cfg.methods.at(gp.method), cfg.train, cfg.dataset};
  LossForm& loss = run.method.loss;
  if (run.method.lr) run.train.optimizer.lr = *run.method.lr;
  if (run.method.epochs) run.train.epochs = *run.method.epochs;
  for (const auto& [param, v] : gp.sweep) {
    if (param == "k") {
      run.data.k = static_cast<int>(v);
    } else if (param == "num_unique") {
      run.data.num_unique = static_cast<int>(v);
    } else if (param == "tau") {
      if (loss.type == LossType::Generalized) {
        if (auto* lse = std::get_if<LogSumExpTerm>(&loss.spec.distribution)) lse->tau = v;
      } else {
        loss.tau = v;
      }
    } else if (param == "lambda") {
      if (loss.type == LossType::Generalized) {
        loss.spec.lambda = v;
      } else {
        loss.lambda = v;
      }
    } else if (param == "batch_size") {
      run.train.batch_size = static_cast<std::size_t>(v);
    } else if (param == "epochs") {
      run.train.epochs = static_cast<std::size_t>(v);
    } else if (param == "lr") {
      run.train.optimizer.lr = v;
    }
  }
  run.train.objective = run.method.objective;
  run.train.loss = loss.resolve();
  run.train.seed = derive_seed(gp.seed, 0x7a1);
  return run;
}

/// The fully resolved description of one run; its hash identifies the run.
inline Json run_config_json(const ExperimentConfig& cfg, const GridPoint& gp, const RunSpec& run) {
  Json sweep = Json::object();
  for (const auto& [p, v] : gp.sweep) sweep[p] = v;
  ProbeConfig probe = cfg.probe;
  return {{"preset", to_string(cfg.preset)},
          {"method", to_json(run.method)},
          {"sweep", sweep},
          {"seed", gp.seed},
          {"dataset", to_json(run.data)},
          {"train", train_to_json(run.train)},
          {"model", model_to_json(run.train)},
          {"probe", probe_to_json(probe)},
          {"diagnostics", diagnostics_to_json(cfg)}};
}

struct RunDatasets {
  LabeledDataset train;
  LabeledDataset eval;
};

/// Training and held-out evaluation sets for one (dataset params, seed).
/// The held-out set carries glyphs drawn from the whole bank.
inline RunDatasets build_datasets(const DatasetParams& d, std::uint64_t seed) {
  Rng train_rng(derive_seed(seed, 100)), eval_rng(derive_seed(seed, 101));
  RunDatasets out{make_base_dataset(d.classes, d.per_class, d.hw, train_rng),
                  make_base_dataset(d.classes, d.eval_per_class, d.hw, eval_rng)};
  if (d.num_unique > 0) {
    Rng bank_rng(derive_seed(seed, 104));
    const auto bank = make_glyph_bank(d.glyph_bank_per_digit, bank_rng);
    Rng a(derive_seed(seed, 105)), b(derive_seed(seed, 106));
    out.train = overlay_glyphs(out.train, d.num_unique, bank, a, d.glyph_intensity);
    out.eval = overlay_glyphs(out.eval, static_cast<int>(bank.size()), bank, b, d.glyph_intensity);
  }
  if (d.k > 0) {
    Rng a(derive_seed(seed, 102)), b(derive_seed(seed, 103));
    out.train = inject_rand_bits(out.train, d.k, a);
    out.eval = inject_rand_bits(out.eval, d.k, b);
  }
  return out;
}

/// Runs one grid point; every failure is captured in the record.
inline ResultRecord run_point(const ExperimentConfig& cfg, const GridPoint& gp) {
  const auto t0 = std::chrono::steady_clock::now();
  ResultRecord rec;
  rec.index = gp.index;
  rec.preset = to_string(cfg.preset);
  rec.method = cfg.methods.at(gp.method).name;
  rec.sweep = gp.sweep;
  rec.seed = gp.seed;
  try {
    const RunSpec run = resolve_run(cfg, gp);
    rec.config_hash = json_hash(run_config_json(cfg, gp, run));
    if (run.train.objective == Objective::Distribution) {
      const auto sat =
          saturation_run(run.data.k, run.data.entropy_size, run.data.entropy_hw, run.train, run.data.eval_batches);
      rec.final_loss = sat.final_loss;
      rec.initial_loss = sat.initial_loss;
      rec.curve = sat.training.curve;
    } else {
      const RunDatasets data = build_datasets(run.data, gp.seed);
      const TrainResult result = train(run.train, data.train);
      rec.final_loss = result.final_loss();
      rec.curve = result.curve;
      const ProbeSettings probe{cfg.probe.steps, cfg.probe.lr, derive_seed(gp.seed, 0x9e)};
      for (auto field : cfg.probe.fields) {
        if (data.eval.has(field)) rec.accuracy[field] = linear_evaluate(result.checkpoint, data.eval, field, probe);
      }
      if (run.train.objective == Objective::Contrastive) {
        auto diag = output_diagnostics(run.train, result.checkpoint.params, data.eval, derive_seed(gp.seed, 0xd1));
        rec.ks_mean = diag.ks_mean;
        if (cfg.histograms) {
          diag.loss_curve = result.epoch_loss;
          diag.final_loss = rec.final_loss;
          rec.diagnostics = std::move(diag);
        }
      }
    }
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

// ---------------------------------------------------------------------------
// Statistics

/// Spearman rank correlation with average ranks for ties; nullopt when
/// undefined (fewer than two points or a constant series).
inline std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) return std::nullopt;
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j < idx.size() && v[idx[j]] == v[idx[i]]) ++j;
      for (std::size_t t = i; t < j; ++t) r[idx[t]] = 0.5 * static_cast<double>(i + j - 1);
      i = j;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n, my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"final_loss", "initial_loss", "acc_base", "acc_glyph", "acc_bit",
                                              "ks_mean"};
  return names;
}

inline std::optional<double> record_metric(const ResultRecord& r, const std::string& metric) {
  if (!r.ok) return std::nullopt;
  auto finite = [](double v) { return std::isnan(v) ? std::nullopt : std::optional<double>(v); };
  auto acc = [&](LabelField f) {
    auto it = r.accuracy.find(f);
    return it == r.accuracy.end() ? std::nullopt : std::optional<double>(it->second);
  };
  if (metric == "final_loss") return finite(r.final_loss);
  if (metric == "initial_loss") return finite(r.initial_loss);
  if (metric == "acc_base") return acc(LabelField::Base);
  if (metric == "acc_glyph") return acc(LabelField::Glyph);
  if (metric == "acc_bit") return acc(LabelField::Bit);
  if (metric == "ks_mean") return r.ks_mean;
  return std::nullopt;
}

/// Seed-averaged metrics for one method at one sweep point.
struct PointSummary {
  SweepPoint sweep;
  std::size_t runs = 0;
  std::map<std::string, double> mean;
};

inline std::vector<PointSummary> summarize_method(const std::vector<ResultRecord>& records, const std::string& method) {
  std::vector<PointSummary> points;
  std::map<std::string, std::map<std::string, std::pair<double, std::size_t>>> acc;
  for (const auto& r : records) {
    if (r.method != method) continue;
    auto it = std::find_if(points.begin(), points.end(), [&](const PointSummary& p) { return p.sweep == r.sweep; });
    if (it == points.end()) {
      points.push_back({r.sweep, 0, {}});
      it = points.end() - 1;
    }
    if (r.ok) ++it->runs;
    for (const auto& m : metric_names()) {
      if (auto v = record_metric(r, m)) {
        auto& slot = acc[sweep_label(r.sweep)][m];
        slot.first += *v;
        ++slot.second;
      }
    }
  }
  for (auto& p : points)
    for (const auto& [m, s] : acc[sweep_label(p.sweep)]) p.mean[m] = s.first / static_cast<double>(s.second);
  return points;
}

// ---------------------------------------------------------------------------
// Output files

inline std::vector<std::string> sweep_columns(const ExperimentConfig& cfg) {
  std::vector<std::string> cols;
  auto add = [&](const std::vector<SweepAxis>& axes) {
    for (const auto& a : axes)
      if (std::find(cols.begin(), cols.end(), a.param) == cols.end()) cols.push_back(a.param);
  };
  for (const auto& m : cfg.methods) add(cfg.sweep_for(m));
  return cols;
}

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

inline std::string results_csv(const ExperimentConfig& cfg, const std::vector<ResultRecord>& records) {
  const auto cols = sweep_columns(cfg);
  std::ostringstream out;
  out << "index,preset,method";
  for (const auto& c : cols) out << ",sweep_" << c;
  out << ",seed,status,final_loss,initial_loss,acc_base,acc_glyph,acc_bit,ks_mean,config_hash,error\n";
  for (const auto& r : records) {
    out << r.index << ',' << r.preset << ',' << r.method;
    for (const auto& c : cols) {
      out << ',';
      for (const auto& [p, v] : r.sweep)
        if (p == c) out << fmt_double(v);
    }
    out << ',' << r.seed << ',' << (r.ok ? "ok" : "error");
    for (const auto& m : metric_names()) {
      const auto v = record_metric(r, m);
      out << ',' << (v ? fmt_double(*v) : "");
    }
    out << ',' << r.config_hash << ',' << csv_escape(r.error) << '\n';
  }
  return out.str();
}

inline std::string curve_csv(const ResultRecord& r) {
  const bool ks = std::any_of(r.curve.begin(), r.curve.end(), [](const CurveRow& c) { return c.ks_mean.has_value(); });
  std::ostringstream out;
  out << "step,epoch,loss" << (ks ? ",ks_mean" : "") << '\n';
  for (const auto& c : r.curve) {
    out << c.step << ',' << c.epoch << ',' << fmt_double(c.loss);
    if (ks) out << ',' << (c.ks_mean ? fmt_double(*c.ks_mean) : "");
    out << '\n';
  }
  return out.str();
}

inline std::string curve_filename(const ResultRecord& r) {
  char idx[16];
  std::snprintf(idx, sizeof idx, "%04zu", r.index);
  return std::string(idx) + "_" + r.method + "_" + sweep_label(r.sweep) + "_seed" + std::to_string(r.seed) + ".csv";
}

inline Json sweep_json(const SweepPoint& s) {
  Json j = Json::object();
  for (const auto& [p, v] : s) j[p] = v;
  return j;
}

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json summary_json(const ExperimentConfig& cfg, const std::vector<ResultRecord>& records) {
  Json methods = Json::object();
  Json trends = Json::object();
  for (const auto& m : cfg.methods) {
    const auto points = summarize_method(records, m.name);
    Json pts = Json::array();
    for (const auto& p : points) {
      Json mean = Json::object();
      for (const auto& [k, v] : p.mean) mean[k] = v;
      pts.push_back({{"sweep", sweep_json(p.sweep)}, {"runs", p.runs}, {"mean", mean}});
    }
    methods[m.name] = {{"points", pts}};

    const auto& axes = cfg.sweep_for(m);
    Json mt = Json::object();
    for (std::size_t a = 0; a < axes.size(); ++a) {
      bool others_fixed = true;
      for (std::size_t b = 0; b < axes.size(); ++b) others_fixed &= b == a || axes[b].values.size() == 1;
      if (axes[a].values.size() < 2 || !others_fixed) continue;
      Json rho = Json::object();
      for (const auto& metric : metric_names()) {
        std::vector<double> xs, ys;
        for (const auto& p : points) {
          auto it = p.mean.find(metric);
          if (it == p.mean.end()) continue;
          xs.push_back(p.sweep[a].second);
          ys.push_back(it->second);
        }
        if (!xs.empty()) rho[metric] = optional_json(spearman(xs, ys));
      }
      mt["spearman"][axes[a].param] = rho;
    }
    if (axes.size() == 2 && axes[0].values.size() > 1 && axes[1].values.size() > 1) {
      // best second-axis value (by base probe accuracy) for each first-axis value
      Json best = Json::array();
      for (double v0 : axes[0].values) {
        std::optional<double> arg, top;
        for (double v1 : axes[1].values) {
          for (const auto& p : points) {
            if (p.sweep[0].second != v0 || p.sweep[1].second != v1) continue;
            auto it = p.mean.find("acc_base");
            if (it != p.mean.end() && (!top || it->second > *top)) {
              top = it->second;
              arg = v1;
            }
          }
        }
        best.push_back({{axes[0].param, v0}, {"argmax_" + axes[1].param, optional_json(arg)},
                        {"acc_base", optional_json(top)}});
      }
      mt["argmax"] = best;
    }
    trends[m.name] = mt;
  }

  Json hist = Json::array();
  for (const auto& r : records) {
    if (!r.diagnostics) continue;
    Json panels = Json::array();
    for (const auto& h : r.diagnostics->histograms) panels.push_back({{"edges", h.edges}, {"counts", h.counts}});
    hist.push_back({{"index", r.index},
                    {"method", r.method},
                    {"sweep", sweep_json(r.sweep)},
                    {"seed", r.seed},
                    {"bins", cfg.train.diagnostics.bins},
                    {"ks", r.diagnostics->ks},
                    {"ks_mean", r.diagnostics->ks_mean},
                    {"panels", panels}});
  }

  std::size_t failures = 0;
  for (const auto& r : records) failures += !r.ok;
  Json axes_json = Json::object();
  for (const auto& m : cfg.methods) axes_json[m.name] = sweep_to_json(cfg.sweep_for(m));
  return {{"schema_version", kResultsSchemaVersion},
          {"preset", to_string(cfg.preset)},
          {"config_hash", config_hash(cfg)},
          {"records", records.size()},
          {"failures", failures},
          {"seeds", cfg.seeds},
          {"sweep", axes_json},
          {"methods", methods},
          {"trends", trends},
          {"histograms", hist}};
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

/// Writes config.json, results.csv, timing.csv, summary.json and one curve
/// CSV per run under `dir`. Everything except timing.csv is a pure function
/// of the config and seeds.
inline void write_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                          const std::vector<ResultRecord>& records) {
  std::filesystem::create_directories(dir / "curves");
  write_text(dir / "config.json", serialize_config(cfg));
  write_text(dir / "results.csv", results_csv(cfg, records));
  std::ostringstream timing;
  timing << "index,seconds\n";
  for (const auto& r : records) timing << r.index << ',' << fmt_double(r.seconds) << '\n';
  write_text(dir / "timing.csv", timing.str());
  for (const auto& r : records) {
    if (!r.curve.empty()) write_text(dir / "curves" / curve_filename(r), curve_csv(r));
  }
  write_text(dir / "summary.json", summary_json(cfg, records).dump(2) + "\n");
}

struct RunOptions {
  std::size_t jobs = 1;
  /// Called after each finished grid point (from worker threads, serialized).
  std::function<void(const ResultRecord&, std::size_t done, std::size_t total)> progress;
};

/// Executes every grid point; results come back sorted by grid index
/// regardless of completion order.
inline std::vector<ResultRecord> run_grid(const ExperimentConfig& cfg, const RunOptions& opts = {}) {
  const auto grid = expand_grid(cfg);
  std::vector<ResultRecord> records(grid.size());
  std::atomic<std::size_t> next{0};
  std::size_t done = 0;
  std::mutex sink;
  auto worker = [&] {
    for (std::size_t i = next++; i < grid.size(); i = next++) {
      ResultRecord r = run_point(cfg, grid[i]);
      std::lock_guard<std::mutex> lock(sink);
      records[i] = std::move(r);
      ++done;
      if (opts.progress) opts.progress(records[i], done, grid.size());
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(opts.jobs, grid.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  return records;
}

/// run_grid followed by write_outputs.
inline std::vector<ResultRecord> run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                                const RunOptions& opts = {}) {
  auto records = run_grid(cfg, opts);
  write_outputs(out_dir, cfg, records);
  return records;
}

/// --out, then the config's output_dir, then $CONTRASTIVE_LAB_OUT/<preset>,
/// then results/<preset>.
inline std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg, const std::string& out_flag) {
  if (!out_flag.empty()) return out_flag;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* root = std::getenv("CONTRASTIVE_LAB_OUT"); root && *root) {
    return std::filesystem::path(root) / to_string(cfg.preset);
  }
  return std::filesystem::path("results") / to_string(cfg.preset);
}

}  // namespace clab
