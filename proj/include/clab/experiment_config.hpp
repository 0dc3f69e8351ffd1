#pragma once

// Experiment configuration: presets, sweep axes, methods and their strict
// JSON form. Parsing starts from the preset's defaults and overrides any
// field present in the document.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "clab/config_json.hpp"
#include "clab/train.hpp"

namespace clab {

enum class Preset { LossComparison, TauLambdaGrid, Gaussianity, RandbitSweep, GlyphSweep, Saturation };

inline constexpr detail::EnumName<Preset> kPresetNames[] = {{Preset::LossComparison, "loss-comparison"},
                                                            {Preset::TauLambdaGrid, "tau-lambda-grid"},
                                                            {Preset::Gaussianity, "gaussianity"},
                                                            {Preset::RandbitSweep, "randbit-sweep"},
                                                            {Preset::GlyphSweep, "glyph-sweep"},
                                                            {Preset::Saturation, "saturation"}};

inline std::string to_string(Preset p) { return detail::enum_to_string(p, kPresetNames); }

/// Parameters a sweep axis may vary.
inline const std::vector<std::string>& sweep_parameters() {
  static const std::vector<std::string> names{"k", "num_unique", "tau", "lambda", "batch_size", "epochs", "lr"};
  return names;
}

struct SweepAxis {
  std::string param;
  std::vector<double> values;
};

enum class LossType { NtXent, Decoupled, Generalized };

inline constexpr detail::EnumName<LossType> kLossTypeNames[] = {
    {LossType::NtXent, "nt-xent"}, {LossType::Decoupled, "decoupled"}, {LossType::Generalized, "generalized"}};

/// A loss as written in configs. nt-xent and decoupled are shorthands whose
/// tau/lambda map onto a LossSpec; generalized carries the spec directly.
struct LossForm {
  LossType type = LossType::NtXent;
  double tau = 0.2;
  double lambda = 1.0;
  LossSpec spec;

  LossSpec resolve() const {
    switch (type) {
      case LossType::NtXent:
        return nt_xent_spec(tau);
      case LossType::Decoupled:
        return LossSpec{Alignment::NegativeCosine, LogSumExpTerm{tau}, lambda, 1.0};
      case LossType::Generalized:
        return spec;
    }
    return spec;
  }
};

struct MethodConfig {
  std::string name;
  Objective objective = Objective::Contrastive;
  LossForm loss;
  /// Replaces the experiment-wide sweep for this method when non-empty.
  std::vector<SweepAxis> sweep;
  /// Per-method optimizer step size and budget; sweep values still win.
  std::optional<double> lr;
  std::optional<std::size_t> epochs;
};

struct DatasetParams {
  int classes = 10;
  int per_class = 100;
  std::size_t hw = 16;
  /// Held-out images per class used for linear evaluation.
  int eval_per_class = 200;
  int k = 0;
  /// Distinct glyphs overlaid on training images; 0 disables the overlay.
  int num_unique = 0;
  int glyph_bank_per_digit = 26;
  double glyph_intensity = 0.6;
  /// Entropy-dataset size and side length (saturation preset).
  std::size_t entropy_size = 512;
  std::size_t entropy_hw = 8;
  std::size_t eval_batches = 16;
};

struct ProbeConfig {
  std::vector<LabelField> fields{LabelField::Base};
  int steps = 300;
  double lr = 1.0;
};

struct ExperimentConfig {
  Preset preset = Preset::LossComparison;
  std::vector<SweepAxis> sweep;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<MethodConfig> methods;
  DatasetParams dataset;
  /// Template for every run: model, augmentation, optimizer, budget.
  TrainConfig train;
  ProbeConfig probe;
  bool histograms = false;
  std::string output_dir;

  const std::vector<SweepAxis>& sweep_for(const MethodConfig& m) const { return m.sweep.empty() ? sweep : m.sweep; }
};

// ---------------------------------------------------------------------------
// Presets

inline MethodConfig nt_xent_method(double tau = 0.2) {
  MethodConfig m{"nt-xent", Objective::Contrastive, {}, {}};
  m.loss.type = LossType::NtXent;
  m.loss.tau = tau;
  return m;
}

inline MethodConfig generalized_method(std::string name, LossSpec spec, Objective objective = Objective::Contrastive) {
  MethodConfig m{std::move(name), objective, {}, {}};
  m.loss.type = LossType::Generalized;
  m.loss.spec = spec;
  return m;
}

/// Defaults of a preset: methods, sweep, dataset and budget.
inline ExperimentConfig preset_defaults(Preset preset) {
  ExperimentConfig c;
  c.preset = preset;
  c.train.batch_size = 64;
  c.train.epochs = 20;
  const double d = static_cast<double>(c.train.head.z_dim);
  const LossSpec lse_sphere{Alignment::MseNormalized, LogSumExpTerm{0.2}, 2.0 * 0.2 / d, 1000.0};
  const LossSpec swd_sphere{Alignment::MseNormalized, SwdTerm{{PriorKind::UniformHypersphere, 0}, 0}, 5.0, 1000.0};
  const LossSpec swd_cube{Alignment::MseUnnormalized, SwdTerm{{PriorKind::UniformHypercube, 0}, 0}, 5.0, 1.0};
  const LossSpec swd_normal{Alignment::MseUnnormalized, SwdTerm{{PriorKind::StandardNormal, 0}, 0}, 5.0, 1.0};
  switch (preset) {
    case Preset::LossComparison:
      c.sweep = {{"k", {0}}};
      c.methods = {nt_xent_method(), generalized_method("lse-sphere", lse_sphere),
                   generalized_method("swd-sphere", swd_sphere), generalized_method("swd-cube", swd_cube),
                   generalized_method("swd-normal", swd_normal)};
      break;
    case Preset::TauLambdaGrid: {
      c.sweep = {{"tau", {0.1, 0.2, 0.5, 1.0}}, {"lambda", {0.05, 0.1, 0.5, 1.0, 5.0}}};
      MethodConfig m{"decoupled", Objective::Contrastive, {}, {}};
      m.loss.type = LossType::Decoupled;
      m.loss.tau = 1.0;
      m.loss.lambda = 0.1;
      c.methods = {m};
      c.seeds = {1};
      break;
    }
    case Preset::Gaussianity: {
      c.sweep = {{"lambda", {0.5, 5.0, 50.0}}};
      MethodConfig nt = nt_xent_method();
      nt.sweep = {{"tau", {0.4, 0.2, 0.1}}};
      c.methods = {generalized_method("swd-sphere", swd_sphere), nt};
      c.histograms = true;
      break;
    }
    case Preset::RandbitSweep: {
      c.sweep = {{"k", {0, 2, 4, 8, 12, 16}}};
      MethodConfig vae{"vae", Objective::Vae, {}, {}};
      vae.lr = 3e-3;
      vae.epochs = 120;
      c.methods = {nt_xent_method(), vae};
      c.probe.fields = {LabelField::Base, LabelField::Bit};
      break;
    }
    case Preset::GlyphSweep: {
      c.sweep = {{"num_unique", {1, 4, 16, 64, 256}}};
      MethodConfig sup{"supervised", Objective::Supervised, {}, {}};
      c.methods = {nt_xent_method(), sup};
      c.probe.fields = {LabelField::Base, LabelField::Glyph};
      // At 16 px the nine overlaid glyphs cover most of the image.
      c.dataset.hw = 32;
      c.train.epochs = 60;
      break;
    }
    case Preset::Saturation: {
      c.sweep = {{"k", {1, 2, 4, 8}}, {"batch_size", {64}}};
      const LossSpec lse{Alignment::NegativeCosine, LogSumExpTerm{1.0}, 1.0, 1.0};
      const LossSpec swd{Alignment::MseNormalized, SwdTerm{{PriorKind::UniformHypersphere, 0}, 0}, 1.0, 1.0};
      c.methods = {generalized_method("logsumexp", lse, Objective::Distribution),
                   generalized_method("swd", swd, Objective::Distribution)};
      c.train.encoder.kind = EncoderKind::Mlp;
      c.train.encoder.widths = {64};
      c.probe.fields = {};
      break;
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// JSON

inline Json to_json(const SweepAxis& a) { return {{"param", a.param}, {"values", a.values}}; }

inline Json sweep_to_json(const std::vector<SweepAxis>& axes) {
  Json out = Json::array();
  for (const auto& a : axes) out.push_back(to_json(a));
  return out;
}

inline Json to_json(const LossForm& f) {
  Json j = {{"type", detail::enum_to_string(f.type, kLossTypeNames)}};
  switch (f.type) {
    case LossType::NtXent:
      j["tau"] = f.tau;
      break;
    case LossType::Decoupled:
      j["tau"] = f.tau;
      j["lambda"] = f.lambda;
      break;
    case LossType::Generalized:
      j.update(to_json(f.spec));
      break;
  }
  return j;
}

inline Json to_json(const MethodConfig& m) {
  Json j = {{"name", m.name}, {"objective", to_string(m.objective)}};
  if (m.objective == Objective::Contrastive || m.objective == Objective::Distribution) j["loss"] = to_json(m.loss);
  if (!m.sweep.empty()) j["sweep"] = sweep_to_json(m.sweep);
  if (m.lr) j["lr"] = *m.lr;
  if (m.epochs) j["epochs"] = *m.epochs;
  return j;
}

inline Json to_json(const DatasetParams& d) {
  return {{"classes", d.classes},
          {"per_class", d.per_class},
          {"hw", d.hw},
          {"eval_per_class", d.eval_per_class},
          {"k", d.k},
          {"num_unique", d.num_unique},
          {"glyph_bank_per_digit", d.glyph_bank_per_digit},
          {"glyph_intensity", d.glyph_intensity},
          {"entropy_size", d.entropy_size},
          {"entropy_hw", d.entropy_hw},
          {"eval_batches", d.eval_batches}};
}

inline Json train_to_json(const TrainConfig& t) {
  return {{"batch_size", t.batch_size},   {"epochs", t.epochs},
          {"steps_per_epoch", t.steps_per_epoch}, {"snapshot_every", t.snapshot_every},
          {"optimizer", to_json(t.optimizer)},    {"augment", to_json(t.augment)}};
}

inline Json model_to_json(const TrainConfig& t) {
  return {{"encoder", to_json(t.encoder)}, {"head", to_json(t.head)}, {"vae", to_json(t.vae)}};
}

inline Json probe_to_json(const ProbeConfig& p) {
  Json fields = Json::array();
  for (auto f : p.fields) fields.push_back(to_string(f));
  return {{"fields", fields}, {"steps", p.steps}, {"lr", p.lr}};
}

inline Json diagnostics_to_json(const ExperimentConfig& c) {
  const auto& d = c.train.diagnostics;
  return {{"projections", d.projections}, {"bins", d.bins}, {"samples", d.samples}, {"histograms", c.histograms}};
}

inline Json to_json(const ExperimentConfig& c) {
  Json methods = Json::array();
  for (const auto& m : c.methods) methods.push_back(to_json(m));
  Json j = {{"preset", to_string(c.preset)},
            {"sweep", sweep_to_json(c.sweep)},
            {"seeds", c.seeds},
            {"methods", methods},
            {"dataset", to_json(c.dataset)},
            {"train", train_to_json(c.train)},
            {"model", model_to_json(c.train)},
            {"probe", probe_to_json(c.probe)},
            {"diagnostics", diagnostics_to_json(c)}};
  if (!c.output_dir.empty()) j["output_dir"] = c.output_dir;
  return j;
}

namespace detail {

inline bool is_integer_param(const std::string& p) {
  return p == "k" || p == "num_unique" || p == "batch_size" || p == "epochs";
}

inline void check_sweep_value(const std::string& path, const std::string& param, double v, Preset preset) {
  auto fail = [&](const std::string& why) {
    throw ConfigError(ConfigError::Kind::OutOfRange, path, param + " = " + Json(v).dump() + " " + why);
  };
  if (!std::isfinite(v)) fail("is not finite");
  if (is_integer_param(param) && v != std::floor(v)) fail("must be an integer");
  if (param == "k") {
    const double lo = preset == Preset::Saturation ? 1 : 0;
    if (v < lo || v > kMaxBits) fail("not in [" + std::to_string(static_cast<int>(lo)) + ", 24]");
  } else if (param == "num_unique" || param == "epochs") {
    if (v < 1) fail("must be >= 1");
  } else if (param == "batch_size") {
    if (v < 2) fail("must be >= 2");
  } else if (v <= 0) {
    fail("must be > 0");
  }
}

inline std::vector<SweepAxis> sweep_from_json(const Json& j, const std::string& path, Preset preset) {
  std::vector<SweepAxis> axes;
  const Json list = j.is_object() ? Json::array({j}) : j;
  if (!list.is_array()) throw ConfigError(ConfigError::Kind::WrongType, path, "expected an axis object or an array");
  if (list.empty()) throw ConfigError(ConfigError::Kind::OutOfRange, path, "sweep must have at least one axis");
  std::set<std::string> used;
  for (std::size_t i = 0; i < list.size(); ++i) {
    const std::string ap = j.is_object() ? path : path + "[" + std::to_string(i) + "]";
    StrictReader r(list[i], ap);
    SweepAxis a;
    a.param = r.require<std::string>("param");
    const auto& known = sweep_parameters();
    if (std::find(known.begin(), known.end(), a.param) == known.end()) {
      throw ConfigError(ConfigError::Kind::OutOfRange, r.child("param"), "unknown sweep parameter '" + a.param + "'");
    }
    if (!used.insert(a.param).second) {
      throw ConfigError(ConfigError::Kind::OutOfRange, r.child("param"), "parameter '" + a.param + "' swept twice");
    }
    const Json& vals = r.raw("values");
    if (!vals.is_array()) throw ConfigError(ConfigError::Kind::WrongType, r.child("values"), "expected an array");
    if (vals.empty()) throw ConfigError(ConfigError::Kind::OutOfRange, r.child("values"), "sweep values are empty");
    for (std::size_t t = 0; t < vals.size(); ++t) {
      const std::string vp = r.child("values") + "[" + std::to_string(t) + "]";
      if (!vals[t].is_number()) throw ConfigError(ConfigError::Kind::WrongType, vp, "expected a number");
      const double v = vals[t].get<double>();
      check_sweep_value(vp, a.param, v, preset);
      a.values.push_back(v);
    }
    r.finish();
    axes.push_back(std::move(a));
  }
  return axes;
}

inline LossForm loss_form_from_json(StrictReader& r) {
  LossForm f;
  f.type = enum_from_json(r, "type", LossType::NtXent, kLossTypeNames);
  switch (f.type) {
    case LossType::NtXent:
      f.tau = r.number("tau", 0.2, 0.0, 1e6, true);
      break;
    case LossType::Decoupled:
      f.tau = r.number("tau", 1.0, 0.0, 1e6, true);
      f.lambda = r.number("lambda", 0.1, 0.0, 1e9, true);
      break;
    case LossType::Generalized:
      f.spec = loss_spec_from_json(r);
      break;
  }
  r.finish();
  return f;
}

inline MethodConfig method_from_json(const Json& j, const std::string& path, Preset preset) {
  StrictReader r(j, path);
  MethodConfig m;
  m.name = r.require<std::string>("name");
  if (m.name.empty() || m.name.find_first_of("/\\,\"\n ") != std::string::npos) {
    throw ConfigError(ConfigError::Kind::OutOfRange, r.child("name"),
                      "method names must be non-empty without spaces, commas, quotes or slashes");
  }
  m.objective = enum_from_json(r, "objective", Objective::Contrastive, kObjectiveNames);
  const bool uses_loss = m.objective == Objective::Contrastive || m.objective == Objective::Distribution;
  if (auto lr = r.object("loss")) {
    if (!uses_loss) {
      throw ConfigError(ConfigError::Kind::UnknownKey, r.child("loss"),
                        "'loss' is not used by the " + to_string(m.objective) + " objective");
    }
    m.loss = loss_form_from_json(*lr);
  }
  if (r.has("sweep")) m.sweep = sweep_from_json(r.raw("sweep"), r.child("sweep"), preset);
  if (r.has("lr")) m.lr = r.number("lr", 0.0, 0.0, 10.0, true);
  if (r.has("epochs")) m.epochs = detail::read_size(r, "epochs", 0, 1, 100000);
  r.finish();
  return m;
}

inline void dataset_from_json(StrictReader& r, DatasetParams& d) {
  d.classes = static_cast<int>(read_size(r, "classes", d.classes, 2, 1000));
  d.per_class = static_cast<int>(read_size(r, "per_class", d.per_class, 1, 100000));
  d.hw = read_size(r, "hw", d.hw, 8, 256);
  d.eval_per_class = static_cast<int>(read_size(r, "eval_per_class", d.eval_per_class, 1, 100000));
  d.k = static_cast<int>(read_size(r, "k", d.k, 0, kMaxBits));
  d.num_unique = static_cast<int>(read_size(r, "num_unique", d.num_unique, 0, 100000));
  d.glyph_bank_per_digit = static_cast<int>(read_size(r, "glyph_bank_per_digit", d.glyph_bank_per_digit, 1, 10000));
  d.glyph_intensity = r.number("glyph_intensity", d.glyph_intensity, 0.0, 1.0, true);
  d.entropy_size = read_size(r, "entropy_size", d.entropy_size, 2, 1000000);
  d.entropy_hw = read_size(r, "entropy_hw", d.entropy_hw, 1, 256);
  d.eval_batches = read_size(r, "eval_batches", d.eval_batches, 1, 10000);
  r.finish();
}

}  // namespace detail

inline ExperimentConfig experiment_from_json(const Json& doc) {
  StrictReader root(doc, "");
  const Preset preset = detail::enum_from_json(root, "preset", Preset::LossComparison, kPresetNames, true);
  ExperimentConfig c = preset_defaults(preset);

  if (root.has("sweep")) c.sweep = detail::sweep_from_json(root.raw("sweep"), "sweep", preset);
  if (root.has("seeds")) {
    const Json& s = root.raw("seeds");
    if (!s.is_array()) throw ConfigError(ConfigError::Kind::WrongType, "seeds", "expected an array");
    if (s.empty()) throw ConfigError(ConfigError::Kind::OutOfRange, "seeds", "seeds list is empty");
    c.seeds.clear();
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!s[i].is_number_unsigned()) {
        throw ConfigError(ConfigError::Kind::WrongType, "seeds[" + std::to_string(i) + "]",
                          "expected a non-negative integer");
      }
      c.seeds.push_back(s[i].get<std::uint64_t>());
    }
  }
  if (root.has("methods")) {
    const Json& ms = root.raw("methods");
    if (!ms.is_array() || ms.empty()) {
      throw ConfigError(ConfigError::Kind::OutOfRange, "methods", "expected a non-empty array");
    }
    c.methods.clear();
    std::set<std::string> names;
    for (std::size_t i = 0; i < ms.size(); ++i) {
      const std::string path = "methods[" + std::to_string(i) + "]";
      c.methods.push_back(detail::method_from_json(ms[i], path, preset));
      if (!names.insert(c.methods.back().name).second) {
        throw ConfigError(ConfigError::Kind::OutOfRange, path + ".name",
                          "duplicate method name '" + c.methods.back().name + "'");
      }
    }
  }
  if (auto d = root.object("dataset")) detail::dataset_from_json(*d, c.dataset);
  if (auto t = root.object("train")) {
    c.train.batch_size = detail::read_size(*t, "batch_size", c.train.batch_size, 2, 100000);
    c.train.epochs = detail::read_size(*t, "epochs", c.train.epochs, 1, 100000);
    c.train.steps_per_epoch = detail::read_size(*t, "steps_per_epoch", c.train.steps_per_epoch, 0, 1000000);
    c.train.snapshot_every = detail::read_size(*t, "snapshot_every", c.train.snapshot_every, 0, 100000);
    if (auto o = t->object("optimizer")) {
      c.train.optimizer = optimizer_from_json(*o);
      o->finish();
    }
    if (auto a = t->object("augment")) {
      c.train.augment = augment_from_json(*a);
      a->finish();
    }
    t->finish();
  }
  if (auto m = root.object("model")) {
    if (auto e = m->object("encoder")) {
      c.train.encoder = encoder_from_json(*e);
      e->finish();
    }
    if (auto h = m->object("head")) {
      c.train.head = head_from_json(*h);
      h->finish();
    }
    if (auto v = m->object("vae")) {
      c.train.vae = vae_from_json(*v);
      v->finish();
    }
    m->finish();
  }
  if (auto p = root.object("probe")) {
    if (p->has("fields")) {
      const Json& f = p->raw("fields");
      if (!f.is_array()) throw ConfigError(ConfigError::Kind::WrongType, "probe.fields", "expected an array");
      c.probe.fields.clear();
      for (std::size_t i = 0; i < f.size(); ++i) {
        const std::string path = "probe.fields[" + std::to_string(i) + "]";
        const std::string s = f[i].is_string() ? f[i].get<std::string>() : "";
        if (s == "base") {
          c.probe.fields.push_back(LabelField::Base);
        } else if (s == "glyph") {
          c.probe.fields.push_back(LabelField::Glyph);
        } else if (s == "bit") {
          c.probe.fields.push_back(LabelField::Bit);
        } else {
          throw ConfigError(ConfigError::Kind::OutOfRange, path, "expected one of: base, glyph, bit");
        }
      }
    }
    c.probe.steps = static_cast<int>(detail::read_size(*p, "steps", c.probe.steps, 1, 1000000));
    c.probe.lr = p->number("lr", c.probe.lr, 0.0, 100.0, true);
    p->finish();
  }
  if (auto g = root.object("diagnostics")) {
    c.train.diagnostics.projections = detail::read_size(*g, "projections", c.train.diagnostics.projections, 1, 4096);
    c.train.diagnostics.bins = detail::read_size(*g, "bins", c.train.diagnostics.bins, 1, 10000);
    c.train.diagnostics.samples = detail::read_size(*g, "samples", c.train.diagnostics.samples, 0, 10000000);
    c.histograms = g->get<bool>("histograms", c.histograms);
    g->finish();
  }
  c.output_dir = root.get<std::string>("output_dir", c.output_dir);
  root.finish();
  return c;
}

/// Parses and validates an experiment config document.
inline ExperimentConfig parse_config(const std::string& text) { return experiment_from_json(parse_json_text(text)); }

/// Canonical text of a config: keys sorted, every default spelled out.
inline std::string serialize_config(const ExperimentConfig& c) { return to_json(c).dump(2) + "\n"; }

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xf];
  return s;
}

/// FNV-1a of the canonical (sorted-key) dump, so key order never matters.
inline std::string json_hash(const Json& j) {
  const std::string text = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return hex64(h);
}

inline std::string config_hash(const ExperimentConfig& c) {
  Json j = to_json(c);
  j.erase("output_dir");
  return json_hash(j);
}

}  // namespace clab
