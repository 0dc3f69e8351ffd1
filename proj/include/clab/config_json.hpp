#pragma once

// JSON codecs for the loss, model, augmentation and optimizer settings.
// Writers emit every field; readers are strict and fill defaults.

#include <set>
#include <string>
#include <vector>

#include "clab/datasets.hpp"
#include "clab/json_strict.hpp"
#include "clab/losses.hpp"
#include "clab/models.hpp"
#include "clab/optim.hpp"

namespace clab {

namespace detail {

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

template <typename E, std::size_t N>
std::string enum_to_string(E v, const EnumName<E> (&table)[N]) {
  for (const auto& e : table)
    if (e.value == v) return e.name;
  return "?";
}

template <typename E, std::size_t N>
E enum_from_json(StrictReader& r, const std::string& key, E fallback, const EnumName<E> (&table)[N],
                 bool required = false) {
  if (!required && !r.has(key)) {
    r.get<std::string>(key, "");
    return fallback;
  }
  const auto s = r.require<std::string>(key);
  std::string options;
  for (const auto& e : table) {
    if (s == e.name) return e.value;
    options += (options.empty() ? "" : ", ") + std::string(e.name);
  }
  throw ConfigError(ConfigError::Kind::OutOfRange, r.child(key), "'" + s + "' is not one of: " + options);
}

inline constexpr EnumName<Alignment> kAlignmentNames[] = {{Alignment::NegativeCosine, "negative-cosine"},
                                                          {Alignment::MseNormalized, "mse-normalized"},
                                                          {Alignment::MseUnnormalized, "mse-unnormalized"}};
inline constexpr EnumName<PriorKind> kPriorNames[] = {{PriorKind::UniformHypersphere, "uniform-hypersphere"},
                                                      {PriorKind::UniformHypercube, "uniform-hypercube"},
                                                      {PriorKind::StandardNormal, "standard-normal"}};
inline constexpr EnumName<EncoderKind> kEncoderNames[] = {{EncoderKind::Mlp, "mlp"},
                                                          {EncoderKind::SmallConv, "small-conv"}};
inline constexpr EnumName<OptimizerKind> kOptimizerNames[] = {{OptimizerKind::SgdMomentum, "sgd-momentum"},
                                                              {OptimizerKind::Adam, "adam"}};

inline std::size_t read_size(StrictReader& r, const std::string& key, std::size_t fallback, std::size_t lo,
                             std::size_t hi) {
  const auto v = r.get<long long>(key, static_cast<long long>(fallback));
  r.check_range(key, static_cast<double>(v), static_cast<double>(lo), static_cast<double>(hi));
  return static_cast<std::size_t>(v);
}

}  // namespace detail

inline std::string to_string(Alignment a) { return detail::enum_to_string(a, detail::kAlignmentNames); }
inline std::string to_string(PriorKind p) { return detail::enum_to_string(p, detail::kPriorNames); }
inline std::string to_string(EncoderKind k) { return detail::enum_to_string(k, detail::kEncoderNames); }
inline std::string to_string(OptimizerKind k) { return detail::enum_to_string(k, detail::kOptimizerNames); }

// ---------------------------------------------------------------------------
// Loss

inline Json to_json(const LossSpec& spec) {
  Json dist;
  if (const auto* lse = std::get_if<LogSumExpTerm>(&spec.distribution)) {
    dist = {{"kind", "logsumexp"}, {"tau", lse->tau}};
  } else {
    const auto& swd = std::get<SwdTerm>(spec.distribution);
    dist = {{"kind", "swd"}, {"prior", to_string(swd.prior.kind)}, {"proj_dim", swd.proj_dim}};
  }
  return {{"alignment", to_string(spec.alignment)}, {"distribution", dist}, {"lambda", spec.lambda},
          {"scale", spec.scale}};
}

inline LossSpec loss_spec_from_json(StrictReader& r) {
  LossSpec spec;
  spec.alignment = detail::enum_from_json(r, "alignment", Alignment::NegativeCosine, detail::kAlignmentNames);
  if (auto d = r.object("distribution")) {
    const auto kind = d->get<std::string>("kind", "logsumexp");
    if (kind == "logsumexp") {
      spec.distribution = LogSumExpTerm{d->number("tau", 0.2, 0.0, 1e6, true)};
    } else if (kind == "swd") {
      SwdTerm swd;
      swd.prior.kind = detail::enum_from_json(*d, "prior", PriorKind::UniformHypersphere, detail::kPriorNames);
      swd.proj_dim = detail::read_size(*d, "proj_dim", 0, 0, 1 << 20);
      spec.distribution = swd;
    } else {
      throw ConfigError(ConfigError::Kind::OutOfRange, d->child("kind"),
                        "'" + kind + "' is not one of: logsumexp, swd");
    }
    d->finish();
  }
  spec.lambda = r.number("lambda", 1.0, 0.0, 1e9, true);
  spec.scale = r.number("scale", 1.0, 0.0, 1e12, true);
  try {
    validate(spec);
  } catch (const LossConfigError& e) {
    throw ConfigError(ConfigError::Kind::OutOfRange, r.path(), e.what());
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Model

inline Json to_json(const EncoderConfig& c) {
  return {{"kind", to_string(c.kind)}, {"widths", c.widths}, {"h_dim", c.h_dim}};
}

inline EncoderConfig encoder_from_json(StrictReader& r) {
  EncoderConfig c;
  c.kind = detail::enum_from_json(r, "kind", c.kind, detail::kEncoderNames);
  if (r.has("widths")) {
    const Json& w = r.raw("widths");
    if (!w.is_array()) throw ConfigError(ConfigError::Kind::WrongType, r.child("widths"), "expected an array");
    c.widths.clear();
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!w[i].is_number_integer() || w[i].get<long long>() < 1) {
        throw ConfigError(ConfigError::Kind::OutOfRange, r.child("widths") + "[" + std::to_string(i) + "]",
                          "layer width must be a positive integer");
      }
      c.widths.push_back(w[i].get<std::size_t>());
    }
  } else {
    r.get<long long>("widths", 0);
  }
  c.h_dim = detail::read_size(r, "h_dim", c.h_dim, 2, 1 << 16);
  return c;
}

inline Json to_json(const ProjectionHeadConfig& c) {
  return {{"depth", c.depth}, {"hidden", c.hidden}, {"z_dim", c.z_dim}};
}

inline ProjectionHeadConfig head_from_json(StrictReader& r) {
  ProjectionHeadConfig c;
  c.depth = detail::read_size(r, "depth", c.depth, 1, 16);
  c.hidden = detail::read_size(r, "hidden", c.hidden, 1, 1 << 16);
  c.z_dim = detail::read_size(r, "z_dim", c.z_dim, 1, 1 << 16);
  return c;
}

inline Json to_json(const VaeConfig& c) {
  return {{"latent", c.latent}, {"decoder_hidden", c.decoder_hidden}, {"beta", c.beta}};
}

inline VaeConfig vae_from_json(StrictReader& r) {
  VaeConfig c;
  c.latent = detail::read_size(r, "latent", c.latent, 1, 1 << 16);
  c.decoder_hidden = detail::read_size(r, "decoder_hidden", c.decoder_hidden, 1, 1 << 16);
  c.beta = r.number("beta", c.beta, 0.0, 1e6);
  return c;
}

inline Json to_json(const InputShape& s) { return {{"height", s.height}, {"width", s.width}, {"channels", s.channels}}; }

inline InputShape input_shape_from_json(const Json& j) {
  return {j.at("height").get<std::size_t>(), j.at("width").get<std::size_t>(), j.at("channels").get<std::size_t>()};
}

// ---------------------------------------------------------------------------
// Augmentation and optimizer

inline Json to_json(const AugmentSpec& a) {
  return {{"crop_min", a.crop_min},
          {"crop_max", a.crop_max},
          {"flip_prob", a.flip_prob},
          {"jitter_scale", a.jitter_scale},
          {"jitter_shift", a.jitter_shift}};
}

inline AugmentSpec augment_from_json(StrictReader& r) {
  AugmentSpec a;
  a.crop_min = r.number("crop_min", a.crop_min, 0.0, 1.0, true);
  a.crop_max = r.number("crop_max", a.crop_max, a.crop_min, 1.0);
  a.flip_prob = r.number("flip_prob", a.flip_prob, 0.0, 1.0);
  a.jitter_scale = r.number("jitter_scale", a.jitter_scale, 0.0, 1.0);
  a.jitter_shift = r.number("jitter_shift", a.jitter_shift, 0.0, 1.0);
  return a;
}

inline Json to_json(const OptimizerConfig& o) {
  return {{"kind", to_string(o.kind)}, {"lr", o.lr},       {"momentum", o.momentum},         {"beta1", o.beta1},
          {"beta2", o.beta2},          {"eps", o.eps},     {"weight_decay", o.weight_decay}};
}

inline OptimizerConfig optimizer_from_json(StrictReader& r) {
  OptimizerConfig o;
  o.kind = detail::enum_from_json(r, "kind", o.kind, detail::kOptimizerNames);
  o.lr = r.number("lr", o.lr, 0.0, 10.0, true);
  o.momentum = r.number("momentum", o.momentum, 0.0, 0.999999);
  o.beta1 = r.number("beta1", o.beta1, 0.0, 0.999999);
  o.beta2 = r.number("beta2", o.beta2, 0.0, 0.999999999);
  o.eps = r.number("eps", o.eps, 0.0, 1.0, true);
  o.weight_decay = r.number("weight_decay", o.weight_decay, 0.0, 1.0);
  return o;
}

/// Parses `text` as JSON, mapping syntax errors and repeated object keys to
/// ConfigError::Malformed.
inline Json parse_json_text(const std::string& text) {
  std::vector<std::set<std::string>> open;
  std::string duplicate;
  auto guard = [&](int, nlohmann::json::parse_event_t event, Json& parsed) {
    using E = nlohmann::json::parse_event_t;
    if (event == E::object_start) open.emplace_back();
    if (event == E::object_end) open.pop_back();
    if (event == E::key && !open.back().insert(parsed.get<std::string>()).second && duplicate.empty()) {
      duplicate = parsed.get<std::string>();
    }
    return true;
  };
  Json doc;
  try {
    doc = Json::parse(text, guard);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(ConfigError::Kind::Malformed, "<root>", e.what());
  }
  if (!duplicate.empty()) throw ConfigError(ConfigError::Kind::Malformed, duplicate, "key appears twice in one object");
  return doc;
}

}  // namespace clab
