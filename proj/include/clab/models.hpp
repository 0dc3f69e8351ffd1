#pragma once

// Small trainable networks on top of the autodiff tape: MLP / small conv
// encoders, projection heads, linear classifiers and a minimal VAE.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clab/autodiff.hpp"
#include "clab/datasets.hpp"
#include "clab/rng.hpp"

namespace clab {

using ParamMap = std::map<std::string, Tensor>;
using Bindings = std::map<std::string, Var>;

struct InputShape {
  std::size_t height = 0, width = 0, channels = 0;

  std::size_t flat() const { return height * width * channels; }
  friend bool operator==(const InputShape&, const InputShape&) = default;
};

inline InputShape input_shape(const LabeledDataset& ds) { return {ds.height(), ds.width(), ds.channels()}; }

enum class EncoderKind { Mlp, SmallConv };

struct EncoderConfig {
  EncoderKind kind = EncoderKind::SmallConv;
  /// Hidden layer widths (MLP) or channels of all conv layers but the last (conv).
  std::vector<std::size_t> widths{16, 32};
  /// Output feature dimension; for the conv encoder the last conv layer's channel count.
  std::size_t h_dim = 64;
};

struct ProjectionHeadConfig {
  std::size_t depth = 2;
  std::size_t hidden = 64;
  std::size_t z_dim = 64;
};

/// Records every parameter as a trainable leaf on `tape`.
inline Bindings bind(Tape& tape, ParamMap& params) {
  Bindings out;
  for (auto& [name, t] : params) out.emplace(name, tape.leaf(t));
  return out;
}

inline const Var& param(const Bindings& b, const std::string& name) {
  auto it = b.find(name);
  if (it == b.end()) throw std::out_of_range("missing parameter '" + name + "'");
  return it->second;
}

/// He-scaled Gaussian weights (fan_in x fan_out) and zero bias under `name`.w / `name`.b.
inline void init_linear(ParamMap& params, const std::string& name, std::size_t fan_in, std::size_t fan_out, Rng& rng,
                        double gain = 2.0) {
  Tensor w({fan_in, fan_out});
  const double sd = std::sqrt(gain / static_cast<double>(fan_in));
  for (auto& v : w.values()) v = sd * rng.normal();
  params[name + ".w"] = std::move(w).set_requires_grad(true);
  params[name + ".b"] = Tensor({fan_out}, 0.0).set_requires_grad(true);
}

inline Var linear(const Bindings& b, const std::string& name, const Var& x) {
  return add_bias(matmul(x, param(b, name + ".w")), param(b, name + ".b"));
}

namespace detail {

inline std::vector<ConvGeometry> conv_stack(const EncoderConfig& cfg, const InputShape& in) {
  std::vector<ConvGeometry> geos;
  std::size_t h = in.height, w = in.width, c = in.channels;
  std::vector<std::size_t> channels = cfg.widths;
  channels.push_back(cfg.h_dim);
  for (std::size_t out : channels) {
    ConvGeometry g{h, w, c, 3, 2, 1};
    geos.push_back(g);
    h = g.out_height();
    w = g.out_width();
    c = out;
  }
  return geos;
}

inline std::vector<std::size_t> conv_channels(const EncoderConfig& cfg) {
  std::vector<std::size_t> ch = cfg.widths;
  ch.push_back(cfg.h_dim);
  return ch;
}

}  // namespace detail

inline void validate(const EncoderConfig& cfg, const InputShape& in) {
  if (cfg.h_dim < 2) throw std::invalid_argument("encoder: h_dim must be >= 2");
  if (in.flat() == 0) throw std::invalid_argument("encoder: empty input shape");
  if (cfg.kind == EncoderKind::SmallConv && (in.height < 8 || in.width < 8)) {
    throw std::invalid_argument("encoder: small-conv requires images of at least 8x8");
  }
}

inline ParamMap init_encoder(const EncoderConfig& cfg, const InputShape& in, Rng& rng) {
  validate(cfg, in);
  ParamMap p;
  if (cfg.kind == EncoderKind::Mlp) {
    std::size_t fan_in = in.flat();
    std::size_t i = 0;
    for (std::size_t w : cfg.widths) {
      init_linear(p, "encoder.fc" + std::to_string(i++), fan_in, w, rng);
      fan_in = w;
    }
    init_linear(p, "encoder.fc" + std::to_string(i), fan_in, cfg.h_dim, rng);
  } else {
    const auto geos = detail::conv_stack(cfg, in);
    const auto chans = detail::conv_channels(cfg);
    for (std::size_t i = 0; i < geos.size(); ++i) {
      init_linear(p, "encoder.conv" + std::to_string(i), geos[i].patch_size(), chans[i], rng);
    }
  }
  return p;
}

/// Maps a B x H x W x C image batch to B x h_dim features (post-ReLU; global
/// average pooled for the conv encoder).
inline Var encoder_forward(const EncoderConfig& cfg, const InputShape& in, const Bindings& params, const Var& images) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != in.height || s[2] != in.width || s[3] != in.channels) {
    throw ShapeError("encoder_forward: batch " + shape_str(s) + " does not match input shape");
  }
  const std::size_t batch = s[0];
  if (cfg.kind == EncoderKind::Mlp) {
    Var x = reshape(images, {batch, in.flat()});
    for (std::size_t i = 0; i <= cfg.widths.size(); ++i) x = relu(linear(params, "encoder.fc" + std::to_string(i), x));
    return x;
  }
  const auto geos = detail::conv_stack(cfg, in);
  const auto chans = detail::conv_channels(cfg);
  Var x = images;
  for (std::size_t i = 0; i < geos.size(); ++i) {
    Var y = relu(linear(params, "encoder.conv" + std::to_string(i), im2col(x, geos[i])));
    x = reshape(y, {batch, geos[i].out_height(), geos[i].out_width(), chans[i]});
  }
  const auto& last = geos.back();
  return mean(reshape(x, {batch, last.out_height() * last.out_width(), cfg.h_dim}), 1);
}

inline ParamMap init_projection(const ProjectionHeadConfig& cfg, std::size_t h_dim, Rng& rng) {
  if (cfg.depth < 1) throw std::invalid_argument("projection head: depth must be >= 1");
  ParamMap p;
  std::size_t fan_in = h_dim;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    const std::size_t out = i + 1 == cfg.depth ? cfg.z_dim : cfg.hidden;
    init_linear(p, "head.fc" + std::to_string(i), fan_in, out, rng, i + 1 == cfg.depth ? 1.0 : 2.0);
    fan_in = out;
  }
  return p;
}

/// depth linear layers, ReLU between them, nothing after the last.
inline Var projection_forward(const ProjectionHeadConfig& cfg, const Bindings& params, const Var& h) {
  Var x = h;
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    x = linear(params, "head.fc" + std::to_string(i), x);
    if (i + 1 < cfg.depth) x = relu(x);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Linear classifiers

/// Softmax cross-entropy of a linear head on `features`, averaged over rows.
inline Var supervised_head_loss(const Var& features, const Bindings& params, const std::vector<int>& labels,
                                const std::string& name = "classifier") {
  Var logits = linear(params, name, features);
  const std::size_t m = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != m) throw ShapeError("supervised_head_loss: label count does not match batch");
  Tensor onehot({m, k}, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) throw ShapeError("supervised_head_loss: bad label");
    onehot[i * k + labels[i]] = 1.0;
  }
  Var picked = sum(mul(logits, features.tape().constant(std::move(onehot))));
  return scale(sub(sum(logsumexp(logits, 1)), picked), 1.0 / static_cast<double>(m));
}

/// Linear classifier over features centered and scaled with training statistics.
struct LinearClassifier {
  Tensor weight;               // h x classes
  Tensor bias;                 // classes
  std::vector<double> center;  // per-feature training mean
  double scale = 1.0;

  std::vector<int> predict(const Tensor& features) const {
    const std::size_t m = features.rows(), h = features.cols(), k = bias.size();
    std::vector<int> out(m);
    std::vector<double> logits(k);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t c = 0; c < k; ++c) logits[c] = bias[c];
      for (std::size_t j = 0; j < h; ++j) {
        const double f = (features[i * h + j] - center[j]) / scale;
        for (std::size_t c = 0; c < k; ++c) logits[c] += f * weight[j * k + c];
      }
      out[i] = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
    }
    return out;
  }

  double accuracy(const Tensor& features, const std::vector<int>& labels) const {
    const auto pred = predict(features);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
    return pred.empty() ? 0.0 : static_cast<double>(hit) / pred.size();
  }
};

struct ProbeResult {
  LinearClassifier classifier;
  double accuracy = 0.0;  // on the training features
};

/// Multinomial logistic regression by full-batch gradient descent on frozen
/// features. Features are centered per dimension and divided by the square
/// root of the top eigenvalue of their covariance, so a step size near 1 is stable.
inline ProbeResult linear_probe(const Tensor& features, const std::vector<int>& labels, int classes, int steps,
                                double lr, Rng& rng) {
  if (features.rank() != 2) throw ShapeError("linear_probe: features must be m x h");
  const std::size_t m = features.rows(), h = features.cols();
  if (labels.size() != m) throw ShapeError("linear_probe: label count does not match features");
  if (classes < 2) throw std::invalid_argument("linear_probe: need at least 2 classes");
  if (m < static_cast<std::size_t>(classes)) throw std::invalid_argument("linear_probe: fewer samples than classes");
  for (int l : labels) {
    if (l < 0 || l >= classes) throw std::invalid_argument("linear_probe: label out of range");
  }
  if (std::all_of(labels.begin(), labels.end(), [&](int l) { return l == labels[0]; })) {
    throw std::invalid_argument("linear_probe: labels contain a single class");
  }

  LinearClassifier clf;
  clf.center.assign(h, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < h; ++j) clf.center[j] += features[i * h + j] / static_cast<double>(m);
  Tensor x({m, h});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < h; ++j) x[i * h + j] = features[i * h + j] - clf.center[j];
  // power iteration for the top covariance eigenvalue
  std::vector<double> v(h, 1.0 / std::sqrt(static_cast<double>(h))), xv(m), w(h);
  double top = 0.0;
  for (int it = 0; it < 50; ++it) {
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < h; ++j) acc += x[i * h + j] * v[j];
      xv[i] = acc;
    }
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < h; ++j) w[j] += x[i * h + j] * xv[i] / static_cast<double>(m);
    double norm = 0.0;
    for (double e : w) norm += e * e;
    norm = std::sqrt(norm);
    if (norm == 0.0) break;
    top = norm;
    for (std::size_t j = 0; j < h; ++j) v[j] = w[j] / norm;
  }
  clf.scale = top > 1e-300 ? std::sqrt(top) : 1.0;
  for (auto& e : x.values()) e /= clf.scale;

  const auto k = static_cast<std::size_t>(classes);
  ParamMap params;
  params["probe.w"] = Tensor({h, k});
  for (auto& e : params["probe.w"].values()) e = 1e-3 * rng.normal();
  params["probe.w"].set_requires_grad(true);
  params["probe.b"] = Tensor({k}, 0.0).set_requires_grad(true);
  for (int step = 0; step < steps; ++step) {
    for (auto& [_, t] : params) t.zero_grad();
    Tape tape;
    Bindings b = bind(tape, params);
    tape.backward(supervised_head_loss(tape.constant(x), b, labels, "probe"));
    for (auto& [_, t] : params) {
      for (std::size_t i = 0; i < t.size(); ++i) t[i] -= lr * t.grad()[i];
    }
  }
  clf.weight = params["probe.w"];
  clf.weight.set_requires_grad(false);
  clf.bias = params["probe.b"];
  clf.bias.set_requires_grad(false);
  ProbeResult r;
  r.accuracy = clf.accuracy(features, labels);
  r.classifier = std::move(clf);
  return r;
}

// ---------------------------------------------------------------------------
// VAE control

struct VaeConfig {
  std::size_t latent = 16;
  std::size_t decoder_hidden = 128;
  double beta = 1.0;
};

inline ParamMap init_vae_heads(const VaeConfig& cfg, std::size_t h_dim, const InputShape& in, Rng& rng) {
  ParamMap p;
  init_linear(p, "vae.mu", h_dim, cfg.latent, rng, 1.0);
  init_linear(p, "vae.logvar", h_dim, cfg.latent, rng, 1.0);
  init_linear(p, "vae.dec0", cfg.latent, cfg.decoder_hidden, rng);
  init_linear(p, "vae.dec1", cfg.decoder_hidden, in.flat(), rng, 1.0);
  return p;
}

struct VaeTerms {
  Var loss;   // recon + beta * kl
  Var recon;  // per-example sum of squared errors, averaged over the batch
  Var kl;     // KL(N(mu, sigma^2) || N(0, I)), averaged over the batch
};

/// Reparameterized VAE objective. `noise` (B x latent standard normals) is
/// passed in so callers can freeze it for gradient checks.
inline VaeTerms vae_forward_loss(const EncoderConfig& enc, const VaeConfig& cfg, const InputShape& in,
                                 const Bindings& params, const Var& images, double beta, const Tensor& noise) {
  if (beta < 0.0) throw std::invalid_argument("vae: beta must be >= 0");
  const std::size_t batch = images.shape()[0];
  if (noise.rank() != 2 || noise.rows() != batch || noise.cols() != cfg.latent) {
    throw ShapeError("vae: noise must be batch x latent");
  }
  Tape& tape = images.tape();
  Var h = encoder_forward(enc, in, params, images);
  Var mu = linear(params, "vae.mu", h);
  Var logvar = linear(params, "vae.logvar", h);
  Var z = add(mu, mul(exp(scale(logvar, 0.5)), tape.constant(noise)));
  Var recon_x = linear(params, "vae.dec1", relu(linear(params, "vae.dec0", z)));
  Var target = reshape(images, {batch, in.flat()});
  const double inv_b = 1.0 / static_cast<double>(batch);
  Var recon = scale(sum(square(sub(recon_x, target))), inv_b);
  Var kl_elems = sub(add(square(mu), exp(logvar)), add_scalar(logvar, 1.0));
  Var kl = scale(sum(kl_elems), 0.5 * inv_b);
  return {add(recon, scale(kl, beta)), recon, kl};
}

inline VaeTerms vae_forward_loss(const EncoderConfig& enc, const VaeConfig& cfg, const InputShape& in,
                                 const Bindings& params, const Var& images, double beta, Rng& rng) {
  Tensor noise({images.shape()[0], cfg.latent});
  for (auto& v : noise.values()) v = rng.normal();
  return vae_forward_loss(enc, cfg, in, params, images, beta, noise);
}

// ---------------------------------------------------------------------------
// Checkpoints: magic, u32 version, u64 header length, JSON header, f64 LE payload.

struct ModelCheckpoint {
  nlohmann::json config;  // encoder/head/objective description, opaque here
  ParamMap params;
  std::uint64_t seed = 0;
  std::size_t steps = 0;
  std::vector<double> loss_curve;
};

inline constexpr char kCheckpointMagic[8] = {'C', 'L', 'A', 'B', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string serialize_checkpoint(const ModelCheckpoint& ckpt) {
  nlohmann::json tensors = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : ckpt.params) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}});
    for (double v : t.values()) detail::put_le<double>(payload, v);
  }
  nlohmann::json header = {{"version", kCheckpointVersion}, {"config", ckpt.config},
                           {"seed", ckpt.seed},             {"steps", ckpt.steps},
                           {"loss_curve", ckpt.loss_curve}, {"tensors", tensors}};
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, 8);
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, text.size());
  return out + text + payload;
}

inline ModelCheckpoint deserialize_checkpoint(const std::string& blob) {
  if (blob.size() < 8 || std::memcmp(blob.data(), kCheckpointMagic, 8) != 0) {
    throw FormatError("checkpoint: bad magic");
  }
  std::size_t off = 8;
  const auto version = detail::get_le<std::uint32_t>(blob, off, "checkpoint version");
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto len = detail::get_le<std::uint64_t>(blob, off, "checkpoint header length");
  if (off + len > blob.size()) throw TruncatedFileError("checkpoint: truncated header");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(blob.substr(off, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }
  off += len;
  ModelCheckpoint ckpt;
  ckpt.config = h.at("config");
  ckpt.seed = h.at("seed").get<std::uint64_t>();
  ckpt.steps = h.at("steps").get<std::size_t>();
  ckpt.loss_curve = h.at("loss_curve").get<std::vector<double>>();
  for (const auto& entry : h.at("tensors")) {
    Tensor t(entry.at("shape").get<Shape>());
    for (auto& v : t.values()) v = detail::get_le<double>(blob, off, "checkpoint payload");
    t.set_requires_grad(true);
    ckpt.params.emplace(entry.at("name").get<std::string>(), std::move(t));
  }
  if (off != blob.size()) throw FormatError("checkpoint: trailing bytes after payload");
  return ckpt;
}

inline void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  const std::string blob = serialize_checkpoint(ckpt);
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

inline ModelCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

/// FNV-1a over parameter names and raw values; used to assert probes leave models untouched.
inline std::uint64_t param_hash(const ParamMap& params) {
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& [name, t] : params) {
    feed(name.data(), name.size());
    feed(t.values().data(), t.size() * sizeof(double));
  }
  return h;
}

}  // namespace clab
