#pragma once

// Training loops (contrastive, distribution-only, supervised, VAE), frozen
// feature linear evaluation and projection diagnostics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clab/autodiff.hpp"
#include "clab/config_json.hpp"
#include "clab/datasets.hpp"
#include "clab/losses.hpp"
#include "clab/models.hpp"
#include "clab/optim.hpp"
#include "clab/rng.hpp"

namespace clab {

/// Contrastive: alignment + distribution on two views. Distribution: the
/// distribution term alone. Supervised: softmax head on base labels. Vae: ELBO.
enum class Objective { Contrastive, Distribution, Supervised, Vae };

inline constexpr detail::EnumName<Objective> kObjectiveNames[] = {{Objective::Contrastive, "contrastive"},
                                                                  {Objective::Distribution, "distribution"},
                                                                  {Objective::Supervised, "supervised"},
                                                                  {Objective::Vae, "vae"}};

inline std::string to_string(Objective o) { return detail::enum_to_string(o, kObjectiveNames); }

class TrainingError : public std::runtime_error {
 public:
  TrainingError(std::size_t step, const std::string& what)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": " + what), step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

struct DiagnosticsSettings {
  std::size_t projections = 16;
  std::size_t bins = 30;
  /// Unaugmented images used for snapshot statistics (0 = whole dataset).
  std::size_t samples = 0;
};

struct TrainConfig {
  Objective objective = Objective::Contrastive;
  LossSpec loss = nt_xent_spec(0.2);
  EncoderConfig encoder;
  ProjectionHeadConfig head;
  VaeConfig vae;
  AugmentSpec augment;
  std::size_t batch_size = 64;
  std::size_t epochs = 10;
  /// Optimizer steps per epoch; 0 means dataset size / batch size (at least 1).
  std::size_t steps_per_epoch = 0;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  /// Epochs between projection KS snapshots written to the curve; 0 disables.
  std::size_t snapshot_every = 0;
  DiagnosticsSettings diagnostics;
};

inline void validate(const TrainConfig& cfg, const LabeledDataset& ds) {
  if (ds.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (cfg.batch_size == 0 || cfg.batch_size > ds.size()) {
    throw std::invalid_argument("train: batch size " + std::to_string(cfg.batch_size) + " must be in [1, " +
                                std::to_string(ds.size()) + "]");
  }
  if (!(cfg.optimizer.lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
  if (cfg.epochs == 0) throw std::invalid_argument("train: epochs must be positive");
  if (cfg.objective == Objective::Contrastive) validate(cfg.loss);
  if (cfg.objective == Objective::Supervised && !ds.has(LabelField::Base)) {
    throw std::invalid_argument("train: supervised objective needs base labels");
  }
  cfg.augment.validate();
  validate(cfg.encoder, input_shape(ds));
}

inline std::size_t steps_per_epoch(const TrainConfig& cfg, const LabeledDataset& ds) {
  if (cfg.steps_per_epoch > 0) return cfg.steps_per_epoch;
  return std::max<std::size_t>(1, ds.size() / cfg.batch_size);
}

struct CurveRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  std::optional<double> ks_mean;
};

struct TrainResult {
  ModelCheckpoint checkpoint;
  std::vector<CurveRow> curve;          // one row per optimizer step
  std::vector<double> epoch_loss;       // mean step loss per epoch
  std::vector<double> epoch_accuracy;   // supervised only: batch accuracy per epoch
  double final_loss() const { return epoch_loss.empty() ? std::nan("") : epoch_loss.back(); }
};

// ---------------------------------------------------------------------------
// Diagnostics

struct Histogram {
  std::vector<double> edges;        // bins + 1 edges
  std::vector<std::size_t> counts;  // bins
};

struct DiagnosticsReport {
  std::vector<Histogram> histograms;
  std::vector<double> ks;
  double ks_mean = 0.0;
  std::vector<double> loss_curve;
  double final_loss = std::nan("");
};

/// Kolmogorov-Smirnov distance between the standardized sample and N(0, 1).
inline double ks_statistic_normal(std::vector<double> x) {
  const std::size_t m = x.size();
  if (m == 0) return 0.0;
  const double mu = std::accumulate(x.begin(), x.end(), 0.0) / m;
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  const double sd = std::sqrt(var / m);
  for (double& v : x) v = sd > 0.0 ? (v - mu) / sd : 0.0;
  std::sort(x.begin(), x.end());
  double d = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double cdf = 0.5 * std::erfc(-x[i] / std::sqrt(2.0));
    d = std::max({d, (i + 1.0) / m - cdf, cdf - static_cast<double>(i) / m});
  }
  return std::clamp(d, 0.0, 1.0);
}

inline Histogram histogram(const std::vector<double>& x, std::size_t bins) {
  if (bins == 0) throw std::invalid_argument("histogram: bins must be positive");
  Histogram h;
  double lo = *std::min_element(x.begin(), x.end()), hi = *std::max_element(x.begin(), x.end());
  if (hi <= lo) {
    lo -= 0.5;
    hi += 0.5;
  }
  h.edges.resize(bins + 1);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = lo + (hi - lo) * b / bins;
  h.counts.assign(bins, 0);
  for (double v : x) {
    auto b = static_cast<std::size_t>((v - lo) / (hi - lo) * bins);
    ++h.counts[std::min(b, bins - 1)];
  }
  return h;
}

/// Projects the rows of z (m x d) on `num_projections` random orthonormal
/// directions; histograms each projection and measures its KS distance to a normal.
inline DiagnosticsReport projection_histograms(const Tensor& z, std::size_t num_projections, std::size_t bins,
                                               Rng& rng) {
  if (z.rank() != 2 || z.rows() < 2) throw ShapeError("projection_histograms: need an m x d matrix with m >= 2");
  const std::size_t m = z.rows(), d = z.cols();
  const std::size_t p = std::min(num_projections, d);
  if (p == 0) throw std::invalid_argument("projection_histograms: need at least one projection");
  const Tensor w = random_orthogonal(d, p, rng);
  DiagnosticsReport r;
  std::vector<double> proj(m);
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      for (std::size_t k = 0; k < d; ++k) acc += z[i * d + k] * w[k * p + j];
      proj[i] = acc;
    }
    r.histograms.push_back(histogram(proj, bins));
    r.ks.push_back(ks_statistic_normal(proj));
  }
  r.ks_mean = std::accumulate(r.ks.begin(), r.ks.end(), 0.0) / static_cast<double>(p);
  return r;
}

// ---------------------------------------------------------------------------
// Feature extraction

inline Json checkpoint_config(const TrainConfig& cfg, const InputShape& in, int classes) {
  return {{"objective", to_string(cfg.objective)}, {"encoder", to_json(cfg.encoder)}, {"head", to_json(cfg.head)},
          {"vae", to_json(cfg.vae)},               {"input", to_json(in)},          {"classes", classes}};
}

inline EncoderConfig checkpoint_encoder(const ModelCheckpoint& ckpt) {
  StrictReader r(ckpt.config.at("encoder"), "encoder");
  return encoder_from_json(r);
}

namespace detail {

template <typename Forward>
Tensor batched_forward(const LabeledDataset& ds, const std::vector<std::size_t>& indices, std::size_t chunk,
                       Forward forward) {
  Tensor out;
  std::size_t cols = 0;
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const std::size_t end = std::min(indices.size(), start + chunk);
    std::vector<std::size_t> part(indices.begin() + start, indices.begin() + end);
    Tape tape;
    Var y = forward(tape, tape.constant(stack_images(ds, part)));
    if (start == 0) {
      cols = y.shape()[1];
      out = Tensor({indices.size(), cols});
    }
    std::copy(y.value().values().begin(), y.value().values().end(), out.values().begin() + start * cols);
  }
  return out;
}

inline std::vector<std::size_t> first_indices(const LabeledDataset& ds, std::size_t limit) {
  std::vector<std::size_t> idx(limit == 0 ? ds.size() : std::min(limit, ds.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace detail

/// Frozen encoder features (m x h) of unaugmented images.
inline Tensor extract_features(const EncoderConfig& enc, const InputShape& in, ParamMap params,
                               const LabeledDataset& ds, std::size_t limit = 0) {
  return detail::batched_forward(ds, detail::first_indices(ds, limit), 256, [&](Tape& tape, const Var& x) {
    Bindings b;
    for (auto& [name, t] : params) b.emplace(name, tape.constant(t));
    return encoder_forward(enc, in, b, x);
  });
}

/// Projection-head outputs of unaugmented images, rows normalized when
/// `normalize` is set.
inline Tensor extract_outputs(const TrainConfig& cfg, const InputShape& in, ParamMap params, const LabeledDataset& ds,
                              bool normalize, std::size_t limit = 0) {
  return detail::batched_forward(ds, detail::first_indices(ds, limit), 256, [&](Tape& tape, const Var& x) {
    Bindings b;
    for (auto& [name, t] : params) b.emplace(name, tape.constant(t));
    Var z = projection_forward(cfg.head, b, encoder_forward(cfg.encoder, in, b, x));
    return normalize ? l2_normalize_rows(z) : z;
  });
}

inline bool normalized_outputs(const TrainConfig& cfg) {
  return cfg.objective == Objective::Contrastive || cfg.objective == Objective::Distribution
             ? is_normalized(cfg.loss.alignment)
             : false;
}

/// Projection diagnostics of a model's outputs on the first images of ds.
inline DiagnosticsReport output_diagnostics(const TrainConfig& cfg, const ParamMap& params, const LabeledDataset& ds,
                                            std::uint64_t seed) {
  const Tensor z = extract_outputs(cfg, input_shape(ds), params, ds, normalized_outputs(cfg), cfg.diagnostics.samples);
  Rng rng(seed);
  return projection_histograms(z, cfg.diagnostics.projections, cfg.diagnostics.bins, rng);
}

// ---------------------------------------------------------------------------
// Training

namespace detail {

/// Mean softmax cross-entropy of logits (m x k) against integer labels.
inline Var softmax_cross_entropy(const Var& logits, const std::vector<int>& labels) {
  const std::size_t m = logits.shape()[0], k = logits.shape()[1];
  Tensor onehot({m, k}, 0.0);
  for (std::size_t i = 0; i < m; ++i) onehot[i * k + labels[i]] = 1.0;
  Var picked = sum(mul(logits, logits.tape().constant(std::move(onehot))));
  return scale(sub(sum(logsumexp(logits, 1)), picked), 1.0 / static_cast<double>(m));
}

inline double argmax_hits(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t m = logits.rows(), k = logits.cols();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = logits.values().subspan(i * k, k);
    hits += std::max_element(row.begin(), row.end()) - row.begin() == labels[i];
  }
  return static_cast<double>(hits);
}

struct StepOutput {
  Var loss;
  double hits = 0.0;
};

}  // namespace detail

/// Builds the parameter set for cfg.objective on ds.
inline ParamMap init_model(const TrainConfig& cfg, const LabeledDataset& ds, Rng& rng) {
  const InputShape in = input_shape(ds);
  ParamMap params = init_encoder(cfg.encoder, in, rng);
  ParamMap extra;
  switch (cfg.objective) {
    case Objective::Contrastive:
    case Objective::Distribution:
      extra = init_projection(cfg.head, cfg.encoder.h_dim, rng);
      break;
    case Objective::Supervised:
      init_linear(extra, "classifier", cfg.encoder.h_dim, static_cast<std::size_t>(num_classes(ds.base_label)), rng,
                  1.0);
      break;
    case Objective::Vae:
      extra = init_vae_heads(cfg.vae, cfg.encoder.h_dim, in, rng);
      break;
  }
  params.merge(extra);
  return params;
}

/// One forward pass of the training objective on a batch drawn with `rng`.
inline detail::StepOutput objective_step(const TrainConfig& cfg, const LabeledDataset& ds, Tape& tape,
                                         const Bindings& b, Rng& batch_rng, Rng& loss_rng) {
  const InputShape in = input_shape(ds);
  detail::StepOutput out;
  switch (cfg.objective) {
    case Objective::Contrastive:
    case Objective::Distribution: {
      const TwoViewBatch batch = two_view_batch(ds, cfg.batch_size, cfg.augment, batch_rng);
      Var z = projection_forward(cfg.head, b, encoder_forward(cfg.encoder, in, b, tape.constant(batch.views)));
      const PairedBatch pb(z);
      out.loss = cfg.objective == Objective::Contrastive ? generalized_loss(cfg.loss, pb, loss_rng)
                                                         : distribution_term(cfg.loss, pb, loss_rng);
      break;
    }
    case Objective::Supervised: {
      const auto idx = sample_without_replacement(ds.size(), cfg.batch_size, batch_rng);
      Tensor views({cfg.batch_size, in.height, in.width, in.channels});
      std::vector<int> labels(cfg.batch_size);
      const std::size_t px = in.flat();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const Image v = augment(ds.images[idx[i]], cfg.augment, ds.bit_channels, batch_rng);
        std::copy(v.pixels.begin(), v.pixels.end(), views.values().begin() + i * px);
        labels[i] = ds.base_label[idx[i]];
      }
      Var logits = linear(b, "classifier", encoder_forward(cfg.encoder, in, b, tape.constant(std::move(views))));
      out.loss = detail::softmax_cross_entropy(logits, labels);
      out.hits = detail::argmax_hits(logits.value(), labels);
      break;
    }
    case Objective::Vae: {
      const auto idx = sample_without_replacement(ds.size(), cfg.batch_size, batch_rng);
      out.loss = vae_forward_loss(cfg.encoder, cfg.vae, in, b, tape.constant(stack_images(ds, idx)), cfg.vae.beta,
                                  loss_rng)
                     .loss;
      break;
    }
  }
  return out;
}

/// Runs cfg.epochs epochs of cfg.objective on ds. Deterministic in cfg.seed;
/// a non-finite loss aborts with TrainingError naming the step.
inline TrainResult train(const TrainConfig& cfg, const LabeledDataset& ds) {
  validate(cfg, ds);
  const InputShape in = input_shape(ds);
  Rng init_rng(derive_seed(cfg.seed, 0));
  ParamMap params = init_model(cfg, ds, init_rng);
  OptimizerState opt;
  TrainResult result;
  const std::size_t spe = steps_per_epoch(cfg, ds);
  std::size_t step = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double total = 0.0, hits = 0.0;
    for (std::size_t s = 0; s < spe; ++s, ++step) {
      Rng batch_rng(derive_seed(cfg.seed, 1, step));
      Rng loss_rng(derive_seed(cfg.seed, 2, step));
      zero_grads(params);
      double value = 0.0;
      try {
        Tape tape;
        Bindings b = bind(tape, params);
        const auto out = objective_step(cfg, ds, tape, b, batch_rng, loss_rng);
        value = out.loss.value().item();
        if (!std::isfinite(value)) throw NumericError("loss is not finite");
        tape.backward(out.loss);
        hits += out.hits;
      } catch (const NumericError& e) {
        throw TrainingError(step, e.what());
      }
      optimizer_step(cfg.optimizer, opt, params);
      total += value;
      result.curve.push_back({step, epoch, value, std::nullopt});
    }
    result.epoch_loss.push_back(total / static_cast<double>(spe));
    if (cfg.objective == Objective::Supervised) {
      result.epoch_accuracy.push_back(hits / static_cast<double>(spe * cfg.batch_size));
    }
    if (cfg.snapshot_every > 0 && epoch % cfg.snapshot_every == 0 &&
        (cfg.objective == Objective::Contrastive || cfg.objective == Objective::Distribution)) {
      result.curve.back().ks_mean = output_diagnostics(cfg, params, ds, derive_seed(cfg.seed, 3, epoch)).ks_mean;
    }
  }
  const int classes = ds.has(LabelField::Base) ? num_classes(ds.base_label) : 0;
  result.checkpoint.config = checkpoint_config(cfg, in, classes);
  result.checkpoint.params = std::move(params);
  result.checkpoint.seed = cfg.seed;
  result.checkpoint.steps = step;
  result.checkpoint.loss_curve = result.epoch_loss;
  return result;
}

inline TrainResult train_contrastive(TrainConfig cfg, const LabeledDataset& ds) {
  cfg.objective = Objective::Contrastive;
  return train(cfg, ds);
}

/// Single augmented view per image; epoch_accuracy holds the training accuracy curve.
inline TrainResult train_supervised(TrainConfig cfg, const LabeledDataset& ds) {
  cfg.objective = Objective::Supervised;
  return train(cfg, ds);
}

/// Unaugmented single view per image.
inline TrainResult train_vae(TrainConfig cfg, const LabeledDataset& ds) {
  cfg.objective = Objective::Vae;
  return train(cfg, ds);
}

// ---------------------------------------------------------------------------
// Linear evaluation

struct ProbeSettings {
  int steps = 300;
  double lr = 1.0;
  std::uint64_t seed = 0;
};

/// Independent logistic regressions (one per bit) trained jointly by
/// full-batch gradient descent; returns the per-bit classifiers' mean accuracy
/// on the test features.
inline double bit_probe_accuracy(const Tensor& train_x, const std::vector<std::uint32_t>& train_y,
                                 const Tensor& test_x, const std::vector<std::uint32_t>& test_y, std::size_t bits,
                                 const ProbeSettings& s) {
  using Mat = Eigen::MatrixXd;
  const auto load = [](const Tensor& t) {
    Mat m(t.rows(), t.cols());
    for (std::size_t i = 0; i < t.rows(); ++i)
      for (std::size_t j = 0; j < t.cols(); ++j) m(i, j) = t[i * t.cols() + j];
    return m;
  };
  const auto targets = [bits](const std::vector<std::uint32_t>& y) {
    Mat m(y.size(), bits);
    for (std::size_t i = 0; i < y.size(); ++i)
      for (std::size_t t = 0; t < bits; ++t) m(i, t) = (y[i] >> t) & 1u;
    return m;
  };
  Mat x = load(train_x), xt = load(test_x);
  const Eigen::RowVectorXd mu = x.colwise().mean();
  x.rowwise() -= mu;
  xt.rowwise() -= mu;
  const Mat cov = (x.transpose() * x) / static_cast<double>(x.rows());
  const double top = Eigen::SelfAdjointEigenSolver<Mat>(cov, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
  const double sc = top > 1e-300 ? std::sqrt(top) : 1.0;
  x /= sc;
  xt /= sc;
  const Mat y = targets(train_y), yt = targets(test_y);
  Mat w = Mat::Zero(x.cols(), bits);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(bits);
  const double m = static_cast<double>(x.rows());
  for (int step = 0; step < s.steps; ++step) {
    Mat p = (x * w).rowwise() + b;
    p = p.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); }) - y;
    w -= s.lr * 4.0 * (x.transpose() * p) / m;
    b -= s.lr * 4.0 * p.colwise().sum() / m;
  }
  const Mat logits = (xt * w).rowwise() + b;
  double hits = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i)
    for (Eigen::Index t = 0; t < logits.cols(); ++t) hits += (logits(i, t) > 0.0) == (yt(i, t) > 0.5);
  return hits / static_cast<double>(logits.size());
}

/// Probes frozen features of unaugmented images: seeded 80/20 train/test
/// split, probe trained on the 80%, accuracy reported on the 20%. For the bit
/// field the accuracy is the mean over per-bit binary probes.
inline double linear_evaluate(const ModelCheckpoint& ckpt, const LabeledDataset& ds, LabelField field,
                              const ProbeSettings& settings = {}) {
  if (!ds.has(field)) throw DatasetError(std::string("linear_evaluate: dataset has no '") + to_string(field) + "' labels");
  if (ds.size() < 5) throw DatasetError("linear_evaluate: need at least 5 images for an 80/20 split");
  const EncoderConfig enc = checkpoint_encoder(ckpt);
  const InputShape in = input_shape_from_json(ckpt.config.at("input"));
  if (!(in == input_shape(ds))) throw ShapeError("linear_evaluate: dataset shape does not match the checkpoint");
  const Tensor feats = extract_features(enc, in, ckpt.params, ds);

  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng split_rng(derive_seed(settings.seed, 0x5e1));
  std::shuffle(order.begin(), order.end(), split_rng.engine());
  const std::size_t n_train = ds.size() * 4 / 5;
  const std::size_t h = feats.cols();
  auto take = [&](std::size_t from, std::size_t to) {
    Tensor t({to - from, h});
    for (std::size_t i = from; i < to; ++i)
      std::copy_n(feats.values().begin() + order[i] * h, h, t.values().begin() + (i - from) * h);
    return t;
  };
  const Tensor train_x = take(0, n_train), test_x = take(n_train, ds.size());

  if (field == LabelField::Bit) {
    std::vector<std::uint32_t> ytr, yte;
    for (std::size_t i = 0; i < ds.size(); ++i) (i < n_train ? ytr : yte).push_back((*ds.bit_label)[order[i]]);
    return bit_probe_accuracy(train_x, ytr, test_x, yte, ds.bit_channels, settings);
  }
  const auto labels = ds.labels(field);
  std::vector<int> ytr, yte;
  for (std::size_t i = 0; i < ds.size(); ++i) (i < n_train ? ytr : yte).push_back(labels[order[i]]);
  Rng probe_rng(derive_seed(settings.seed, 0x9b0));
  const auto probe = linear_probe(train_x, ytr, num_classes(labels), settings.steps, settings.lr, probe_rng);
  return probe.classifier.accuracy(test_x, yte);
}

// ---------------------------------------------------------------------------
// Saturation

struct SaturationResult {
  double initial_loss = 0.0;  // distribution term at initialization
  double final_loss = 0.0;    // distribution term after training
  TrainResult training;
};

/// Mean distribution term over `batches` fixed-seed unaugmented batches.
inline double evaluate_distribution_term(const TrainConfig& cfg, const ParamMap& params, const LabeledDataset& ds,
                                         std::size_t batches) {
  const InputShape in = input_shape(ds);
  ParamMap copy = params;
  double total = 0.0;
  for (std::size_t i = 0; i < batches; ++i) {
    Rng batch_rng(derive_seed(cfg.seed, 4, i)), loss_rng(derive_seed(cfg.seed, 5, i));
    Tape tape;
    Bindings b;
    for (auto& [name, t] : copy) b.emplace(name, tape.constant(t));
    const TwoViewBatch batch = two_view_batch(ds, cfg.batch_size, AugmentSpec::identity(), batch_rng);
    Var z = projection_forward(cfg.head, b, encoder_forward(cfg.encoder, in, b, tape.constant(batch.views)));
    total += distribution_term(cfg.loss, PairedBatch(z), loss_rng).value().item();
  }
  return total / static_cast<double>(batches);
}

/// Trains on the k-bit entropy dataset (bits centered to -1/+1) with only the
/// distribution term and no augmentation; reports the term on fixed evaluation batches before and after.
inline SaturationResult saturation_run(int k, std::size_t dataset_size, std::size_t hw, TrainConfig cfg,
                                       std::size_t eval_batches = 16) {
  if (k < 1) throw std::invalid_argument("saturation_run: k must be >= 1");
  cfg.objective = Objective::Distribution;
  cfg.augment = AugmentSpec::identity();
  Rng data_rng(derive_seed(cfg.seed, 6, static_cast<std::uint64_t>(k)));
  LabeledDataset ds = make_entropy_dataset(k, dataset_size, hw, data_rng);
  // Bits enter the network as -1/+1: with zero biases the all-zero image (u = 0)
  // would otherwise map to a zero output row that cannot be normalized.
  for (auto& img : ds.images)
    for (auto& v : img.pixels) v = 2.0 * v - 1.0;
  validate(cfg, ds);
  Rng init_rng(derive_seed(cfg.seed, 0));
  const ParamMap init = init_model(cfg, ds, init_rng);
  SaturationResult r;
  r.initial_loss = evaluate_distribution_term(cfg, init, ds, eval_batches);
  r.training = train(cfg, ds);
  r.final_loss = evaluate_distribution_term(cfg, r.training.checkpoint.params, ds, eval_batches);
  return r;
}

}  // namespace clab
