#pragma once

// Generalized contrastive loss family: alignment + lambda * distribution.
//
// All batch losses operate on a PairedBatch, a 2n x d matrix whose rows 2m and
// 2m+1 are the two augmented views of example m. Sums over "pairs" run over
// all 2n ordered (anchor, positive) pairs and are normalized by 1/n.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "clab/autodiff.hpp"
#include "clab/rng.hpp"

namespace clab {

/// Invalid loss hyperparameter or inconsistent loss specification.
class LossConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class PriorKind { UniformHypersphere, UniformHypercube, StandardNormal };

struct PriorSpec {
  PriorKind kind = PriorKind::UniformHypersphere;
  /// Sample dimension; 0 means "match the batch" when used inside a LossSpec.
  std::size_t dim = 0;
};

enum class Alignment { NegativeCosine, MseNormalized, MseUnnormalized };

struct LogSumExpTerm {
  double tau = 0.2;
};

struct SwdTerm {
  PriorSpec prior;
  /// Number of projection directions d'; 0 means d' = d.
  std::size_t proj_dim = 0;
};

/// One instantiation of alignment + lambda * distribution, times a global scale.
struct LossSpec {
  Alignment alignment = Alignment::NegativeCosine;
  std::variant<LogSumExpTerm, SwdTerm> distribution = LogSumExpTerm{};
  double lambda = 1.0;
  double scale = 1.0;
};

/// Two-view batch wrapper; validates the interleaved layout.
class PairedBatch {
 public:
  explicit PairedBatch(Var z) : z_(z) {
    if (z.shape().size() != 2) throw ShapeError("PairedBatch: expected a 2-D tensor, got " + shape_str(z.shape()));
    if (z.shape()[0] < 2 || z.shape()[0] % 2 != 0) {
      throw ShapeError("PairedBatch: row count must be even and >= 2, got " + std::to_string(z.shape()[0]));
    }
  }

  const Var& z() const { return z_; }
  std::size_t pairs() const { return z_.shape()[0] / 2; }
  std::size_t rows() const { return z_.shape()[0]; }
  std::size_t dim() const { return z_.shape()[1]; }

  /// Row index of the other view of row i.
  static std::size_t partner(std::size_t i) { return i ^ std::size_t{1}; }

  std::vector<std::size_t> partner_index() const {
    std::vector<std::size_t> idx(rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = partner(i);
    return idx;
  }

 private:
  Var z_;
};

namespace detail {

inline void require_nonzero_rows(const Var& z, const char* op) {
  const Tensor& v = z.value();
  const std::size_t m = v.rows(), d = v.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) ss += v[i * d + j] * v[i * d + j];
    if (!(std::sqrt(ss) > 1e-12)) {
      throw NumericError(std::string(op) + ": row " + std::to_string(i) + " has zero norm");
    }
  }
}

inline void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw LossConfigError(std::string(name) + " must be a positive finite number, got " + std::to_string(v));
  }
}

/// Cosine similarity of each row with its partner row, as a length-2n vector.
inline Var positive_similarities(const PairedBatch& batch) {
  Var nz = l2_normalize_rows(batch.z());
  return sum(mul(nz, gather_rows(nz, batch.partner_index())), 1);
}

/// Per-row log sum_{k != i} exp(sim(z_i, z_k) / width), length 2n.
inline Var row_logsumexp(const Var& sim, double width) {
  return logsumexp(remove_diagonal(scale(sim, 1.0 / width)), 1);
}

}  // namespace detail

/// Matrix of pairwise cosine similarities of the rows of z.
inline Var cosine_similarity_matrix(const Var& z) {
  detail::require_rank(z, 2, "cosine_similarity_matrix");
  detail::require_nonzero_rows(z, "cosine_similarity_matrix");
  Var nz = l2_normalize_rows(z);
  return matmul(nz, transpose(nz));
}

/// Cross-entropy contrastive loss over cosine similarities at temperature tau.
inline Var nt_xent(const PairedBatch& batch, double tau) {
  detail::require_positive(tau, "tau");
  Var sim = cosine_similarity_matrix(batch.z());
  Var lse = detail::row_logsumexp(sim, tau);
  Var pos = scale(detail::positive_similarities(batch), 1.0 / tau);
  return scale(sum(sub(lse, pos)), 1.0 / static_cast<double>(batch.pairs()));
}

inline Var alignment_loss(const PairedBatch& batch, Alignment kind) {
  const double n = static_cast<double>(batch.pairs());
  const double d = static_cast<double>(batch.dim());
  switch (kind) {
    case Alignment::NegativeCosine:
      detail::require_nonzero_rows(batch.z(), "alignment_loss");
      return scale(sum(detail::positive_similarities(batch)), -1.0 / n);
    case Alignment::MseNormalized: {
      detail::require_nonzero_rows(batch.z(), "alignment_loss");
      Var nz = l2_normalize_rows(batch.z());
      return scale(sum(square(sub(nz, gather_rows(nz, batch.partner_index())))), 1.0 / (n * d));
    }
    case Alignment::MseUnnormalized: {
      Var z = batch.z();
      return scale(sum(square(sub(z, gather_rows(z, batch.partner_index())))), 1.0 / (n * d));
    }
  }
  throw LossConfigError("alignment_loss: unknown kind");
}

/// (coefficient / n) * sum_i log sum_{k != i} exp(sim(z_i, z_k) / width).
inline Var logsumexp_distribution(const PairedBatch& batch, double coefficient, double width) {
  detail::require_positive(coefficient, "tau");
  detail::require_positive(width, "width");
  Var lse = detail::row_logsumexp(cosine_similarity_matrix(batch.z()), width);
  return scale(sum(lse), coefficient / static_cast<double>(batch.pairs()));
}

/// Negative-cosine alignment plus lambda-weighted LogSumExp term at width tau.
inline Var decoupled_nt_xent(const PairedBatch& batch, double tau, double lambda) {
  detail::require_positive(tau, "tau");
  detail::require_positive(lambda, "lambda");
  return add(alignment_loss(batch, Alignment::NegativeCosine), logsumexp_distribution(batch, lambda, tau));
}

// ---------------------------------------------------------------------------
// Priors and sliced Wasserstein distance

inline Tensor sample_prior(const PriorSpec& prior, std::size_t b, Rng& rng) {
  if (b == 0) throw ShapeError("sample_prior: need at least one row");
  if (prior.dim == 0) throw ShapeError("sample_prior: prior dimension must be positive");
  const std::size_t d = prior.dim;
  Tensor out({b, d});
  switch (prior.kind) {
    case PriorKind::UniformHypersphere:
      for (std::size_t i = 0; i < b; ++i) {
        double ss = 0.0;
        do {
          ss = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            out[i * d + j] = rng.normal();
            ss += out[i * d + j] * out[i * d + j];
          }
        } while (ss == 0.0);
        const double norm = std::sqrt(ss);
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] /= norm;
      }
      break;
    case PriorKind::UniformHypercube:
      for (auto& v : out.values()) v = rng.uniform(-1.0, 1.0);
      break;
    case PriorKind::StandardNormal:
      for (auto& v : out.values()) v = rng.normal();
      break;
  }
  return out;
}

/// d x d' matrix with orthonormal columns, drawn from the rotation-invariant
/// distribution: QR of a Gaussian matrix with diag(R) made positive.
inline Tensor random_orthogonal(std::size_t d, std::size_t d_proj, Rng& rng) {
  if (d_proj == 0 || d_proj > d) {
    throw ShapeError("random_orthogonal: need 1 <= d' <= d, got d=" + std::to_string(d) +
                     " d'=" + std::to_string(d_proj));
  }
  Eigen::MatrixXd g(d, d_proj);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d_proj; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, d_proj);
  const Eigen::MatrixXd& r = qr.matrixQR();
  Tensor out({d, d_proj});
  for (std::size_t j = 0; j < d_proj; ++j) {
    const double sign = r(j, j) < 0.0 ? -1.0 : 1.0;
    for (std::size_t i = 0; i < d; ++i) out[i * d_proj + j] = sign * q(i, j);
  }
  return out;
}

/// Test hook: fixes the prior sample and/or projection used by swd_loss.
struct SwdOverrides {
  std::optional<Tensor> prior_sample;
  std::optional<Tensor> projection;
};

/// Sliced Wasserstein distance between the rows of h and a fresh prior sample:
/// sum over d' random orthogonal directions of the squared distance between
/// sorted projections, divided by d * d'.
inline Var swd_loss(const Var& h, const PriorSpec& prior, std::size_t d_proj, Rng& rng,
                    const SwdOverrides& overrides = {}) {
  detail::require_rank(h, 2, "swd_loss");
  const std::size_t b = h.shape()[0], d = h.shape()[1];
  if (prior.dim != d) {
    throw ShapeError("swd_loss: prior dimension " + std::to_string(prior.dim) + " does not match batch dimension " +
                     std::to_string(d));
  }
  Tensor p = overrides.prior_sample ? *overrides.prior_sample : sample_prior(prior, b, rng);
  if (p.shape() != h.shape()) {
    throw ShapeError("swd_loss: prior sample " + shape_str(p.shape()) + " vs batch " + shape_str(h.shape()));
  }
  Tensor w = overrides.projection ? *overrides.projection : random_orthogonal(d, d_proj, rng);
  if (w.rank() != 2 || w.rows() != d || w.cols() != d_proj) {
    throw ShapeError("swd_loss: projection " + shape_str(w.shape()) + " is not d x d'");
  }
  Tape& tape = h.tape();
  Var wv = tape.constant(std::move(w));
  Var h_proj = matmul(h, wv);
  Var p_proj = matmul(tape.constant(std::move(p)), wv);
  Var diff = sub(sort_columns(h_proj).sorted, sort_columns(p_proj).sorted);
  return scale(sum(square(diff)), 1.0 / static_cast<double>(d * d_proj));
}

// ---------------------------------------------------------------------------
// Generalized loss

inline bool is_normalized(Alignment a) { return a != Alignment::MseUnnormalized; }

/// Throws LossConfigError unless the spec pairs a normalized alignment with a
/// hypersphere geometry (or an unnormalized one with hypercube/normal).
inline void validate(const LossSpec& spec) {
  detail::require_positive(spec.lambda, "lambda");
  detail::require_positive(spec.scale, "scale");
  if (const auto* lse = std::get_if<LogSumExpTerm>(&spec.distribution)) {
    detail::require_positive(lse->tau, "tau");
    if (!is_normalized(spec.alignment)) {
      throw LossConfigError("LogSumExp distribution term requires a normalized alignment term");
    }
  } else {
    const auto& swd = std::get<SwdTerm>(spec.distribution);
    const bool sphere = swd.prior.kind == PriorKind::UniformHypersphere;
    if (sphere != is_normalized(spec.alignment)) {
      throw LossConfigError(sphere ? "hypersphere prior requires a normalized alignment term"
                                   : "hypercube/normal priors require the unnormalized alignment term");
    }
  }
}

/// The distribution-matching term of `spec` alone (unweighted, unscaled).
inline Var distribution_term(const LossSpec& spec, const PairedBatch& batch, Rng& rng,
                             const SwdOverrides& overrides = {}) {
  if (const auto* lse = std::get_if<LogSumExpTerm>(&spec.distribution)) {
    return logsumexp_distribution(batch, 1.0, lse->tau);
  }
  const auto& swd = std::get<SwdTerm>(spec.distribution);
  PriorSpec prior = swd.prior;
  if (prior.dim == 0) prior.dim = batch.dim();
  const std::size_t d_proj = swd.proj_dim == 0 ? batch.dim() : swd.proj_dim;
  Var h = prior.kind == PriorKind::UniformHypersphere ? l2_normalize_rows(batch.z()) : batch.z();
  return swd_loss(h, prior, d_proj, rng, overrides);
}

/// scale * (alignment + lambda * distribution) on a paired batch.
inline Var generalized_loss(const LossSpec& spec, const PairedBatch& batch, Rng& rng,
                            const SwdOverrides& overrides = {}) {
  validate(spec);
  Var align = alignment_loss(batch, spec.alignment);
  Var dist = distribution_term(spec, batch, rng, overrides);
  return scale(add(align, scale(dist, spec.lambda)), spec.scale);
}

/// Eq.-2-style NT-Xent written as a LossSpec: (1/tau)(alignment + tau * LogSumExp).
inline LossSpec nt_xent_spec(double tau) {
  return LossSpec{Alignment::NegativeCosine, LogSumExpTerm{tau}, tau, 1.0 / tau};
}

}  // namespace clab
