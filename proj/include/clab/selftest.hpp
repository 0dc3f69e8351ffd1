#pragma once

// Fast invariant suites runnable from the command line: loss identities,
// transport oracle, gradients, diagnostics null behaviour, determinism and
// config round trips.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <tuple>
#include <vector>

#include "clab/experiment_config.hpp"
#include "clab/losses.hpp"
#include "clab/train.hpp"

namespace clab {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

namespace selftest {

inline std::string fmt_sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

inline Tensor gaussian(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t({rows, cols});
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

inline double value_of(const std::function<Var(const PairedBatch&)>& f, const Tensor& z) {
  Tape tape;
  return f(PairedBatch(tape.constant(z))).item();
}

/// The 27 (pairs, dim, tau) combinations used by the identity suites.
inline std::vector<std::tuple<std::size_t, std::size_t, double>> identity_grid() {
  std::vector<std::tuple<std::size_t, std::size_t, double>> grid;
  for (std::size_t n : {2, 5, 16})
    for (std::size_t d : {2, 8, 32})
      for (double tau : {0.1, 0.5, 2.0}) grid.emplace_back(n, d, tau);
  return grid;
}

/// Largest |tau * nt_xent - (negcos alignment + LogSumExp(coef tau, width tau))| over the grid.
inline double decomposition_error(std::uint64_t seed) {
  double worst = 0.0;
  std::uint64_t i = 0;
  for (auto [n, d, tau] : identity_grid()) {
    Rng rng(derive_seed(seed, i++));
    const Tensor z = gaussian(2 * n, d, rng);
    const double lhs = tau * value_of([&](const PairedBatch& b) { return nt_xent(b, tau); }, z);
    const double rhs = value_of(
        [&](const PairedBatch& b) {
          return add(alignment_loss(b, Alignment::NegativeCosine), logsumexp_distribution(b, tau, tau));
        },
        z);
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  return worst;
}

/// Largest |decoupled(tau, lambda = tau) - tau * nt_xent| over the grid.
inline double reduction_error(std::uint64_t seed) {
  double worst = 0.0;
  std::uint64_t i = 0;
  for (auto [n, d, tau] : identity_grid()) {
    Rng rng(derive_seed(seed, 1000 + i++));
    const Tensor z = gaussian(2 * n, d, rng);
    const double lhs = value_of([&](const PairedBatch& b) { return decoupled_nt_xent(b, tau, tau); }, z);
    const double rhs = tau * value_of([&](const PairedBatch& b) { return nt_xent(b, tau); }, z);
    worst = std::max(worst, std::abs(lhs - rhs));
  }
  return worst;
}

/// Minimum over all matchings of the summed squared differences, accumulated
/// in ascending order of x.
inline double matching_min(std::vector<double> x, const std::vector<double>& y) {
  std::sort(x.begin(), x.end());
  std::vector<std::size_t> perm(x.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best = std::numeric_limits<double>::infinity();
  do {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += (x[i] - y[perm[i]]) * (x[i] - y[perm[i]]);
    best = std::min(best, acc);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Number of batch sizes in [2, max_b] whose one-dimensional SWD differs from
/// the brute-force optimal matching (exact comparison).
inline std::size_t swd_oracle_mismatches(std::size_t max_b, std::uint64_t seed) {
  std::size_t bad = 0;
  for (std::size_t b = 2; b <= max_b; ++b) {
    Rng rng(derive_seed(seed, b));
    const Tensor h = gaussian(b, 1, rng), p = gaussian(b, 1, rng);
    SwdOverrides o;
    o.prior_sample = p;
    o.projection = Tensor({1, 1}, 1.0);
    Tape tape;
    const double swd = swd_loss(tape.constant(h), {PriorKind::StandardNormal, 1}, 1, rng, o).item();
    bad += swd != matching_min(h.buffer(), p.buffer());
  }
  return bad;
}

/// Pushes every coordinate away from zero so ReLU kinks and sort ties are not
/// within finite-difference reach.
inline Tensor non_degenerate(Tensor t) {
  for (auto& v : t.values()) v = v >= 0 ? v + 0.1 : v - 0.1;
  return t;
}

struct GradientCase {
  std::string name;
  std::function<Var(Tape&, const Var&)> fn;
  std::size_t rows, cols;
};

/// Loss functions of a paired batch (2 * pairs x dim) with all randomness frozen.
inline std::vector<GradientCase> loss_gradient_cases(std::uint64_t seed) {
  const std::size_t pairs = 3, d = 4, b = 2 * pairs;
  Rng rng(seed);
  const Tensor sphere = sample_prior({PriorKind::UniformHypersphere, d}, b, rng);
  const Tensor cube = sample_prior({PriorKind::UniformHypercube, d}, b, rng);
  const Tensor normal = sample_prior({PriorKind::StandardNormal, d}, b, rng);
  const Tensor proj = random_orthogonal(d, d, rng);
  auto spec_case = [&](std::string name, LossSpec spec, Tensor prior) {
    return GradientCase{std::move(name),
                        [spec, prior, proj](Tape&, const Var& z) {
                          Rng unused(0);
                          SwdOverrides o;
                          o.prior_sample = prior;
                          o.projection = proj;
                          return generalized_loss(spec, PairedBatch(z), unused, o);
                        },
                        b, d};
  };
  std::vector<GradientCase> cases;
  cases.push_back({"nt-xent", [](Tape&, const Var& z) { return nt_xent(PairedBatch(z), 0.5); }, b, d});
  cases.push_back(
      {"decoupled", [](Tape&, const Var& z) { return decoupled_nt_xent(PairedBatch(z), 0.5, 0.3); }, b, d});
  cases.push_back(spec_case("mse-normalized+logsumexp",
                            {Alignment::MseNormalized, LogSumExpTerm{0.5}, 0.7, 3.0}, sphere));
  cases.push_back(spec_case("mse-normalized+swd-hypersphere",
                            {Alignment::MseNormalized, SwdTerm{{PriorKind::UniformHypersphere, 0}, 0}, 5.0, 2.0},
                            sphere));
  cases.push_back(spec_case("mse+swd-hypercube",
                            {Alignment::MseUnnormalized, SwdTerm{{PriorKind::UniformHypercube, 0}, 0}, 5.0, 1.0},
                            cube));
  cases.push_back(spec_case("mse+swd-normal",
                            {Alignment::MseUnnormalized, SwdTerm{{PriorKind::StandardNormal, 0}, 0}, 5.0, 1.0},
                            normal));
  return cases;
}

/// VAE and supervised objectives of a tiny MLP encoder, as functions of the
/// input images; noise and parameters are frozen.
inline std::vector<GradientCase> model_gradient_cases(std::uint64_t seed) {
  const InputShape in{2, 2, 2};
  const std::size_t batch = 3;
  EncoderConfig enc{EncoderKind::Mlp, {5}, 4};
  VaeConfig vae{3, 6, 0.7};
  Rng rng(seed);
  ParamMap p = init_encoder(enc, in, rng);
  ParamMap heads = init_vae_heads(vae, enc.h_dim, in, rng);
  p.merge(heads);
  init_linear(p, "classifier", enc.h_dim, 3, rng, 1.0);
  Tensor noise({batch, vae.latent});
  for (auto& v : noise.values()) v = rng.normal();
  const std::vector<int> labels{0, 2, 1};
  auto constants = [p](Tape& tape) {
    Bindings b;
    for (const auto& [name, t] : p) b.emplace(name, tape.constant(t));
    return b;
  };
  std::vector<GradientCase> cases;
  cases.push_back({"vae",
                   [=](Tape& tape, const Var& x) {
                     return vae_forward_loss(enc, vae, in, constants(tape), reshape(x, {batch, 2, 2, 2}), vae.beta,
                                             noise)
                         .loss;
                   },
                   batch, in.flat()});
  cases.push_back({"supervised",
                   [=](Tape& tape, const Var& x) {
                     return supervised_head_loss(encoder_forward(enc, in, constants(tape), reshape(x, {batch, 2, 2, 2})),
                                                 constants(tape), labels);
                   },
                   batch, in.flat()});
  return cases;
}

/// Worst relative finite-difference error of `c` over `points` random inputs.
inline double gradient_error(const GradientCase& c, std::size_t points, std::uint64_t seed) {
  double worst = 0.0;
  for (std::size_t i = 0; i < points; ++i) {
    Rng rng(derive_seed(seed, i));
    const Tensor x = non_degenerate(gaussian(c.rows, c.cols, rng));
    worst = std::max(worst, check_gradient([&](Tape& t, const Var& v) { return c.fn(t, v); }, x, 1e-6));
  }
  return worst;
}

}  // namespace selftest

/// Runs every invariant suite and reports one result per check.
inline std::vector<CheckResult> run_selftest() {
  std::vector<CheckResult> out;
  auto record = [&](std::string name, bool pass, std::string detail) {
    out.push_back({std::move(name), pass, std::move(detail)});
  };
  auto guarded = [&](const std::string& name, const std::function<void()>& body) {
    try {
      body();
    } catch (const std::exception& e) {
      record(name, false, std::string("threw: ") + e.what());
    }
  };

  guarded("decomposition identity", [&] {
    const double e = selftest::decomposition_error(11);
    record("decomposition identity", e < 1e-9, "max error " + selftest::fmt_sci(e));
  });
  guarded("decoupled reduction", [&] {
    const double e = selftest::reduction_error(12);
    record("decoupled reduction", e < 1e-9, "max error " + selftest::fmt_sci(e));
  });
  guarded("swd transport oracle", [&] {
    const auto bad = selftest::swd_oracle_mismatches(8, 13);
    record("swd transport oracle", bad == 0, std::to_string(bad) + " mismatching batch sizes");
  });
  guarded("loss gradients", [&] {
    auto cases = selftest::loss_gradient_cases(14);
    auto more = selftest::model_gradient_cases(15);
    cases.insert(cases.end(), more.begin(), more.end());
    double worst = 0.0;
    std::string where;
    for (const auto& c : cases) {
      const double e = selftest::gradient_error(c, 5, 16);
      if (e >= worst) {
        worst = e;
        where = c.name;
      }
    }
    record("loss gradients", worst < 1e-4, "worst relative error " + selftest::fmt_sci(worst) + " (" + where + ")");
  });
  guarded("gaussian projections", [&] {
    Rng rng(17);
    const Tensor z = selftest::gaussian(5000, 8, rng);
    const double ks = projection_histograms(z, 8, 30, rng).ks_mean;
    record("gaussian projections", ks < 0.03, "mean KS " + selftest::fmt_sci(ks));
  });
  guarded("training determinism", [&] {
    Rng rng(18);
    const auto ds = make_base_dataset(3, 8, 8, rng);
    TrainConfig cfg;
    cfg.encoder = {EncoderKind::Mlp, {8}, 8};
    cfg.head = {2, 8, 8};
    cfg.batch_size = 8;
    cfg.epochs = 2;
    cfg.seed = 5;
    const auto a = train(cfg, ds), b = train(cfg, ds);
    record("training determinism",
           a.epoch_loss == b.epoch_loss && param_hash(a.checkpoint.params) == param_hash(b.checkpoint.params),
           "2 runs x 2 epochs");
  });
  guarded("config round trip", [&] {
    std::size_t bad = 0;
    for (const auto& p : kPresetNames) {
      const auto cfg = parse_config(Json{{"preset", p.name}}.dump());
      bad += serialize_config(parse_config(serialize_config(cfg))) != serialize_config(cfg);
    }
    record("config round trip", bad == 0, std::to_string(bad) + " presets changed on re-parse");
  });
  return out;
}

}  // namespace clab
