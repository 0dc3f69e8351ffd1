#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "clab/losses.hpp"

using namespace clab;

namespace {

Tensor random_batch(std::size_t rows, std::size_t d, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t({rows, d});
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

Tensor scaled(Tensor t, double c) {
  for (auto& v : t.values()) v *= c;
  return t;
}

double eval(const std::function<Var(const PairedBatch&)>& f, const Tensor& z) {
  Tape tape;
  return f(PairedBatch(tape.constant(z))).item();
}

// Direct softmax enumeration in double precision, no max-shift.
double nt_xent_oracle(const Tensor& z, double tau) {
  const std::size_t m = z.rows(), d = z.cols();
  auto sim = [&](std::size_t i, std::size_t k) {
    double dot = 0, ni = 0, nk = 0;
    for (std::size_t j = 0; j < d; ++j) {
      dot += z[i * d + j] * z[k * d + j];
      ni += z[i * d + j] * z[i * d + j];
      nk += z[k * d + j] * z[k * d + j];
    }
    return dot / std::sqrt(ni * nk);
  };
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i ^ 1u;
    double denom = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      if (k != i) denom += std::exp(sim(i, k) / tau);
    }
    total += -std::log(std::exp(sim(i, j) / tau) / denom);
  }
  return total / static_cast<double>(m / 2);
}

// Minimum over all b! matchings of sum of squared differences. Terms are
// accumulated in ascending order of x so the optimal matching reproduces the
// sorted-pair sum bit for bit.
double matching_oracle(std::vector<double> x, const std::vector<double>& y) {
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

}  // namespace

TEST(CosineSimilarity, IdenticalRowsGiveOnes) {
  Tape tape;
  Var s = cosine_similarity_matrix(tape.constant(Tensor::matrix(3, 2, {1, 2, 1, 2, 1, 2})));
  for (double v : s.value().values()) EXPECT_NEAR(v, 1.0, 1e-15);
}

TEST(CosineSimilarity, OrthonormalRows) {
  Tape tape;
  Var s = cosine_similarity_matrix(tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1})));
  EXPECT_EQ(s.value().buffer(), (std::vector<double>{1, 0, 0, 1}));
}

TEST(CosineSimilarity, ScaleInvariantAndRejectsZeroRows) {
  Tensor z = random_batch(4, 5, 1);
  Tape tape;
  Var a = cosine_similarity_matrix(tape.constant(z));
  Var b = cosine_similarity_matrix(tape.constant(scaled(z, 3.0)));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(a.value()[i], b.value()[i], 1e-15);
  EXPECT_THROW(cosine_similarity_matrix(tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 0}))), NumericError);
}

TEST(NtXent, SinglePairIsZero) {
  for (double tau : {0.1, 1.0, 3.0}) {
    EXPECT_NEAR(eval([&](const PairedBatch& b) { return nt_xent(b, tau); }, random_batch(2, 4, 5)), 0.0, 1e-15);
  }
}

TEST(NtXent, TwoPairExampleMatchesEnumeration) {
  Tensor z = Tensor::matrix(4, 2, {1, 0, 1, 0, 0, 1, 0, 1});
  const double oracle = nt_xent_oracle(z, 1.0);
  EXPECT_NEAR(oracle, 2.0 * std::log((std::exp(1.0) + 2.0) / std::exp(1.0)), 1e-14);
  EXPECT_NEAR(oracle, 1.1030, 5e-4);
  EXPECT_NEAR(eval([](const PairedBatch& b) { return nt_xent(b, 1.0); }, z), oracle, 1e-12);
}

TEST(NtXent, MatchesEnumerationOnRandomBatches) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Tensor z = random_batch(8, 6, seed);
    for (double tau : {0.1, 0.5}) {
      EXPECT_NEAR(eval([&](const PairedBatch& b) { return nt_xent(b, tau); }, z), nt_xent_oracle(z, tau), 1e-10);
    }
  }
}

TEST(NtXent, RejectsNonPositiveTemperature) {
  Tape tape;
  PairedBatch b(tape.constant(random_batch(4, 3, 1)));
  EXPECT_THROW(nt_xent(b, 0.0), LossConfigError);
  EXPECT_THROW(nt_xent(b, -1.0), LossConfigError);
}

TEST(PairedBatch, RejectsOddRows) {
  Tape tape;
  EXPECT_THROW(PairedBatch(tape.constant(Tensor({3, 2}))), ShapeError);
}

TEST(Alignment, IdenticalViews) {
  Tensor z = random_batch(2, 4, 3);
  Tensor dup({6, 4});
  Tensor base = random_batch(3, 4, 4);
  for (std::size_t m = 0; m < 3; ++m)
    for (std::size_t j = 0; j < 4; ++j) dup[(2 * m) * 4 + j] = dup[(2 * m + 1) * 4 + j] = base[m * 4 + j];
  EXPECT_NEAR(eval([](const PairedBatch& b) { return alignment_loss(b, Alignment::MseNormalized); }, dup), 0.0, 1e-15);
  EXPECT_NEAR(eval([](const PairedBatch& b) { return alignment_loss(b, Alignment::MseUnnormalized); }, dup), 0.0,
              1e-15);
  EXPECT_NEAR(eval([](const PairedBatch& b) { return alignment_loss(b, Alignment::NegativeCosine); }, dup), -2.0,
              1e-14);
}

TEST(Alignment, MseNormalizedIsAffineInCosine) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Tensor z = random_batch(8, 5, seed + 10);
    const double n = 4.0, d = 5.0;
    const double mse = eval([](const PairedBatch& b) { return alignment_loss(b, Alignment::MseNormalized); }, z);
    Tape tape;
    Var sim = cosine_similarity_matrix(tape.constant(z));
    double identity = 0.0;
    for (std::size_t i = 0; i < 8; ++i) identity += 2.0 - 2.0 * sim.value()[i * 8 + (i ^ 1u)];
    EXPECT_NEAR(mse, identity / (n * d), 1e-12);
  }
}

TEST(Alignment, AntipodalPair) {
  Tensor z = Tensor::matrix(2, 4, {0.5, 0.5, 0.5, 0.5, -0.5, -0.5, -0.5, -0.5});
  EXPECT_NEAR(eval([](const PairedBatch& b) { return alignment_loss(b, Alignment::MseNormalized); }, z), 2.0, 1e-14);
}

TEST(Alignment, ZeroRowRejectedForNormalizedKinds) {
  Tensor z = Tensor::matrix(2, 2, {0, 0, 1, 1});
  Tape tape;
  PairedBatch b(tape.constant(z));
  EXPECT_THROW(alignment_loss(b, Alignment::NegativeCosine), NumericError);
  EXPECT_THROW(alignment_loss(b, Alignment::MseNormalized), NumericError);
  EXPECT_NO_THROW(alignment_loss(b, Alignment::MseUnnormalized));
}

TEST(LogSumExpDistribution, OrthonormalPairIsZero) {
  Tensor z = Tensor::matrix(2, 2, {1, 0, 0, 1});
  EXPECT_NEAR(eval([](const PairedBatch& b) { return logsumexp_distribution(b, 1.0, 1.0); }, z), 0.0, 1e-15);
}

TEST(LogSumExpDistribution, SpreadingRowsLowersValue) {
  Tensor collinear({4, 4}, 0.0), spread({4, 4}, 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    collinear[i * 4] = 1.0;
    spread[i * 4 + i] = 1.0;
  }
  auto f = [](const PairedBatch& b) { return logsumexp_distribution(b, 1.0, 1.0); };
  const double c = eval(f, collinear), s = eval(f, spread);
  // 4 rows, 3 candidates each: (1/2) * 4 * log(3e) versus (1/2) * 4 * log(3)
  EXPECT_NEAR(c, 2.0 * (std::log(3.0) + 1.0), 1e-12);
  EXPECT_NEAR(s, 2.0 * std::log(3.0), 1e-12);
  EXPECT_LT(s, c);
}

TEST(LogSumExpDistribution, RejectsBadWidth) {
  Tape tape;
  PairedBatch b(tape.constant(random_batch(4, 3, 1)));
  EXPECT_THROW(logsumexp_distribution(b, 1.0, 0.0), LossConfigError);
  EXPECT_THROW(logsumexp_distribution(b, -1.0, 1.0), LossConfigError);
}

// tau * NT-Xent == negative-cosine alignment + tau-weighted LogSumExp at width tau.
TEST(Decomposition, ScaledNtXentSplitsIntoAlignmentAndDistribution) {
  std::uint64_t seed = 0;
  for (std::size_t n : {2, 4, 8})
    for (std::size_t d : {4, 16, 64})
      for (double tau : {0.1, 0.2, 1.0}) {
        Tensor z = random_batch(2 * n, d, ++seed);
        Tape tape;
        PairedBatch b(tape.constant(z));
        const double lhs = tau * nt_xent(b, tau).item();
        const double rhs =
            alignment_loss(b, Alignment::NegativeCosine).item() + logsumexp_distribution(b, tau, tau).item();
        EXPECT_NEAR(lhs, rhs, 1e-9);
        EXPECT_NEAR(decoupled_nt_xent(b, tau, tau).item(), lhs, 1e-9);
      }
}

TEST(Decoupled, VanishingWeightLeavesAlignment) {
  Tensor z = random_batch(8, 6, 42);
  Tape tape;
  PairedBatch b(tape.constant(z));
  EXPECT_NEAR(decoupled_nt_xent(b, 0.5, 1e-12).item(), alignment_loss(b, Alignment::NegativeCosine).item(), 1e-9);
  EXPECT_THROW(decoupled_nt_xent(b, 0.5, 0.0), LossConfigError);
}

TEST(Decoupled, DefaultHyperparametersFinite) {
  Tape tape;
  PairedBatch b(tape.constant(random_batch(16, 8, 43)));
  EXPECT_TRUE(std::isfinite(decoupled_nt_xent(b, 1.0, 0.1).item()));
}

TEST(ScaleInvariance, NormalizedLossesIgnorePositiveRescaling) {
  Tensor z = random_batch(8, 6, 44);
  for (double c : {0.01, 3.0, 250.0}) {
    Tensor zc = scaled(z, c);
    auto same = [&](const std::function<Var(const PairedBatch&)>& f) { EXPECT_NEAR(eval(f, z), eval(f, zc), 1e-9); };
    same([](const PairedBatch& b) { return nt_xent(b, 0.2); });
    same([](const PairedBatch& b) { return alignment_loss(b, Alignment::NegativeCosine); });
    same([](const PairedBatch& b) { return alignment_loss(b, Alignment::MseNormalized); });
    same([](const PairedBatch& b) { return decoupled_nt_xent(b, 1.0, 0.1); });
  }
}

TEST(Prior, HypersphereRowsHaveUnitNorm) {
  Rng rng(1);
  Tensor p = sample_prior({PriorKind::UniformHypersphere, 7}, 500, rng);
  for (std::size_t i = 0; i < 500; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < 7; ++j) ss += p[i * 7 + j] * p[i * 7 + j];
    EXPECT_NEAR(std::sqrt(ss), 1.0, 1e-10);
  }
}

TEST(Prior, HypercubeBoundedAndCentered) {
  Rng rng(2);
  const std::size_t b = 10000, d = 4;
  Tensor p = sample_prior({PriorKind::UniformHypercube, d}, b, rng);
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      EXPECT_GE(p[i * d + j], -1.0);
      EXPECT_LE(p[i * d + j], 1.0);
      mean[j] += p[i * d + j] / b;
    }
  // sd of the mean is 1/sqrt(3b) ~ 0.0058; 0.05 is ~8.7 sd
  for (double m : mean) EXPECT_LT(std::abs(m), 0.05);
}

TEST(Prior, StandardNormalVariance) {
  Rng rng(3);
  const std::size_t b = 10000, d = 4;
  Tensor p = sample_prior({PriorKind::StandardNormal, d}, b, rng);
  for (std::size_t j = 0; j < d; ++j) {
    double m = 0.0, v = 0.0;
    for (std::size_t i = 0; i < b; ++i) m += p[i * d + j] / b;
    for (std::size_t i = 0; i < b; ++i) v += (p[i * d + j] - m) * (p[i * d + j] - m) / (b - 1);
    // sample variance has sd sqrt(2/(b-1)) ~ 0.0141; band is ~3.5 sd
    EXPECT_GE(v, 0.95);
    EXPECT_LE(v, 1.05);
  }
}

TEST(Prior, DeterministicGivenSeed) {
  Rng a(9), b(9);
  EXPECT_EQ(sample_prior({PriorKind::StandardNormal, 3}, 10, a), sample_prior({PriorKind::StandardNormal, 3}, 10, b));
}

TEST(RandomOrthogonal, ScalarCaseIsSign) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    Tensor w = random_orthogonal(1, 1, rng);
    EXPECT_EQ(std::abs(w[0]), 1.0);
  }
}

TEST(RandomOrthogonal, OrthonormalColumns) {
  Rng rng(5);
  for (auto [d, dp] : std::vector<std::pair<std::size_t, std::size_t>>{{8, 4}, {8, 8}, {64, 64}, {5, 1}}) {
    Tensor w = random_orthogonal(d, dp, rng);
    for (std::size_t a = 0; a < dp; ++a)
      for (std::size_t b = 0; b < dp; ++b) {
        double dot = 0.0;
        for (std::size_t i = 0; i < d; ++i) dot += w[i * dp + a] * w[i * dp + b];
        EXPECT_NEAR(dot, a == b ? 1.0 : 0.0, 1e-10);
      }
  }
  EXPECT_THROW(random_orthogonal(3, 4, rng), ShapeError);
}

TEST(RandomOrthogonal, FirstCoordinateSignIsUnbiased) {
  Rng rng(6);
  int positive = 0;
  for (int i = 0; i < 2000; ++i) positive += random_orthogonal(4, 2, rng)[0] > 0.0;
  EXPECT_NEAR(positive / 2000.0, 0.5, 0.05);
}

TEST(Swd, InjectedPriorEqualToBatchGivesZero) {
  Tensor h = random_batch(6, 4, 7);
  Tape tape;
  Rng rng(1);
  Var loss = swd_loss(tape.constant(h), {PriorKind::StandardNormal, 4}, 4, rng, {h, std::nullopt});
  EXPECT_EQ(loss.item(), 0.0);
}

TEST(Swd, OneDimensionalExample) {
  Tensor h = Tensor::matrix(2, 1, {0, 2});
  Tensor p = Tensor::matrix(2, 1, {1, 3});
  EXPECT_EQ(matching_oracle({0, 2}, {1, 3}), 2.0);
  for (double sign : {1.0, -1.0}) {
    Tape tape;
    Rng rng(1);
    Var loss = swd_loss(tape.constant(h), {PriorKind::StandardNormal, 1}, 1, rng, {p, Tensor({1, 1}, {sign})});
    EXPECT_EQ(loss.item(), 2.0);
  }
}

TEST(Swd, RowOrderIrrelevant) {
  Tensor h = random_batch(6, 3, 8);
  Tensor p = random_batch(6, 3, 9);
  Rng wr(2);
  Tensor w = random_orthogonal(3, 2, wr);
  Tensor shuffled({6, 3});
  const std::vector<std::size_t> perm = {4, 2, 0, 5, 1, 3};
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 3; ++j) shuffled[i * 3 + j] = h[perm[i] * 3 + j];
  Tape tape;
  Rng rng(1);
  const PriorSpec prior{PriorKind::StandardNormal, 3};
  const double a = swd_loss(tape.constant(h), prior, 2, rng, {p, w}).item();
  const double b = swd_loss(tape.constant(shuffled), prior, 2, rng, {p, w}).item();
  EXPECT_NEAR(a, b, 1e-15);
}

TEST(Swd, EqualsBruteForceMatchingInOneDimension) {
  Rng gen(10);
  for (std::size_t b = 2; b <= 8; ++b) {
    Tensor h = random_batch(b, 1, 100 + b);
    Tensor p = random_batch(b, 1, 200 + b);
    Tape tape;
    Rng rng(1);
    const double swd =
        swd_loss(tape.constant(h), {PriorKind::StandardNormal, 1}, 1, rng, {p, Tensor({1, 1}, {1.0})}).item();
    EXPECT_EQ(swd, matching_oracle(h.buffer(), p.buffer())) << "b=" << b;
  }
}

TEST(Swd, SymmetricInBatchAndPrior) {
  Tensor h = random_batch(5, 4, 11);
  Tensor p = random_batch(5, 4, 12);
  Rng wr(3);
  Tensor w = random_orthogonal(4, 3, wr);
  Tape tape;
  Rng rng(1);
  const PriorSpec prior{PriorKind::StandardNormal, 4};
  EXPECT_NEAR(swd_loss(tape.constant(h), prior, 3, rng, {p, w}).item(),
              swd_loss(tape.constant(p), prior, 3, rng, {h, w}).item(), 1e-14);
}

TEST(Swd, NonNegativeAndDimensionChecked) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Tape tape;
    Rng rng(s);
    EXPECT_GE(swd_loss(tape.constant(random_batch(8, 5, s)), {PriorKind::UniformHypercube, 5}, 5, rng).item(), 0.0);
  }
  Tape tape;
  Rng rng(0);
  EXPECT_THROW(swd_loss(tape.constant(random_batch(8, 5, 1)), {PriorKind::UniformHypercube, 4}, 4, rng), ShapeError);
}

TEST(Generalized, LogSumExpRowWithMatchedWeightReproducesScaledNtXent) {
  for (double tau : {0.1, 0.2, 1.0}) {
    Tensor z = random_batch(8, 16, 50);
    Tape tape;
    PairedBatch b(tape.constant(z));
    Rng rng(0);
    LossSpec spec{Alignment::NegativeCosine, LogSumExpTerm{tau}, tau, 1.0};
    EXPECT_NEAR(generalized_loss(spec, b, rng).item(), tau * nt_xent(b, tau).item(), 1e-9);
    EXPECT_NEAR(generalized_loss(nt_xent_spec(tau), b, rng).item(), nt_xent(b, tau).item(), 1e-9);
  }
}

TEST(Generalized, MseNormalizedRowIsAffineTransformOfDecomposition) {
  const double tau = 0.5, d = 16.0;
  Tensor z = random_batch(8, 16, 51);
  Tape tape;
  PairedBatch b(tape.constant(z));
  Rng rng(0);
  LossSpec row1{Alignment::MseNormalized, LogSumExpTerm{tau}, tau, 1.0};
  const double lse = logsumexp_distribution(b, tau, tau).item();
  const double cos = alignment_loss(b, Alignment::NegativeCosine).item();
  EXPECT_NEAR(generalized_loss(row1, b, rng).item(), 4.0 / d + 2.0 / d * cos + lse, 1e-12);
}

TEST(Generalized, PaperDefaultsAccepted) {
  Tensor z = random_batch(16, 8, 52);
  Tape tape;
  PairedBatch b(tape.constant(z));
  Rng rng(0);
  const std::vector<LossSpec> specs = {
      nt_xent_spec(0.2),
      {Alignment::NegativeCosine, LogSumExpTerm{1.0}, 0.1, 1.0},
      {Alignment::MseNormalized, SwdTerm{{PriorKind::UniformHypersphere, 0}, 0}, 5.0, 1000.0},
      {Alignment::MseUnnormalized, SwdTerm{{PriorKind::UniformHypercube, 0}, 0}, 5.0, 1.0},
      {Alignment::MseUnnormalized, SwdTerm{{PriorKind::StandardNormal, 0}, 0}, 5.0, 1.0},
  };
  for (const auto& s : specs) EXPECT_TRUE(std::isfinite(generalized_loss(s, b, rng).item()));
}

TEST(Generalized, InconsistentSpecsRejected) {
  Tape tape;
  PairedBatch b(tape.constant(random_batch(4, 3, 1)));
  Rng rng(0);
  EXPECT_THROW(generalized_loss({Alignment::MseUnnormalized, SwdTerm{{PriorKind::UniformHypersphere, 0}, 0}, 1, 1}, b,
                                rng),
               LossConfigError);
  EXPECT_THROW(
      generalized_loss({Alignment::MseNormalized, SwdTerm{{PriorKind::StandardNormal, 0}, 0}, 1, 1}, b, rng),
      LossConfigError);
  EXPECT_THROW(generalized_loss({Alignment::MseUnnormalized, LogSumExpTerm{0.2}, 1, 1}, b, rng), LossConfigError);
  EXPECT_THROW(generalized_loss({Alignment::NegativeCosine, LogSumExpTerm{0.2}, -1, 1}, b, rng), LossConfigError);
}

TEST(Generalized, SphereSwdNormalizesBeforeDistributionTerm) {
  Tensor z = random_batch(8, 4, 53);
  LossSpec spec{Alignment::MseNormalized, SwdTerm{{PriorKind::UniformHypersphere, 0}, 0}, 1.0, 1.0};
  auto run = [&](const Tensor& zz) {
    Tape tape;
    Rng rng(4);
    return generalized_loss(spec, PairedBatch(tape.constant(zz)), rng).item();
  };
  EXPECT_NEAR(run(z), run(scaled(z, 7.0)), 1e-12);
}

TEST(GradientCheck, AllLossesMatchFiniteDifferences) {
  std::vector<std::pair<std::string, std::function<Var(const PairedBatch&)>>> losses = {
      {"nt_xent", [](const PairedBatch& b) { return nt_xent(b, 0.2); }},
      {"decoupled", [](const PairedBatch& b) { return decoupled_nt_xent(b, 1.0, 0.1); }},
      {"align_cos", [](const PairedBatch& b) { return alignment_loss(b, Alignment::NegativeCosine); }},
      {"align_mse_norm", [](const PairedBatch& b) { return alignment_loss(b, Alignment::MseNormalized); }},
      {"align_mse", [](const PairedBatch& b) { return alignment_loss(b, Alignment::MseUnnormalized); }},
      {"lse", [](const PairedBatch& b) { return logsumexp_distribution(b, 0.5, 0.3); }},
  };
  const std::vector<LossSpec> table = {
      {Alignment::MseNormalized, LogSumExpTerm{0.5}, 1.0, 1.0},
      {Alignment::MseNormalized, SwdTerm{{PriorKind::UniformHypersphere, 0}, 0}, 5.0, 1000.0},
      {Alignment::MseUnnormalized, SwdTerm{{PriorKind::UniformHypercube, 0}, 0}, 5.0, 1.0},
      {Alignment::MseUnnormalized, SwdTerm{{PriorKind::StandardNormal, 0}, 0}, 5.0, 1.0},
  };
  for (std::size_t i = 0; i < table.size(); ++i) {
    losses.emplace_back("table_row_" + std::to_string(i + 1), [spec = table[i]](const PairedBatch& b) {
      Rng rng(123);
      return generalized_loss(spec, b, rng);
    });
  }
  for (const auto& [name, f] : losses) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const double err =
          check_gradient([&](Tape&, const Var& x) { return f(PairedBatch(x)); }, random_batch(8, 5, 300 + seed), 1e-5);
      EXPECT_LT(err, 1e-4) << name << " seed " << seed;
    }
  }
}
