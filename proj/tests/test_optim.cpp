#include <gtest/gtest.h>

#include <cmath>

#include "clab/optim.hpp"

using namespace clab;

namespace {

ParamMap single_param(std::vector<double> w, std::vector<double> g) {
  ParamMap p;
  const std::size_t n = w.size();
  Tensor t({n}, std::move(w));
  t.set_requires_grad(true);
  for (std::size_t i = 0; i < g.size(); ++i) t.grad()[i] = g[i];
  p["w"] = std::move(t);
  return p;
}

}  // namespace

TEST(Sgd, ZeroMomentumIsPlainGradientDescent) {
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::SgdMomentum;
  cfg.lr = 0.1;
  cfg.momentum = 0.0;
  OptimizerState state;
  auto p = single_param({1.0, -2.0, 0.5}, {0.3, -0.4, 2.0});
  optimizer_step(cfg, state, p);
  EXPECT_DOUBLE_EQ(p["w"][0], 1.0 - 0.1 * 0.3);
  EXPECT_DOUBLE_EQ(p["w"][1], -2.0 + 0.1 * 0.4);
  EXPECT_DOUBLE_EQ(p["w"][2], 0.5 - 0.1 * 2.0);
}

TEST(Sgd, MomentumAccumulatesVelocity) {
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::SgdMomentum;
  cfg.lr = 0.5;
  cfg.momentum = 0.9;
  OptimizerState state;
  auto p = single_param({0.0}, {1.0});
  optimizer_step(cfg, state, p);
  EXPECT_DOUBLE_EQ(p["w"][0], -0.5);
  optimizer_step(cfg, state, p);  // same gradient: v = 0.9 + 1
  EXPECT_DOUBLE_EQ(p["w"][0], -0.5 - 0.5 * 1.9);
}

TEST(Adam, FirstStepMovesByLearningRateTimesSign) {
  OptimizerConfig cfg;
  cfg.lr = 0.01;
  cfg.eps = 0.0;
  OptimizerState state;
  auto p = single_param({1.0, 1.0, 1.0}, {5.0, -1e-3, 42.0});
  optimizer_step(cfg, state, p);
  EXPECT_NEAR(p["w"][0], 0.99, 1e-15);
  EXPECT_NEAR(p["w"][1], 1.01, 1e-15);
  EXPECT_NEAR(p["w"][2], 0.99, 1e-15);
}

TEST(Adam, FirstStepClosedFormWithEpsilon) {
  OptimizerConfig cfg;
  cfg.lr = 0.1;
  cfg.eps = 1e-8;
  OptimizerState state;
  const double g = 0.25;
  auto p = single_param({2.0}, {g});
  optimizer_step(cfg, state, p);
  EXPECT_DOUBLE_EQ(p["w"][0], 2.0 - 0.1 * g / (std::abs(g) + 1e-8));
}

TEST(Optimizer, ZeroGradientLeavesParametersUnchanged) {
  for (auto kind : {OptimizerKind::SgdMomentum, OptimizerKind::Adam}) {
    OptimizerConfig cfg;
    cfg.kind = kind;
    OptimizerState state;
    auto p = single_param({0.7, -0.3}, {0.0, 0.0});
    for (int i = 0; i < 3; ++i) optimizer_step(cfg, state, p);
    EXPECT_EQ(p["w"][0], 0.7);
    EXPECT_EQ(p["w"][1], -0.3);
  }
}

TEST(Optimizer, FrozenParametersAreSkipped) {
  OptimizerConfig cfg;
  OptimizerState state;
  ParamMap p;
  p["frozen"] = Tensor({2}, 1.0);
  optimizer_step(cfg, state, p);
  EXPECT_EQ(p["frozen"][0], 1.0);
  EXPECT_TRUE(state.first.empty());
}

TEST(Optimizer, WeightDecayAddsToGradient) {
  OptimizerConfig cfg;
  cfg.kind = OptimizerKind::SgdMomentum;
  cfg.momentum = 0.0;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.5;
  OptimizerState state;
  auto p = single_param({2.0}, {0.0});
  optimizer_step(cfg, state, p);
  EXPECT_DOUBLE_EQ(p["w"][0], 2.0 - 0.1 * 0.5 * 2.0);
}

TEST(Optimizer, ZeroGradsClearsBuffers) {
  auto p = single_param({1.0, 2.0}, {3.0, 4.0});
  zero_grads(p);
  EXPECT_EQ(p["w"].grad()[0], 0.0);
  EXPECT_EQ(p["w"].grad()[1], 0.0);
}
