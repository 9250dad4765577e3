#include <gtest/gtest.h>

#include <cmath>

#include "stacktune.hpp"

using namespace stacktune;
using D = BasicTensor<double>;

namespace {

ParamGroup<double> single(const D& p, bool decay) {
  ParamList<double> list{{"p", p, !decay}};
  return ParamGroup<double>("g", list, decay);
}

void set_grad(D& p, double g) {
  p.set_requires_grad(true);
  for (auto& x : p.grad()) x = g;
}

}  // namespace

TEST(BertAdam, MatchesScalarRecurrence) {
  auto p = D::scalar(0.5, true);
  std::vector<ParamGroup<double>> groups{single(p, true)};
  OptimizerConfig cfg;
  cfg.global_lr = 0.01;
  const std::vector<double> grads{0.3, -0.1, 0.7, 0.0, -2.0};
  double x = 0.5, m = 0.0, v = 0.0;
  for (double g : grads) {
    set_grad(p, g);
    step(groups, cfg);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.01 * (m / (std::sqrt(v) + 1e-6) + 0.01 * x);
    EXPECT_NEAR(p[0], x, 1e-15);
  }
}

TEST(BertAdam, BiasCorrectedMatchesTextbookAdam) {
  auto p = D::scalar(-1.2, true);
  std::vector<ParamGroup<double>> groups{single(p, true)};
  OptimizerConfig cfg;
  cfg.global_lr = 0.05;
  cfg.weight_decay = 0.0;
  cfg.bias_correction = true;
  double x = -1.2, m = 0.0, v = 0.0;
  for (int t = 1; t <= 20; ++t) {
    const double g = std::sin(0.7 * t) + 0.2 * x;
    set_grad(p, g);
    step(groups, cfg);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    x -= 0.05 * mh / (std::sqrt(vh) + 1e-6);
    EXPECT_LE(std::abs(p[0] - x), 1e-6 * std::abs(x));
  }
}

TEST(BertAdam, NoDecayGroupSkipsWeightDecay) {
  auto a = D::scalar(1.0, true);
  auto b = D::scalar(1.0, true);
  std::vector<ParamGroup<double>> groups{single(a, true), single(b, false)};
  OptimizerConfig cfg;
  cfg.global_lr = 0.1;
  cfg.weight_decay = 0.5;
  set_grad(a, 0.0);
  set_grad(b, 0.0);
  step(groups, cfg);
  EXPECT_NEAR(a[0], 1.0 - 0.1 * 0.5, 1e-15);
  EXPECT_EQ(b[0], 1.0);
}

TEST(BertAdam, LrScaleMultipliesGlobalRate) {
  auto a = D::scalar(0.0, true);
  auto b = D::scalar(0.0, true);
  std::vector<ParamGroup<double>> groups{single(a, false), single(b, false)};
  groups[1].lr_scale = 0.25;
  OptimizerConfig cfg;
  cfg.global_lr = 0.1;
  set_grad(a, 1.0);
  set_grad(b, 1.0);
  step(groups, cfg);
  EXPECT_NEAR(b[0], 0.25 * a[0], 1e-15);
}

TEST(BertAdam, FrozenGroupIsUntouched) {
  auto p = D::from({3}, {1.0, 2.0, 3.0}, true);
  std::vector<ParamGroup<double>> groups{single(p, true)};
  set_frozen(groups[0], true);
  EXPECT_FALSE(p.requires_grad());
  const auto before = checksum(std::vector<D>{p});
  OptimizerConfig cfg;
  step(groups, cfg);
  EXPECT_EQ(checksum(std::vector<D>{p}), before);
  EXPECT_FALSE(groups[0].has_state());
  set_frozen(groups[0], false);
  EXPECT_TRUE(p.requires_grad());
}

TEST(BertAdam, MissingGradientIsAnError) {
  auto p = D::scalar(1.0, false);
  std::vector<ParamGroup<double>> groups{single(p, true)};
  EXPECT_THROW(step(groups, OptimizerConfig{}), Error);
}

TEST(BertAdam, InvalidConfigRejected) {
  OptimizerConfig cfg;
  cfg.beta1 = 1.0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.epsilon = 0.0;
  EXPECT_THROW(cfg.validate(), Error);
}

TEST(BertAdam, DescendsOnAQuadratic) {
  auto w = D::from({4}, {2.0, -1.0, 0.5, 3.0}, true);
  const auto target = D::from({4}, {0.1, 0.2, 0.3, 0.4});
  ParamList<double> list{{"w", w, false}};
  auto groups = make_groups("q", list);
  OptimizerConfig cfg;
  cfg.global_lr = 0.05;
  cfg.weight_decay = 0.0;
  auto loss = [&] {
    const auto d = sub(w, target);
    return sum_all(mul(d, d));
  };
  const double start = loss().item();
  for (int i = 0; i < 200; ++i) {
    zero_grad(groups);
    backward(loss());
    step(groups, cfg);
  }
  EXPECT_LT(loss().item(), 0.01 * start);
}

TEST(Groups, SplitByNoDecayFlag) {
  Rng rng(1);
  LayerNorm<double> ln(4);
  Linear<double> lin(4, 2, Init::Kaiming, rng);
  ParamList<double> params;
  lin.collect(params, "lin");
  ln.collect(params, "ln");
  const auto groups = make_groups("head", params);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups[0].name, "head");
  EXPECT_EQ(groups[1].name, "head.no_decay");
  EXPECT_EQ(groups[0].param_names, (std::vector<std::string>{"lin.weight", "lin.bias"}));
  EXPECT_EQ(groups[1].param_names, (std::vector<std::string>{"ln.gain", "ln.bias"}));
  EXPECT_TRUE(groups[0].apply_decay);
  EXPECT_FALSE(groups[1].apply_decay);
}

TEST(Checksum, SensitiveToEveryBit) {
  auto a = D::from({2}, {1.0, 2.0});
  const auto h = checksum(std::vector<D>{a});
  a[1] = std::nextafter(2.0, 3.0);
  EXPECT_NE(checksum(std::vector<D>{a}), h);
  auto b = D::from({2}, {1.0, 2.0});
  EXPECT_EQ(checksum(std::vector<D>{b}), h);
}
