#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "mscale/adam.hpp"
#include "mscale/backprop.hpp"
#include "mscale/errors.hpp"
#include "mscale/kl_scaling.hpp"
#include "mscale/loss.hpp"
#include "mscale/mlp.hpp"
#include "mscale/rng.hpp"
#include "mscale/teachers.hpp"
#include "mscale/train.hpp"
#include "oracles.hpp"

using namespace mscale;

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

std::vector<double> flat(const Mlp& net) { return {net.params().data(), net.params().data() + net.params().size()}; }

/// Target whose outputs are all NaN; training must stop at the first step.
struct NanTarget {
  int input_dim() const { return 2; }
  int output_dim() const { return 1; }
  Matrix sample_inputs(Rng& rng, std::size_t n) const {
    Matrix x(static_cast<Eigen::Index>(n), 2);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform01();
    return x;
  }
  Matrix evaluate(const Matrix& x) const { return Matrix::Constant(x.rows(), 1, std::nan("")); }
};

}  // namespace

TEST(Mlp, ParamCountOfReferenceTeacher) {
  EXPECT_EQ(param_count({20, 600, 600, 2}), 374402u);
  EXPECT_EQ(init_mlp({20, 600, 600, 2}, 1).params().size(), 374402);
}

TEST(Mlp, ParamCountMatchesFlatLengthForRandomShapes) {
  std::mt19937_64 eng(5);
  std::uniform_int_distribution<int> layers(2, 6), width(1, 40);
  for (int t = 0; t < 100; ++t) {
    std::vector<int> sizes(static_cast<std::size_t>(layers(eng)));
    for (auto& s : sizes) s = width(eng);
    std::size_t expect = 0;
    for (std::size_t l = 1; l < sizes.size(); ++l)
      expect += static_cast<std::size_t>(sizes[l - 1] + 1) * static_cast<std::size_t>(sizes[l]);
    const Mlp net(sizes);
    EXPECT_EQ(param_count(sizes), expect);
    EXPECT_EQ(net.param_count(), expect);
  }
}

TEST(Mlp, RejectsDegenerateShapes) {
  EXPECT_THROW(Mlp(std::vector<int>{}), ValidationError);
  EXPECT_THROW(Mlp(std::vector<int>{5}), ValidationError);
  EXPECT_THROW(Mlp(std::vector<int>{5, 0, 2}), ValidationError);
}

TEST(Mlp, InitStdIsInverseRootFanIn) {
  const Mlp net = init_mlp({4, 250000}, 3);
  const auto w = net.weight(0);
  const double mean = w.mean();
  const double sd = std::sqrt((w.array() - mean).square().mean());
  EXPECT_NEAR(sd, 0.5, 0.01);
  EXPECT_TRUE(net.bias(0).isZero(0.0));
}

TEST(Mlp, SameSeedSameNetwork) {
  EXPECT_EQ(init_mlp({7, 9, 3}, 44), init_mlp({7, 9, 3}, 44));
  EXPECT_FALSE(init_mlp({7, 9, 3}, 44) == init_mlp({7, 9, 3}, 45));
}

TEST(Forward, ZeroNetworkGivesZeroOutput) {
  const Mlp net({3, 5, 2});
  EXPECT_TRUE(forward(net, random_matrix(4, 3, 1)).isZero(0.0));
}

TEST(Forward, SingleUnitReproducesRelu) {
  Mlp net({1, 1, 1});
  net.weight(0)(0, 0) = 1.0;
  net.weight(1)(0, 0) = 1.0;
  Matrix x(5, 1);
  x << -2.0, -0.5, 0.0, 0.25, 3.0;
  const Matrix y = forward(net, x);
  for (Eigen::Index i = 0; i < 5; ++i) EXPECT_EQ(y(i, 0), std::max(0.0, x(i, 0)));
}

TEST(Forward, MatchesLoopOracle) {
  const Mlp net = init_mlp({5, 7, 6, 3}, 9);
  const Matrix x = random_matrix(10, 5, 10);
  const Matrix y = forward(net, x);
  const Matrix pre = prefinal_activations(net, x);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    std::vector<double> xi(5), pf;
    for (int c = 0; c < 5; ++c) xi[static_cast<std::size_t>(c)] = x(r, c);
    const auto ref = oracle::forward(net.layer_sizes(), flat(net), xi, &pf);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(y(r, c), ref[static_cast<std::size_t>(c)], 1e-12);
    ASSERT_EQ(pf.size(), 6u);
    for (int c = 0; c < 6; ++c) EXPECT_NEAR(pre(r, c), pf[static_cast<std::size_t>(c)], 1e-12);
  }
  EXPECT_THROW(forward(net, random_matrix(2, 4, 1)), ValidationError);
}

TEST(Forward, PiecewiseLinearInsideOneRegion) {
  const Mlp net = init_mlp({4, 16, 16, 2}, 21);
  Rng rng(22);
  int checked = 0;
  for (int t = 0; t < 50; ++t) {
    Matrix x(3, 4);
    for (int c = 0; c < 4; ++c) {
      const double base = rng.uniform01() - 0.5, dir = rng.normal();
      for (int i = 0; i < 3; ++i) x(i, c) = base + 1e-4 * i * dir;
    }
    const auto tr = forward_trace(net, x);
    bool same = true;
    for (std::size_t l = 0; l + 1 < tr.pre.size(); ++l)
      for (Eigen::Index u = 0; u < tr.pre[l].cols(); ++u)
        same &= (tr.pre[l](0, u) > 0) == (tr.pre[l](1, u) > 0) && (tr.pre[l](0, u) > 0) == (tr.pre[l](2, u) > 0);
    if (!same) continue;
    ++checked;
    const Matrix& y = tr.output();
    for (int c = 0; c < 2; ++c) EXPECT_NEAR(y(1, c) - y(0, c), y(2, c) - y(1, c), 1e-10);
  }
  EXPECT_GT(checked, 40);
}

TEST(Loss, CrossEntropyClosedForm) {
  Matrix t(1, 2), s(1, 2);
  t << 0.0, 0.0;
  s << std::log(3.0), 0.0;
  const double expect = -0.5 * std::log(0.75) - 0.5 * std::log(0.25);
  EXPECT_NEAR(loss_value(Loss::cross_entropy(), s, t), expect, 1e-15);
  EXPECT_NEAR(per_sample_kl(s, t)[0], expect - std::log(2.0), 1e-15);
}

TEST(Loss, IdenticalLogitsGiveEntropyAndZeroKl) {
  const Matrix t = random_matrix(20, 3, 4);
  const Vector ce = per_sample_loss(Loss::cross_entropy(), t, t);
  const Vector h = per_sample_entropy(t);
  for (Eigen::Index i = 0; i < 20; ++i) EXPECT_NEAR(ce[i], h[i], 1e-14);
  EXPECT_NEAR(per_sample_kl(t, t).cwiseAbs().maxCoeff(), 0.0, 1e-15);
}

TEST(Loss, LargeLogitsStayFinite) {
  Matrix t(1, 2), s(1, 2);
  t << 1000.0, -1000.0;
  s << 900.0, 1000.0;
  EXPECT_TRUE(std::isfinite(loss_value(Loss::cross_entropy(), s, t)));
}

TEST(Loss, PnormZeroOnExactMatch) {
  const Matrix y = random_matrix(5, 2, 6);
  for (double p : {0.5, 1.0, 1.25, 2.0, 4.0}) EXPECT_EQ(loss_value(Loss::pnorm(p), y, y), 0.0);
  EXPECT_THROW(Loss::pnorm(0.0), ValidationError);
  EXPECT_THROW(Loss::pnorm(-1.0), ValidationError);
}

TEST(Loss, MseAndPnormValues) {
  Matrix y(2, 1), t(2, 1);
  y << 1.0, -1.0;
  t << 0.0, 1.0;
  EXPECT_DOUBLE_EQ(loss_value(Loss::mse(), y, t), 2.5);
  EXPECT_DOUBLE_EQ(loss_value(Loss::pnorm(3.0), y, t), 4.5);
}

TEST(Loss, ShapeAndFinitenessChecked) {
  EXPECT_THROW(loss_value(Loss::mse(), random_matrix(2, 2, 1), random_matrix(3, 2, 1)), ValidationError);
  EXPECT_THROW(loss_value(Loss::cross_entropy(), random_matrix(2, 1, 1), random_matrix(2, 1, 1)), ValidationError);
  Matrix bad = random_matrix(2, 2, 1);
  bad(0, 0) = std::nan("");
  EXPECT_THROW(loss_value(Loss::mse(), bad, random_matrix(2, 2, 2)), TrainingFault);
}

class GradientCheck : public ::testing::TestWithParam<Loss> {};

TEST_P(GradientCheck, MatchesFiniteDifferences) {
  const Loss loss = GetParam();
  for (std::uint64_t s = 0; s < 3; ++s) {
    const Mlp net = init_mlp({4, 6, 5, 3}, 100 + s);
    const Matrix x = random_matrix(8, 4, 200 + s);
    const Matrix t = random_matrix(8, 3, 300 + s);
    const auto r = gradcheck::check(net, x, loss, t);
    EXPECT_LT(r.max_rel, 1e-4) << to_string(loss) << " p=" << loss.p;
    EXPECT_GT(r.checked, r.skipped * 10);
  }
}

INSTANTIATE_TEST_SUITE_P(AllLosses, GradientCheck,
                         ::testing::Values(Loss::mse(), Loss::cross_entropy(), Loss::pnorm(1.25), Loss::pnorm(2.0),
                                           Loss::pnorm(4.0)));

TEST(Backward, ZeroLossGivesZeroGradient) {
  const Mlp net = init_mlp({3, 5, 2}, 1);
  const Matrix x = random_matrix(6, 3, 2);
  const Matrix y = forward(net, x);
  EXPECT_TRUE(backward(net, x, Loss::mse(), y).isZero(0.0));
  EXPECT_TRUE(backward(net, x, Loss::pnorm(1.5), y).isZero(0.0));
  EXPECT_LT(backward(net, x, Loss::cross_entropy(), y).cwiseAbs().maxCoeff(), 1e-16);
}

TEST(Backward, DuplicatedBatchGivesSameGradient) {
  const Mlp net = init_mlp({3, 8, 2}, 5);
  const Matrix x = random_matrix(6, 3, 6), t = random_matrix(6, 2, 7);
  Matrix x2(12, 3), t2(12, 2);
  x2 << x, x;
  t2 << t, t;
  const Vector a = backward(net, x, Loss::cross_entropy(), t);
  const Vector b = backward(net, x2, Loss::cross_entropy(), t2);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  AdamState s(1);
  Vector p = Vector::Zero(1), g = Vector::Ones(1);
  adam_step(s, p, g, 0.01);
  EXPECT_NEAR(p[0], -0.01, 1e-9);
  // Bias correction makes the first step size independent of |g|.
  AdamState s2(1);
  Vector p2 = Vector::Zero(1), g2 = Vector::Constant(1, -250.0);
  adam_step(s2, p2, g2, 0.01);
  EXPECT_NEAR(p2[0], 0.01, 1e-9);
}

TEST(Adam, ZeroGradientNeverMoves) {
  AdamState s(3);
  Vector p(3);
  p << 1.0, -2.0, 3.0;
  const Vector before = p;
  for (int i = 0; i < 100; ++i) adam_step(s, p, Vector::Zero(3), 0.1);
  EXPECT_EQ(p, before);
}

TEST(Adam, RejectsBadInput) {
  AdamState s(2);
  Vector p = Vector::Zero(2);
  EXPECT_THROW(adam_step(s, p, Vector::Zero(3), 0.1), ValidationError);
  Vector g(2);
  g << 1.0, std::numeric_limits<double>::infinity();
  EXPECT_THROW(adam_step(s, p, g, 0.1), TrainingFault);
}

TEST(Adam, MatchesHandWrittenRecurrence) {
  AdamState s(1);
  Vector p = Vector::Constant(1, 0.3);
  double m = 0, v = 0, x = 0.3;
  const double grads[] = {0.5, -0.2, 0.9, 0.1};
  for (int t = 1; t <= 4; ++t) {
    const double g = grads[t - 1];
    adam_step(s, p, Vector::Constant(1, g), 0.05);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    x -= 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    EXPECT_NEAR(p[0], x, 1e-15);
  }
}

TEST(Train, CloneOfTeacherHasNoKlGap) {
  const MaskedTeacher teacher = make_teacher({6, 12, 12, 2}, 6, 3);
  TrainConfig cfg;
  cfg.segments = {{5, 50, 0.01}};
  cfg.loss = Loss::cross_entropy();
  cfg.eval_samples = 20000;
  const TrainResult r = train(teacher.net(), teacher, cfg);
  EXPECT_LT(r.eval.excess, 1e-6);
  ASSERT_TRUE(r.eval.teacher_entropy.has_value());
  EXPECT_NEAR(r.eval.loss, *r.eval.teacher_entropy, 1e-6);
}

TEST(Train, SmoothedLossDecreases) {
  const MaskedTeacher teacher = make_teacher({20, 48, 48, 2}, 2, 8);
  TrainConfig cfg;
  cfg.segments = {{1500, 200, 0.003}};
  cfg.loss = Loss::mse();
  cfg.trace_every = 100;
  cfg.eval_samples = 5000;
  const TrainResult r = train(init_mlp({20, 64, 64, 2}, 9), teacher, cfg);
  ASSERT_EQ(r.trace.size(), 15u);
  for (std::size_t i = 1; i < 6; ++i) EXPECT_LT(r.trace[i].loss, r.trace[i - 1].loss) << "window " << i;
  EXPECT_LT(r.trace.back().loss, 0.1 * r.trace.front().loss);
  EXPECT_EQ(r.trace.back().step, 1500);
}

TEST(Train, SameSeedIsBitIdentical) {
  const MaskedTeacher teacher = make_teacher({5, 10, 2}, 3, 1);
  TrainConfig cfg;
  cfg.segments = {{200, 32, 0.01}, {100, 64, 0.001}};
  cfg.loss = Loss::cross_entropy();
  cfg.seed = 77;
  cfg.eval_samples = 3000;
  const TrainResult a = train(init_mlp({5, 8, 8, 2}, 2), teacher, cfg);
  const TrainResult b = train(init_mlp({5, 8, 8, 2}, 2), teacher, cfg);
  EXPECT_EQ(a.eval.loss, b.eval.loss);
  EXPECT_EQ(a.net, b.net);
  ASSERT_EQ(a.trace.size(), b.trace.size());
  EXPECT_EQ(trace_csv(a.trace), trace_csv(b.trace));
}

TEST(Train, NonFiniteTargetsAbortWithTrace) {
  TrainConfig cfg;
  cfg.segments = {{10, 4, 0.01}};
  try {
    train(init_mlp({2, 3, 1}, 1), NanTarget{}, cfg);
    FAIL() << "expected DivergenceError";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
  }
}

TEST(Train, ConfigValidation) {
  TrainConfig cfg;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.segments = {{0, 10, 0.1}};
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.segments = {{1, 0, 0.1}};
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.segments = {{1, 10, 0.0}};
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg.segments = {{1, 10, 0.1}};
  EXPECT_NO_THROW(cfg.validate());
  const MaskedTeacher teacher = make_teacher({5, 4, 2}, 2, 1);
  EXPECT_THROW(train(init_mlp({4, 4, 2}, 1), teacher, cfg), ValidationError);
}

TEST(Checkpoint, JsonRoundTripIsBitExact) {
  const Mlp net = init_mlp({3, 7, 2}, 12);
  EXPECT_EQ(mlp_from_json(nlohmann::ordered_json::parse(to_json(net).dump())), net);
  auto j = to_json(net);
  j["params"].erase(0);
  EXPECT_THROW(mlp_from_json(j), ParseError);
}

TEST(KlScaling, QuarticInOneAndTwoDimensions) {
  const std::vector<double> sides = {0.2, 0.1, 0.05, 0.025};
  for (int dim : {1, 2}) {
    const SmoothLogits f(dim, 3, 4, 31 + static_cast<std::uint64_t>(dim));
    const Eigen::VectorXd center = Eigen::VectorXd::Constant(dim, 0.1);
    EXPECT_NEAR(kl_scaling_slope(f, center, sides).slope, 4.0, 0.2) << "dim " << dim;
  }
}
