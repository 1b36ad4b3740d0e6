#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lrstereo/hybrid.hpp"

using namespace lrstereo;

namespace {

Mlp random_net(std::vector<int> sizes, std::uint64_t seed) {
  Mlp net = Mlp::seeded(std::move(sizes), seed, false);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> n(0.0, 0.3);
  for (auto& b : net.biases) {
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = n(rng);
  }
  return net;
}

double weighted_output(const Mlp& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& up) {
  return (mlp_forward(net, x).array() * up.array()).sum();
}

CalibrationResult base_calibration() {
  CalibrationResult r;
  r.intrinsics = {1600, 1600, 960, 540, 0};
  r.distortion = DistortionParams(DistortionShape::classical14(), {-0.08, 0.02, 0, 0.01, 0, 0, 5e-4, -3e-4, 2e-4, 0,
                                                                   -1e-4, 0, 1e-3, -5e-4});
  r.world_pose = Pose{};
  r.fix_skew = true;
  return r;
}

// Long-range points seen by a camera whose principal point sits 1.5 px right
// of the base calibration's.
std::vector<TrainingPoint> shifted_points(const CalibrationResult& base, int n, std::uint64_t seed) {
  Intrinsics truth = base.intrinsics;
  truth.cx += 1.5;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> lateral(-0.4, 0.4);
  std::uniform_real_distribution<double> depth(100, 2000);
  std::vector<TrainingPoint> pts;
  for (int i = 0; i < n; ++i) {
    const double z = depth(rng);
    const WorldPoint w{lateral(rng) * z, lateral(rng) * z * 0.55, z};
    pts.push_back({w, project(w, *base.world_pose, truth, base.distortion)});
  }
  return pts;
}

}  // namespace

TEST(Mlp, ZeroNetGivesZero) {
  const Mlp net = Mlp::zeros({3, 5, 2});
  EXPECT_TRUE(mlp_forward(net, Eigen::VectorXd(Eigen::Vector3d(1, -2, 3))).isZero(0.0));
}

TEST(Mlp, IdentityLayer) {
  Mlp net = Mlp::zeros({3, 3});
  net.weights[0].setIdentity();
  const Eigen::VectorXd x = Eigen::Vector3d(0.5, -7, 2);
  EXPECT_EQ(mlp_forward(net, x), x);
}

TEST(Mlp, SkipWithZeroWeightsIsIdentity) {
  const Mlp net = Mlp::zeros({2, 8, 8, 2}, true);
  const Eigen::VectorXd x = Eigen::Vector2d(0.25, -0.125);
  EXPECT_EQ(mlp_forward(net, x), x);
}

TEST(Mlp, SmallNetByHand) {
  Mlp net = Mlp::zeros({2, 4, 1});
  net.weights[0] << 0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8;
  net.biases[0] << 0.01, -0.02, 0.03, -0.04;
  net.weights[1] << 0.9, -1.0, 1.1, -1.2;
  net.biases[1] << 0.05;
  const double x0 = 0.7, x1 = -0.3;
  const double h[4] = {std::tanh(0.1 * x0 - 0.2 * x1 + 0.01), std::tanh(0.3 * x0 + 0.4 * x1 - 0.02),
                       std::tanh(-0.5 * x0 + 0.6 * x1 + 0.03), std::tanh(0.7 * x0 - 0.8 * x1 - 0.04)};
  const double expected = 0.9 * h[0] - 1.0 * h[1] + 1.1 * h[2] - 1.2 * h[3] + 0.05;
  EXPECT_NEAR(mlp_forward(net, Eigen::VectorXd(Eigen::Vector2d(x0, x1)))[0], expected, 1e-15);
}

TEST(Mlp, WrongInputWidth) {
  try {
    mlp_forward(Mlp::zeros({3, 2}), Eigen::VectorXd(Eigen::Vector2d(1, 1)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
  EXPECT_THROW(Mlp::zeros({3, 4, 2}, true), Error);
}

TEST(Mlp, GradientsMatchFiniteDifferences) {
  const Mlp net = random_net({4, 8, 8, 6}, 7);
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd x(4, 3), up(6, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  for (Eigen::Index i = 0; i < up.size(); ++i) up.data()[i] = n(rng);

  const MlpGradients g = mlp_gradients(net, mlp_forward_cached(net, x), up);
  const double h = 1e-6;
  double worst = 0.0;
  const auto check = [&](double analytic, double numeric) {
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(1e-3, std::abs(numeric)));
  };
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    for (Eigen::Index i = 0; i < net.weights[l].size(); ++i) {
      Mlp p = net, m = net;
      p.weights[l].data()[i] += h;
      m.weights[l].data()[i] -= h;
      check(g.weights[l].data()[i], (weighted_output(p, x, up) - weighted_output(m, x, up)) / (2 * h));
    }
    for (Eigen::Index i = 0; i < net.biases[l].size(); ++i) {
      Mlp p = net, m = net;
      p.biases[l][i] += h;
      m.biases[l][i] -= h;
      check(g.biases[l][i], (weighted_output(p, x, up) - weighted_output(m, x, up)) / (2 * h));
    }
  }
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::MatrixXd xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    check(g.input.data()[i], (weighted_output(net, xp, up) - weighted_output(net, xm, up)) / (2 * h));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Mlp, ZeroUpstreamGivesZeroGradients) {
  const Mlp net = random_net({3, 5, 2}, 2);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(3, 2);
  const MlpGradients g = mlp_gradients(net, mlp_forward_cached(net, x), Eigen::MatrixXd::Zero(2, 2));
  for (const auto& w : g.weights) EXPECT_TRUE(w.isZero(0.0));
  for (const auto& b : g.biases) EXPECT_TRUE(b.isZero(0.0));
}

TEST(Mlp, LinearGradientIsOuterProduct) {
  const Mlp net = random_net({3, 2}, 4);
  const Eigen::Vector3d x(0.5, -1.5, 2.0);
  const Eigen::Vector2d up(0.25, -3.0);
  const MlpGradients g = mlp_gradients(net, mlp_forward_cached(net, Eigen::MatrixXd(x)), Eigen::MatrixXd(up));
  EXPECT_TRUE(g.weights[0].isApprox(up * x.transpose(), 1e-15));
  EXPECT_TRUE(g.biases[0].isApprox(Eigen::VectorXd(up), 1e-15));
}

TEST(Mlp, GradientShapeChecked) {
  const Mlp net = random_net({3, 2}, 4);
  const MlpCache cache = mlp_forward_cached(net, Eigen::MatrixXd::Ones(3, 1));
  EXPECT_THROW(mlp_gradients(net, cache, Eigen::MatrixXd::Ones(3, 1)), Error);
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  Mlp net = random_net({2, 3}, 9);
  const Mlp before = net;
  MlpGradients g;
  g.weights.push_back(Eigen::MatrixXd(3, 2));
  g.weights[0] << 1.0, -2.0, 1e-3, -5.0, 0.0, 7.0;
  g.biases.push_back(Eigen::Vector3d(-0.1, 0.2, 0.0));
  AdamSettings s;
  s.learning_rate = 1e-2;
  Adam adam(net, s);
  adam.step(net, g);
  EXPECT_EQ(adam.steps_taken(), 1);
  for (Eigen::Index i = 0; i < g.weights[0].size(); ++i) {
    const double gi = g.weights[0].data()[i];
    const double expected = gi == 0.0 ? 0.0 : -s.learning_rate * (gi > 0 ? 1.0 : -1.0);
    EXPECT_NEAR(net.weights[0].data()[i] - before.weights[0].data()[i], expected, 1e-7);
  }
  EXPECT_NEAR(net.biases[0][0] - before.biases[0][0], 1e-2, 1e-7);
}

TEST(Hybrid, FreshModelIsBase) {
  const CalibrationResult base = base_calibration();
  const HybridModel m = HybridModel::create(base, 1);
  EXPECT_TRUE(residual_deltas(m).isZero(0.0));
  const auto [a, k] = apply_residuals(m);
  EXPECT_EQ(a.as_array(), base.intrinsics.as_array());
  EXPECT_EQ(k.coeffs, base.distortion.coeffs);
  const NormalizedPoint p = undistort_learned(m, {0.31, -0.17});
  EXPECT_EQ(p.x, 0.31);
  EXPECT_EQ(p.y, -0.17);
}

TEST(Hybrid, ZeroEpochsLeavesModel) {
  const CalibrationResult base = base_calibration();
  HybridModel m = HybridModel::create(base, 1);
  const auto pts = shifted_points(base, 20, 3);
  TrainSettings s;
  s.epochs = 0;
  const TrainReport r = train(m, pts, s);
  EXPECT_EQ(r.final_rms, r.base_rms);
  EXPECT_TRUE(residual_deltas(m).isZero(0.0));
}

TEST(Hybrid, ResidualsStayWithinBounds) {
  HybridModel m = HybridModel::create(base_calibration(), 1);
  m.residual_net.biases.back().setConstant(50.0);
  m.residual_net.biases.back()[3] = -50.0;
  const Eigen::VectorXd d = residual_deltas(m);
  for (Eigen::Index i = 0; i < d.size(); ++i) EXPECT_LE(std::abs(d[i]), m.output_bound[i]);
  EXPECT_EQ(d[0], 0.02 * 1600);
  EXPECT_EQ(d[3], -5.0);
  EXPECT_EQ(d[4], 0.0);  // skew is fixed
}

TEST(Hybrid, TrainingReducesShiftError) {
  const CalibrationResult base = base_calibration();
  HybridModel m = HybridModel::create(base, 4);
  const auto pts = shifted_points(base, 30, 5);
  TrainSettings s;
  s.adam.learning_rate = 1e-3;
  s.epochs = 300;
  const TrainReport r = train(m, pts, s);
  EXPECT_GT(r.base_rms, 1.0);
  EXPECT_LT(r.final_rms, 0.5 * r.base_rms);
  EXPECT_GT(residual_deltas(m)[2], 0.5);
  ASSERT_EQ(r.loss_history.size(), 300u);
  EXPECT_LT(r.loss_history.back(), r.loss_history.front());
}

TEST(Hybrid, TrainingIsDeterministic) {
  const CalibrationResult base = base_calibration();
  const auto pts = shifted_points(base, 15, 6);
  TrainSettings s;
  s.adam.learning_rate = 1e-3;
  s.epochs = 30;
  HybridModel a = HybridModel::create(base, 9);
  HybridModel b = HybridModel::create(base, 9);
  train(a, pts, s);
  train(b, pts, s);
  EXPECT_EQ(residual_deltas(a), residual_deltas(b));
  EXPECT_EQ(a.inverse_net.weights[1], b.inverse_net.weights[1]);
}

TEST(Hybrid, NeedsWorldPose) {
  CalibrationResult base = base_calibration();
  const auto pts = shifted_points(base, 5, 1);
  base.world_pose.reset();
  HybridModel m = HybridModel::create(base, 1);
  try {
    train(m, pts);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
  }
}

TEST(Hybrid, EmptyTrainingSet) {
  HybridModel m = HybridModel::create(base_calibration(), 1);
  try {
    train(m, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}
