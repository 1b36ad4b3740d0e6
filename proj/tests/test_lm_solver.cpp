#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lrstereo/lm_solver.hpp"

using namespace lrstereo;

namespace {

LeastSquaresProblem rosenbrock() {
  LeastSquaresProblem p;
  p.residual_fn = [](const Eigen::VectorXd& t) {
    Eigen::VectorXd r(2);
    r << 10.0 * (t[1] - t[0] * t[0]), 1.0 - t[0];
    return r;
  };
  p.jacobian_fn = [](const Eigen::VectorXd& t) {
    Eigen::MatrixXd j(2, 2);
    j << -20.0 * t[0], 10.0, -1.0, 0.0;
    return j;
  };
  return p;
}

}  // namespace

TEST(Solver, RosenbrockReachesTheMinimum) {
  const LMReport rep = solve(rosenbrock(), Eigen::Vector2d(-1.2, 1.0));
  EXPECT_TRUE(rep.converged);
  EXPECT_NEAR(rep.theta_final[0], 1.0, 1e-8);
  EXPECT_NEAR(rep.theta_final[1], 1.0, 1e-8);
}

TEST(Solver, NumericJacobianWhenNoneGiven) {
  LeastSquaresProblem p = rosenbrock();
  p.jacobian_fn = nullptr;
  const LMReport rep = solve(p, Eigen::Vector2d(-1.2, 1.0));
  EXPECT_NEAR(rep.theta_final[0], 1.0, 1e-6);
}

TEST(Solver, LinearProblemMatchesQr) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  const Eigen::MatrixXd a = Eigen::MatrixXd::NullaryExpr(30, 4, [&] { return g(rng); });
  const Eigen::VectorXd b = Eigen::VectorXd::NullaryExpr(30, [&] { return g(rng); });
  LeastSquaresProblem p;
  p.residual_fn = [&](const Eigen::VectorXd& t) { return Eigen::VectorXd(a * t - b); };
  p.jacobian_fn = [&](const Eigen::VectorXd&) { return a; };
  const LMReport rep = solve(p, Eigen::VectorXd::Zero(4));
  const Eigen::VectorXd ref = a.colPivHouseholderQr().solve(b);
  EXPECT_LT((rep.theta_final - ref).norm(), 1e-9);
}

TEST(Solver, CostHistoryNeverIncreases) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    const LMReport rep = solve(rosenbrock(), Eigen::Vector2d(u(rng), u(rng)));
    for (std::size_t i = 1; i < rep.cost_history.size(); ++i) {
      EXPECT_LE(rep.cost_history[i], rep.cost_history[i - 1]);
    }
  }
}

TEST(Solver, ExponentialFit) {
  // y = 2 exp(-0.7 x), noise-free
  std::vector<double> xs, ys;
  for (int i = 0; i < 20; ++i) {
    xs.push_back(0.25 * i);
    ys.push_back(2.0 * std::exp(-0.7 * xs.back()));
  }
  LeastSquaresProblem p;
  p.residual_fn = [&](const Eigen::VectorXd& t) {
    Eigen::VectorXd r(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) r[i] = t[0] * std::exp(t[1] * xs[i]) - ys[i];
    return r;
  };
  const LMReport rep = solve(p, Eigen::Vector2d(1.0, 0.0));
  EXPECT_NEAR(rep.theta_final[0], 2.0, 1e-8);
  EXPECT_NEAR(rep.theta_final[1], -0.7, 1e-8);
}

TEST(Solver, ZeroCostStopsImmediately) {
  LeastSquaresProblem p;
  p.residual_fn = [](const Eigen::VectorXd& t) { return Eigen::VectorXd(t); };
  const LMReport rep = solve(p, Eigen::VectorXd::Zero(3));
  EXPECT_EQ(rep.termination, LMTermination::ZeroCost);
  EXPECT_EQ(rep.iterations, 0);
}

TEST(Solver, IterationCapIsReported) {
  LMSettings s;
  s.max_iter = 1;
  const LMReport rep = solve(rosenbrock(), Eigen::Vector2d(-1.2, 1.0), s);
  EXPECT_EQ(rep.termination, LMTermination::MaxIterations);
  EXPECT_FALSE(rep.converged);
  EXPECT_EQ(termination_name(rep.termination), "max_iter");
}

TEST(Solver, NonFiniteStartThrows) {
  LeastSquaresProblem p;
  p.residual_fn = [](const Eigen::VectorXd& t) { return Eigen::VectorXd(t.array().log()); };
  try {
    solve(p, Eigen::Vector2d(-1.0, 1.0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteResidual);
  }
}

TEST(Solver, BadSettingsThrow) {
  LMSettings s;
  s.lambda_up = 0.5;
  try {
    solve(rosenbrock(), Eigen::Vector2d(0, 0), s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
  }
}

TEST(Solver, WrongJacobianShapeThrows) {
  LeastSquaresProblem p = rosenbrock();
  p.jacobian_fn = [](const Eigen::VectorXd&) { return Eigen::MatrixXd::Zero(3, 2); };
  try {
    solve(p, Eigen::Vector2d(0.5, 0.5));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimensionMismatch);
  }
}

TEST(NumericJacobian, MatchesAnalytic) {
  const LeastSquaresProblem p = rosenbrock();
  const Eigen::Vector2d t(0.3, -0.8);
  EXPECT_LT((numeric_jacobian(p, t) - p.jacobian_fn(t)).norm(), 1e-8);
}
