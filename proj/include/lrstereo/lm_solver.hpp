#pragma once

// Damped nonlinear least squares (Levenberg-Marquardt).
//
// Residuals follow r = y - f(theta). The Jacobian handled here is that of the
// residual, J_r = -J_f, so the update theta + (J_f^T J_f + lambda I)^-1 J_f^T r
// is computed as theta - (J_r^T J_r + lambda I)^-1 J_r^T r.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lrstereo/errors.hpp"

namespace lrstereo {

struct LeastSquaresProblem {
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> residual_fn;
  /// Optional Jacobian of residual_fn (N x P).
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&)> jacobian_fn;
};

struct LMSettings {
  double lambda_init = 1e-3;
  double lambda_up = 10.0;
  double lambda_down = 0.1;
  int max_iter = 200;
  double cost_tol = 1e-12;
  double step_tol = 1e-12;
  /// Damp with diag(J^T J) instead of the identity.
  bool diagonal_scaling = false;
  /// Damping ceiling; once exceeded the iterate is treated as stationary.
  double lambda_max = 1e32;

  void validate() const {
    if (!(lambda_init > 0.0) || !(lambda_up > 1.0) || !(lambda_down > 0.0) || !(lambda_down < 1.0) ||
        max_iter < 0 || !(cost_tol >= 0.0) || !(step_tol >= 0.0)) {
      throw Error(ErrorCode::ConfigError, "LM settings require lambda_init > 0 and lambda_up > 1 > lambda_down > 0");
    }
  }
};

enum class LMTermination { ZeroCost, CostTolerance, StepTolerance, DampingExhausted, MaxIterations };

inline std::string termination_name(LMTermination t) {
  switch (t) {
    case LMTermination::ZeroCost: return "zero_cost";
    case LMTermination::CostTolerance: return "cost_tol";
    case LMTermination::StepTolerance: return "step_tol";
    case LMTermination::DampingExhausted: return "damping_exhausted";
    case LMTermination::MaxIterations: return "max_iter";
  }
  return "unknown";
}

struct LMReport {
  Eigen::VectorXd theta_final;
  /// 0.5 * |r|^2 at theta0 followed by one entry per accepted step.
  std::vector<double> cost_history;
  int iterations = 0;
  int accepted_steps = 0;
  bool converged = false;
  LMTermination termination = LMTermination::MaxIterations;

  double final_cost() const { return cost_history.empty() ? 0.0 : cost_history.back(); }
};

/// Central-difference Jacobian of the residual; the step for parameter j is
/// h * max(1, |theta_j|).
inline Eigen::MatrixXd numeric_jacobian(const LeastSquaresProblem& problem, const Eigen::VectorXd& theta,
                                        double h = 1e-6) {
  const Eigen::Index p = theta.size();
  Eigen::MatrixXd jac;
  Eigen::VectorXd work = theta;
  for (Eigen::Index j = 0; j < p; ++j) {
    const double step = h * std::max(1.0, std::abs(theta[j]));
    work[j] = theta[j] + step;
    const Eigen::VectorXd plus = problem.residual_fn(work);
    work[j] = theta[j] - step;
    const Eigen::VectorXd minus = problem.residual_fn(work);
    work[j] = theta[j];
    if (!plus.allFinite() || !minus.allFinite()) {
      throw Error(ErrorCode::NonFiniteResidual, "residual not finite near parameter " + std::to_string(j));
    }
    if (j == 0) jac.resize(plus.size(), p);
    jac.col(j) = (plus - minus) / (2.0 * step);
  }
  if (p == 0) jac.resize(problem.residual_fn(theta).size(), 0);
  return jac;
}

namespace detail {

inline std::optional<Eigen::VectorXd> solve_damped(const Eigen::MatrixXd& jtj, const Eigen::VectorXd& jtr,
                                                   double lambda, bool diagonal_scaling) {
  Eigen::MatrixXd lhs = jtj;
  if (diagonal_scaling) {
    lhs.diagonal() += lambda * jtj.diagonal().cwiseMax(1e-300);
  } else {
    lhs.diagonal().array() += lambda;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(lhs);
  if (llt.info() == Eigen::Success) {
    Eigen::VectorXd step = llt.solve(-jtr);
    if (step.allFinite()) return step;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(lhs);
  if (qr.rank() == lhs.cols()) {
    Eigen::VectorXd step = qr.solve(-jtr);
    if (step.allFinite()) return step;
  }
  return std::nullopt;
}

}  // namespace detail

/// Minimizes 0.5 * |r(theta)|^2 starting from theta0.
///
/// A trial step is accepted only if it lowers the cost; otherwise lambda is
/// multiplied by lambda_up and the step is recomputed from the same
/// linearization. Trial points with non-finite residuals count as rejected.
inline LMReport solve(const LeastSquaresProblem& problem, const Eigen::VectorXd& theta0,
                      const LMSettings& settings = {}) {
  settings.validate();
  LMReport report;
  Eigen::VectorXd theta = theta0;
  Eigen::VectorXd r = problem.residual_fn(theta);
  if (!r.allFinite()) throw Error(ErrorCode::NonFiniteResidual, "residual not finite at the initial parameters");
  double cost = 0.5 * r.squaredNorm();
  report.cost_history.push_back(cost);

  const auto finish = [&](LMTermination why, bool converged) {
    report.theta_final = theta;
    report.termination = why;
    report.converged = converged;
    return report;
  };
  if (cost == 0.0) return finish(LMTermination::ZeroCost, true);

  double lambda = settings.lambda_init;
  for (int iter = 0; iter < settings.max_iter; ++iter) {
    report.iterations = iter + 1;
    const Eigen::MatrixXd jac = problem.jacobian_fn ? problem.jacobian_fn(theta) : numeric_jacobian(problem, theta);
    if (!jac.allFinite()) throw Error(ErrorCode::NonFiniteResidual, "Jacobian not finite");
    if (jac.rows() != r.size() || jac.cols() != theta.size()) {
      throw Error(ErrorCode::DimensionMismatch, "Jacobian shape does not match residuals and parameters");
    }
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd jtr = jac.transpose() * r;

    bool accepted = false;
    bool any_solvable = false;
    while (lambda <= settings.lambda_max) {
      const std::optional<Eigen::VectorXd> step = detail::solve_damped(jtj, jtr, lambda, settings.diagonal_scaling);
      if (!step) {
        lambda *= settings.lambda_up;
        continue;
      }
      any_solvable = true;
      const double step_norm = step->norm();
      if (step_norm <= settings.step_tol * (theta.norm() + settings.step_tol)) {
        return finish(LMTermination::StepTolerance, true);
      }
      const Eigen::VectorXd trial = theta + *step;
      const Eigen::VectorXd r_trial = problem.residual_fn(trial);
      const double cost_trial = r_trial.allFinite() ? 0.5 * r_trial.squaredNorm()
                                                    : std::numeric_limits<double>::infinity();
      if (cost_trial < cost) {
        const double rel_decrease = (cost - cost_trial) / cost;
        theta = trial;
        r = r_trial;
        cost = cost_trial;
        report.cost_history.push_back(cost);
        ++report.accepted_steps;
        lambda = std::max(lambda * settings.lambda_down, 1e-300);
        accepted = true;
        if (cost == 0.0) return finish(LMTermination::ZeroCost, true);
        if (rel_decrease < settings.cost_tol) return finish(LMTermination::CostTolerance, true);
        break;
      }
      lambda *= settings.lambda_up;
    }
    if (!accepted) {
      if (!any_solvable) {
        throw Error(ErrorCode::SingularNormalEquations, "damped normal equations could not be solved");
      }
      return finish(LMTermination::DampingExhausted, true);
    }
  }
  return finish(LMTermination::MaxIterations, false);
}

}  // namespace lrstereo
