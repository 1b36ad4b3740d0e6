#pragma once

// Hybrid distortion model: a calibrated base camera plus a learned additive
// residual on its parameters and a learned inverse (undistortion) map.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "lrstereo/calibration.hpp"
#include "lrstereo/errors.hpp"
#include "lrstereo/geometry.hpp"
#include "lrstereo/mlp.hpp"

namespace lrstereo {

struct HybridModel {
  CalibrationResult base;
  Mlp residual_net;
  Mlp inverse_net;
  double lambda_cycle = 0.1;
  std::uint64_t seed = 0;
  /// Residual-net input is base_vector() / input_scale.
  Eigen::VectorXd input_scale;
  /// Residual-net outputs are multiplied by these bounds after clamping to [-1, 1].
  Eigen::VectorXd output_bound;

  /// [fx fy cx cy skew K...]
  Eigen::VectorXd base_vector() const {
    const auto a = base.intrinsics.as_array();
    const std::vector<double>& k = base.distortion.coeffs;
    Eigen::VectorXd v(5 + k.size());
    for (int i = 0; i < 5; ++i) v[i] = a[i];
    for (std::size_t i = 0; i < k.size(); ++i) v[5 + i] = k[i];
    return v;
  }

  std::size_t parameter_count() const { return 5 + base.distortion.coeffs.size(); }

  void validate() const {
    const auto n = static_cast<Eigen::Index>(parameter_count());
    residual_net.validate();
    inverse_net.validate();
    if (residual_net.input_size() != n || residual_net.output_size() != n) {
      throw Error(ErrorCode::DimensionMismatch, "residual network must map " + std::to_string(n) + " values to " +
                                                    std::to_string(n));
    }
    if (inverse_net.input_size() != 2 || inverse_net.output_size() != 2) {
      throw Error(ErrorCode::DimensionMismatch, "inverse network must map 2 values to 2");
    }
    if (input_scale.size() != n || output_bound.size() != n) {
      throw Error(ErrorCode::DimensionMismatch, "normalization constants do not match the parameter count");
    }
    if (!(lambda_cycle >= 0.0)) throw Error(ErrorCode::ConfigError, "lambda_cycle must be non-negative");
  }

  /// Fresh model around `base`: hidden layers seeded, final layers zero.
  static HybridModel create(const CalibrationResult& base, std::uint64_t seed, double lambda_cycle = 0.1,
                            int hidden = 32) {
    HybridModel m;
    m.base = base;
    m.lambda_cycle = lambda_cycle;
    m.seed = seed;
    const int n = static_cast<int>(m.parameter_count());
    m.residual_net = Mlp::seeded({n, hidden, hidden, n}, seed, true);
    m.inverse_net = Mlp::seeded({2, hidden, hidden, 2}, seed ^ 0x9e3779b97f4a7c15ULL, true, true);

    const Eigen::VectorXd v = m.base_vector();
    m.input_scale = v.cwiseAbs().array() + 1.0;
    m.output_bound.resize(n);
    m.output_bound[0] = 0.02 * base.intrinsics.fx;
    m.output_bound[1] = 0.02 * base.intrinsics.fx;
    m.output_bound[2] = 5.0;
    m.output_bound[3] = 5.0;
    m.output_bound[4] = base.fix_skew ? 0.0 : 5.0;
    for (int i = 5; i < n; ++i) m.output_bound[i] = 0.5 * (std::abs(v[i]) + 1e-3);
    return m;
  }
};

namespace detail {

inline Eigen::VectorXd residual_input(const HybridModel& m) {
  return m.base_vector().cwiseQuotient(m.input_scale);
}

inline Eigen::VectorXd deltas_from_output(const HybridModel& m, const Eigen::VectorXd& out) {
  return out.cwiseMax(-1.0).cwiseMin(1.0).cwiseProduct(m.output_bound);
}

inline std::pair<Intrinsics, DistortionParams> params_from_vector(const HybridModel& m, const Eigen::VectorXd& v) {
  Intrinsics a = Intrinsics::from_array({v[0], v[1], v[2], v[3], v[4]});
  DistortionParams k = m.base.distortion;
  for (std::size_t i = 0; i < k.coeffs.size(); ++i) k.coeffs[i] = v[5 + static_cast<Eigen::Index>(i)];
  return {a, k};
}

}  // namespace detail

/// Residuals (delta_A, delta_K) currently produced by the network.
inline Eigen::VectorXd residual_deltas(const HybridModel& model) {
  model.validate();
  return detail::deltas_from_output(model, mlp_forward(model.residual_net, detail::residual_input(model)));
}

/// Effective (A, K) = (A* + delta_A, K* + delta_K).
inline std::pair<Intrinsics, DistortionParams> apply_residuals(const HybridModel& model) {
  return detail::params_from_vector(model, model.base_vector() + residual_deltas(model));
}

inline NormalizedPoint undistort_learned(const HybridModel& model, const NormalizedPoint& p_d) {
  const Eigen::VectorXd out = mlp_forward(model.inverse_net, Eigen::VectorXd(Eigen::Vector2d(p_d.x, p_d.y)));
  return {out[0], out[1]};
}

struct TrainingPoint {
  WorldPoint world;
  ImagePoint pixel;
};

struct TrainSettings {
  AdamSettings adam;
  int epochs = 2000;
  /// Relative central-difference step for d loss / d (A, K).
  double fd_step = 1e-6;

  void validate() const {
    adam.validate();
    if (epochs < 0) throw Error(ErrorCode::ConfigError, "epochs must be non-negative");
    if (!(fd_step > 0.0)) throw Error(ErrorCode::ConfigError, "fd_step must be positive");
  }
};

struct TrainReport {
  std::vector<double> loss_history;        // total loss per epoch, before that epoch's update
  std::vector<double> reprojection_history;
  std::vector<double> cycle_history;
  int epochs = 0;
  double base_rms = 0.0;   // training-point RMS of the base model, pixels
  double final_rms = 0.0;  // training-point RMS after training, pixels
};

namespace detail {

struct HybridLoss {
  double reprojection = 0.0;  // mean squared pixel error per coordinate
  double cycle = 0.0;         // mean squared normalized round-trip error per coordinate
  double total = 0.0;
  Eigen::Matrix2Xd y1;         // distorted normalized points
  Eigen::Matrix2Xd inv;        // inverse-net output for y1
  MlpCache inv_cache;
};

/// Camera-frame normalized coordinates of the training points under the
/// base model's world pose.
inline Eigen::Matrix2Xd ideal_normalized(const HybridModel& m, const std::vector<TrainingPoint>& pts) {
  if (!m.base.world_pose) {
    throw Error(ErrorCode::ConfigError, "hybrid training needs a base calibration with a world pose");
  }
  Eigen::Matrix2Xd x(2, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Eigen::Vector3d xc = m.base.world_pose->apply(pts[i].world.vec());
    if (!(xc.z() > 0.0)) throw Error(ErrorCode::BehindCamera, "training point " + std::to_string(i));
    x.col(static_cast<Eigen::Index>(i)) = xc.head<2>() / xc.z();
  }
  return x;
}

inline Eigen::Vector2d distort_vec(const Eigen::Vector2d& p, const DistortionParams& k) {
  const DistortedPoint<double> d = distort_generic<double>(p.x(), p.y(), k.shape, k.coeffs.data());
  if (!d.valid) return Eigen::Vector2d::Constant(std::numeric_limits<double>::quiet_NaN());
  return {d.x, d.y};
}

inline HybridLoss evaluate_loss(const HybridModel& m, const Eigen::VectorXd& params, const Eigen::Matrix2Xd& x_ideal,
                                const Eigen::Matrix2Xd& observed) {
  const auto [a, k] = params_from_vector(m, params);
  const Eigen::Index n = x_ideal.cols();
  HybridLoss out;
  out.y1.resize(2, n);
  double rep = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    out.y1.col(i) = distort_vec(x_ideal.col(i), k);
    const ImagePoint px = to_pixel({out.y1(0, i), out.y1(1, i)}, a);
    rep += (Eigen::Vector2d(px.u, px.v) - observed.col(i)).squaredNorm();
  }
  out.inv_cache = mlp_forward_cached(m.inverse_net, out.y1);
  out.inv = out.inv_cache.output();
  double cyc = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    cyc += (distort_vec(out.inv.col(i), k) - out.y1.col(i)).squaredNorm();
  }
  const double denom = 2.0 * static_cast<double>(std::max<Eigen::Index>(n, 1));
  out.reprojection = rep / denom;
  out.cycle = cyc / denom;
  out.total = out.reprojection + m.lambda_cycle * out.cycle;
  return out;
}

}  // namespace detail

/// RMS pixel error of the model's effective parameters on (world, pixel) pairs.
inline double hybrid_rms(const HybridModel& model, const std::vector<TrainingPoint>& pts) {
  const Eigen::Matrix2Xd x = detail::ideal_normalized(model, pts);
  const auto [a, k] = apply_residuals(model);
  double sum = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Eigen::Vector2d d = detail::distort_vec(x.col(static_cast<Eigen::Index>(i)), k);
    const ImagePoint px = to_pixel({d.x(), d.y()}, a);
    sum += std::pow(px.u - pts[i].pixel.u, 2) + std::pow(px.v - pts[i].pixel.v, 2);
  }
  return pts.empty() ? 0.0 : std::sqrt(sum / static_cast<double>(pts.size()));
}

/// Full-batch ADAM on MSE(pixels) + lambda * MSE(y1, distort(inverse(y1))).
///
/// Gradients of the loss with respect to the effective (A, K) come from
/// central differences; everything inside the two networks is backpropagated.
inline TrainReport train(HybridModel& model, const std::vector<TrainingPoint>& pts, const TrainSettings& settings = {}) {
  settings.validate();
  model.validate();
  if (pts.empty()) throw Error(ErrorCode::DimensionMismatch, "no training points");

  const Eigen::Matrix2Xd x_ideal = detail::ideal_normalized(model, pts);
  Eigen::Matrix2Xd observed(2, x_ideal.cols());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    observed.col(static_cast<Eigen::Index>(i)) << pts[i].pixel.u, pts[i].pixel.v;
  }

  TrainReport report;
  report.base_rms = hybrid_rms(model, pts);
  const Eigen::VectorXd v0 = model.base_vector();
  const Eigen::MatrixXd input = detail::residual_input(model);
  Adam adam_res(model.residual_net, settings.adam);
  Adam adam_inv(model.inverse_net, settings.adam);
  const Eigen::Index n_params = v0.size();
  const double n_pts = static_cast<double>(pts.size());

  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    const MlpCache res_cache = mlp_forward_cached(model.residual_net, input);
    const Eigen::VectorXd out = res_cache.output().col(0);
    const Eigen::VectorXd params = v0 + detail::deltas_from_output(model, out);
    const detail::HybridLoss loss = detail::evaluate_loss(model, params, x_ideal, observed);
    if (!std::isfinite(loss.total)) {
      throw Error(ErrorCode::NonFiniteLoss, "loss diverged at epoch " + std::to_string(epoch));
    }
    report.loss_history.push_back(loss.total);
    report.reprojection_history.push_back(loss.reprojection);
    report.cycle_history.push_back(loss.cycle);

    // d loss / d params, then through the clamp and bound scaling.
    Eigen::MatrixXd upstream_res = Eigen::MatrixXd::Zero(n_params, 1);
    Eigen::VectorXd work = params;
    for (Eigen::Index j = 0; j < n_params; ++j) {
      if (model.output_bound[j] == 0.0 || std::abs(out[j]) >= 1.0) continue;
      const double h = settings.fd_step * std::max(1.0, std::abs(params[j]));
      work[j] = params[j] + h;
      const double plus = detail::evaluate_loss(model, work, x_ideal, observed).total;
      work[j] = params[j] - h;
      const double minus = detail::evaluate_loss(model, work, x_ideal, observed).total;
      work[j] = params[j];
      const double g = (plus - minus) / (2.0 * h);
      if (!std::isfinite(g)) {
        throw Error(ErrorCode::NonFiniteLoss, "loss gradient diverged at epoch " + std::to_string(epoch));
      }
      upstream_res(j, 0) = g * model.output_bound[j];
    }

    // Cycle term through the inverse network: d/dz of |distort(z) - y1|^2 / (2n).
    const auto [a_eff, k_eff] = detail::params_from_vector(model, params);
    Eigen::MatrixXd upstream_inv(2, loss.inv.cols());
    constexpr double h = 1e-7;
    for (Eigen::Index i = 0; i < loss.inv.cols(); ++i) {
      const Eigen::Vector2d z = loss.inv.col(i);
      Eigen::Matrix2d jac;
      for (int c = 0; c < 2; ++c) {
        Eigen::Vector2d dz = Eigen::Vector2d::Zero();
        dz[c] = h;
        jac.col(c) = (detail::distort_vec(z + dz, k_eff) - detail::distort_vec(z - dz, k_eff)) / (2.0 * h);
      }
      const Eigen::Vector2d err = detail::distort_vec(z, k_eff) - loss.y1.col(i);
      upstream_inv.col(i) = model.lambda_cycle * jac.transpose() * err / n_pts;
    }
    if (!upstream_inv.allFinite()) {
      throw Error(ErrorCode::NonFiniteLoss, "inverse gradient diverged at epoch " + std::to_string(epoch));
    }

    adam_res.step(model.residual_net, mlp_gradients(model.residual_net, res_cache, upstream_res));
    adam_inv.step(model.inverse_net, mlp_gradients(model.inverse_net, loss.inv_cache, upstream_inv));
  }
  report.epochs = settings.epochs;
  report.final_rms = hybrid_rms(model, pts);
  if (!std::isfinite(report.final_rms)) {
    throw Error(ErrorCode::NonFiniteLoss, "final model is not finite");
  }
  return report;
}

}  // namespace lrstereo
