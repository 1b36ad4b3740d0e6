#pragma once

// Planar-target camera calibration: homographies, closed-form intrinsics and
// extrinsics, linear radial initialization, joint LM refinement of every
// parameter, and the distortion model-order sweep.

#include <Eigen/Core>
#include <Eigen/Dense>
#include <Eigen/SVD>
#include <unsupported/Eigen/AutoDiff>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lrstereo/errors.hpp"
#include "lrstereo/geometry.hpp"
#include "lrstereo/lm_solver.hpp"

namespace lrstereo {

/// Checkerboard model points (x, y, 0), row-major, in meters.
struct PlanarTarget {
  int rows = 0;
  int cols = 0;
  double square_size = 0.0;
  std::vector<Eigen::Vector3d> points;

  static PlanarTarget grid(int rows, int cols, double square_size) {
    if (rows < 1 || cols < 1 || !(square_size > 0.0)) {
      throw Error(ErrorCode::ConfigError, "target grid needs rows, cols >= 1 and a positive square size");
    }
    PlanarTarget t{rows, cols, square_size, {}};
    t.points.reserve(static_cast<std::size_t>(rows * cols));
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) t.points.emplace_back(c * square_size, r * square_size, 0.0);
    }
    return t;
  }

  std::vector<Eigen::Vector2d> plane_points() const {
    std::vector<Eigen::Vector2d> out;
    out.reserve(points.size());
    for (const auto& p : points) out.emplace_back(p.x(), p.y());
    return out;
  }
};

/// Ties one view's board frame to the world frame, so the camera's pose in
/// the world can be derived from that view's extrinsics.
struct WorldReference {
  int view = 0;
  Pose board_to_world;
};

struct CorrespondenceSet {
  PlanarTarget target;
  std::vector<std::vector<ImagePoint>> views;
  std::vector<std::string> view_ids;
  std::optional<WorldReference> world_reference;

  std::size_t point_count() const { return target.points.size(); }

  void validate() const {
    if (target.points.size() != static_cast<std::size_t>(target.rows * target.cols)) {
      throw Error(ErrorCode::FormatError, "target point count does not equal rows * cols");
    }
    for (std::size_t i = 0; i < views.size(); ++i) {
      if (views[i].size() != target.points.size()) {
        throw Error(ErrorCode::LengthMismatch, "view " + std::to_string(i) + " has " +
                                                   std::to_string(views[i].size()) + " points, target has " +
                                                   std::to_string(target.points.size()));
      }
    }
    if (world_reference && (world_reference->view < 0 || world_reference->view >= static_cast<int>(views.size()))) {
      throw Error(ErrorCode::FormatError, "world reference names a view that does not exist");
    }
  }
};

struct CalibrationOptions {
  DistortionShape shape = DistortionShape::classical14();
  LMSettings lm;
  bool fix_skew = true;
  /// Warm start; skips the closed-form initialization when set.
  std::optional<Intrinsics> initial_intrinsics;
  std::optional<DistortionParams> initial_distortion;
  std::optional<std::vector<Pose>> initial_poses;
  /// Radius (normalized units) within which every LM iterate must keep a
  /// pole-free, monotone radial map. Unset: 1.2 x the largest observed
  /// radius under the initial intrinsics. 0 disables the check.
  std::optional<double> validity_radius;
  /// Weight (pixels per unit coefficient) of a zero-mean prior on every
  /// distortion coefficient. High-order rational models have near-null
  /// directions where numerator and denominator cancel; the prior picks the
  /// small-coefficient member. 0 disables it.
  double coefficient_prior = 0.0;
};

struct CalibrationResult {
  Intrinsics intrinsics;
  DistortionParams distortion;
  std::vector<Pose> poses;
  double rms_error = 0.0;
  std::vector<double> per_view_rms;
  std::optional<Pose> world_pose;
  /// Radius used by the radial validity check during refinement.
  double validity_radius = 0.0;

  // settings used
  LMSettings lm_settings;
  bool fix_skew = true;
  int lm_iterations = 0;
  bool converged = false;
  std::string termination;
};

// ---------------------------------------------------------------------------
// Homography

namespace detail {

inline Eigen::Matrix3d hartley_normalizer(const std::vector<Eigen::Vector2d>& pts) {
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  double dist = 0.0;
  for (const auto& p : pts) dist += (p - mean).norm();
  dist /= static_cast<double>(pts.size());
  const double s = dist > 0.0 ? std::sqrt(2.0) / dist : 1.0;
  Eigen::Matrix3d t;
  t << s, 0.0, -s * mean.x(), 0.0, s, -s * mean.y(), 0.0, 0.0, 1.0;
  return t;
}

}  // namespace detail

/// Normalized DLT homography mapping plane points (x, y) to pixels.
inline Eigen::Matrix3d estimate_homography(const std::vector<Eigen::Vector2d>& model_pts,
                                           const std::vector<ImagePoint>& image_pts) {
  if (model_pts.size() != image_pts.size()) {
    throw Error(ErrorCode::LengthMismatch, "homography needs equally many model and image points");
  }
  const std::size_t n = model_pts.size();
  if (n < 4) throw Error(ErrorCode::DegenerateConfiguration, "homography needs at least 4 correspondences");

  std::vector<Eigen::Vector2d> img(n);
  for (std::size_t i = 0; i < n; ++i) img[i] = {image_pts[i].u, image_pts[i].v};
  const Eigen::Matrix3d tm = detail::hartley_normalizer(model_pts);
  const Eigen::Matrix3d ti = detail::hartley_normalizer(img);

  Eigen::MatrixXd design(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d m = tm * model_pts[i].homogeneous();
    const Eigen::Vector3d q = ti * img[i].homogeneous();
    const double x = m.x(), y = m.y(), u = q.x(), v = q.y();
    design.row(2 * i) << -x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u;
    design.row(2 * i + 1) << 0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v;
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (sv.size() < 8 || sv(7) <= 1e-10 * sv(0)) {
    throw Error(ErrorCode::DegenerateConfiguration, "homography design matrix is rank deficient");
  }
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  Eigen::Matrix3d hom = ti.inverse() * hn * tm;
  if (std::abs(hom(2, 2)) > 1e-15 * hom.norm()) hom /= hom(2, 2);
  return hom;
}

// ---------------------------------------------------------------------------
// Closed-form intrinsics and extrinsics

namespace detail {

inline Eigen::Matrix<double, 1, 6> zhang_row(const Eigen::Matrix3d& h, int i, int j) {
  Eigen::Matrix<double, 1, 6> v;
  v << h(0, i) * h(0, j), h(0, i) * h(1, j) + h(1, i) * h(0, j), h(1, i) * h(1, j),
      h(2, i) * h(0, j) + h(0, i) * h(2, j), h(2, i) * h(1, j) + h(1, i) * h(2, j), h(2, i) * h(2, j);
  return v;
}

}  // namespace detail

/// Closed-form intrinsics from plane-to-image homographies, using the two
/// orthonormality constraints each view places on B = A^-T A^-1.
inline Intrinsics intrinsics_from_homographies(const std::vector<Eigen::Matrix3d>& homographies, bool fix_skew) {
  const std::size_t needed = fix_skew ? 2 : 3;
  if (homographies.size() < needed) {
    throw Error(ErrorCode::DegenerateConfiguration, "closed-form intrinsics need at least " +
                                                        std::to_string(needed) + " views");
  }
  const Eigen::Index rows = std::max<Eigen::Index>(6, 2 * homographies.size() + (fix_skew ? 1 : 0));
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(rows, 6);
  Eigen::Index row = 0;
  for (const Eigen::Matrix3d& h_raw : homographies) {
    const Eigen::Matrix3d h = h_raw / h_raw.norm();
    v.row(row++) = detail::zhang_row(h, 0, 1);
    v.row(row++) = detail::zhang_row(h, 0, 0) - detail::zhang_row(h, 1, 1);
  }
  if (fix_skew) v(row++, 1) = 1.0;

  // Column equilibration: B's entries span many orders of magnitude in pixels.
  Eigen::VectorXd col_scale = v.colwise().norm().transpose();
  for (Eigen::Index c = 0; c < 6; ++c) {
    if (!(col_scale(c) > 0.0)) col_scale(c) = 1.0;
  }
  const Eigen::MatrixXd v_scaled = v * col_scale.cwiseInverse().asDiagonal();
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(v_scaled, Eigen::ComputeFullV);
  const Eigen::VectorXd& sv = svd.singularValues();
  if (!(sv(4) > 1e-9 * sv(0))) {
    throw Error(ErrorCode::DegenerateConfiguration, "views are too close to parallel to determine intrinsics");
  }
  Eigen::VectorXd b = col_scale.cwiseInverse().asDiagonal() * svd.matrixV().col(5);
  if (b(0) < 0.0) b = -b;
  const double b11 = b(0), b22 = b(2), b13 = b(3), b23 = b(4), b33 = b(5);
  const double b12_eff = fix_skew ? 0.0 : b(1);
  const double det = b11 * b22 - b12_eff * b12_eff;
  if (!(b11 > 0.0) || !(det > 0.0)) {
    throw Error(ErrorCode::NonPositiveDefinite, "recovered B is not positive definite");
  }
  const double v0 = (b12_eff * b13 - b11 * b23) / det;
  const double lambda = b33 - (b13 * b13 + v0 * (b12_eff * b13 - b11 * b23)) / b11;
  if (!(lambda / b11 > 0.0)) {
    throw Error(ErrorCode::NonPositiveDefinite, "recovered B does not admit a valid decomposition");
  }
  const double alpha = std::sqrt(lambda / b11);
  const double beta = std::sqrt(lambda * b11 / det);
  const double gamma = fix_skew ? 0.0 : -b12_eff * alpha * alpha * beta / lambda;
  const double u0 = gamma * v0 / beta - b13 * alpha * alpha / lambda;
  Intrinsics a{alpha, beta, u0, v0, gamma};
  if (!std::isfinite(alpha) || !std::isfinite(beta) || !std::isfinite(u0) || !std::isfinite(v0)) {
    throw Error(ErrorCode::NonPositiveDefinite, "intrinsic decomposition produced non-finite values");
  }
  return a;
}

/// Nearest rotation matrix (Frobenius norm) to `m`.
inline Eigen::Matrix3d nearest_rotation(const Eigen::Matrix3d& m) {
  const Eigen::JacobiSVD<Eigen::Matrix3d> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

inline Pose extrinsics_from_homography(const Intrinsics& a, const Eigen::Matrix3d& h) {
  const Eigen::Matrix3d a_inv = a.matrix().inverse();
  const Eigen::Vector3d g1 = a_inv * h.col(0);
  const Eigen::Vector3d g2 = a_inv * h.col(1);
  const Eigen::Vector3d g3 = a_inv * h.col(2);
  double lambda = 1.0 / g1.norm();
  if ((lambda * g3).z() < 0.0) lambda = -lambda;
  const Eigen::Vector3d t = lambda * g3;
  if (!(t.z() > 0.0)) throw Error(ErrorCode::BehindCamera, "target plane is not in front of the camera");
  Eigen::Matrix3d q;
  q.col(0) = lambda * g1;
  q.col(1) = lambda * g2;
  q.col(2) = q.col(0).cross(q.col(1));
  Pose pose;
  pose.rotation = nearest_rotation(q);
  pose.translation = t;
  return pose;
}

/// Linear least-squares estimate of the leading numerator radial terms
/// (k1, k2); every other coefficient starts at zero.
inline DistortionParams init_distortion(const Intrinsics& a, const std::vector<Pose>& poses,
                                        const CorrespondenceSet& corr, const DistortionShape& shape) {
  DistortionParams out(shape);
  const int n_terms = std::min(2, shape.radial_num_order);
  if (n_terms == 0) return out;
  const std::size_t n_pts = corr.point_count();
  Eigen::MatrixXd design(2 * n_pts * poses.size(), n_terms);
  Eigen::VectorXd rhs(design.rows());
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    for (std::size_t j = 0; j < n_pts; ++j) {
      const Eigen::Vector3d xc = poses[i].apply(corr.target.points[j]);
      const double x = xc.x() / xc.z(), y = xc.y() / xc.z();
      const double r2 = x * x + y * y;
      const ImagePoint ideal = to_pixel({x, y}, a);
      const ImagePoint& obs = corr.views[i][j];
      const double du = a.fx * x + a.skew * y;
      const double dv = a.fy * y;
      double rp = r2;
      for (int k = 0; k < n_terms; ++k) {
        design(row, k) = du * rp;
        design(row + 1, k) = dv * rp;
        rp *= r2;
      }
      rhs(row) = obs.u - ideal.u;
      rhs(row + 1) = obs.v - ideal.v;
      row += 2;
    }
  }
  const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
  if (qr.rank() < n_terms) return out;
  const Eigen::VectorXd k = qr.solve(rhs);
  if (!k.allFinite()) return out;
  for (int i = 0; i < n_terms; ++i) out.k_num(i) = k(i);
  return out;
}

// ---------------------------------------------------------------------------
// Reprojection error

/// Per-view RMS of the Euclidean reprojection residual.
inline std::vector<double> per_view_reprojection_rms(const Intrinsics& a, const DistortionParams& dist,
                                                     const std::vector<Pose>& poses, const CorrespondenceSet& corr) {
  if (poses.size() != corr.views.size()) {
    throw Error(ErrorCode::LengthMismatch, "pose count does not match view count");
  }
  std::vector<double> out;
  out.reserve(poses.size());
  for (std::size_t i = 0; i < poses.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < corr.point_count(); ++j) {
      const ImagePoint p = project(WorldPoint::from(corr.target.points[j]), poses[i], a, dist);
      const double du = corr.views[i][j].u - p.u, dv = corr.views[i][j].v - p.v;
      sum += du * du + dv * dv;
    }
    out.push_back(corr.point_count() ? std::sqrt(sum / static_cast<double>(corr.point_count())) : 0.0);
  }
  return out;
}

/// E_RMS = sqrt(1/(MN) * sum_ij |x_ij - x̂_ij|^2).
inline double reprojection_rms(const Intrinsics& a, const DistortionParams& dist, const std::vector<Pose>& poses,
                               const CorrespondenceSet& corr) {
  if (poses.size() != corr.views.size()) {
    throw Error(ErrorCode::LengthMismatch, "pose count does not match view count");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    for (std::size_t j = 0; j < corr.point_count(); ++j) {
      const ImagePoint p = project(WorldPoint::from(corr.target.points[j]), poses[i], a, dist);
      const double du = corr.views[i][j].u - p.u, dv = corr.views[i][j].v - p.v;
      sum += du * du + dv * dv;
      ++count;
    }
  }
  return count ? std::sqrt(sum / static_cast<double>(count)) : 0.0;
}

inline double reprojection_rms(const CalibrationResult& result, const CorrespondenceSet& corr) {
  return reprojection_rms(result.intrinsics, result.distortion, result.poses, corr);
}

// ---------------------------------------------------------------------------
// Joint refinement

namespace detail {

constexpr int kMaxLocalParams = 48;
using JetDerivatives = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxLocalParams, 1>;
using Jet = Eigen::AutoDiffScalar<JetDerivatives>;

/// Parameter layout: [fx fy cx cy (skew)] [K] [aa t] per view.
struct CalibrationLayout {
  int n_intr = 4;
  int n_dist = 0;
  int n_views = 0;

  int dist_offset() const { return n_intr; }
  int view_offset(int i) const { return n_intr + n_dist + 6 * i; }
  int size() const { return n_intr + n_dist + 6 * n_views; }
  int local_size() const { return n_intr + n_dist + 6; }
};

inline Eigen::VectorXd pack_parameters(const CalibrationLayout& layout, const Intrinsics& a,
                                       const DistortionParams& dist, const std::vector<Pose>& poses) {
  Eigen::VectorXd theta(layout.size());
  theta(0) = a.fx;
  theta(1) = a.fy;
  theta(2) = a.cx;
  theta(3) = a.cy;
  if (layout.n_intr == 5) theta(4) = a.skew;
  for (int k = 0; k < layout.n_dist; ++k) theta(layout.dist_offset() + k) = dist.coeffs[k];
  for (int i = 0; i < layout.n_views; ++i) {
    theta.segment<3>(layout.view_offset(i)) = poses[i].axis_angle();
    theta.segment<3>(layout.view_offset(i) + 3) = poses[i].translation;
  }
  return theta;
}

inline void unpack_parameters(const CalibrationLayout& layout, const Eigen::VectorXd& theta,
                              const DistortionShape& shape, Intrinsics& a, DistortionParams& dist,
                              std::vector<Pose>& poses) {
  a = {theta(0), theta(1), theta(2), theta(3), layout.n_intr == 5 ? theta(4) : 0.0};
  dist = DistortionParams(shape);
  for (int k = 0; k < layout.n_dist; ++k) dist.coeffs[k] = theta(layout.dist_offset() + k);
  poses.resize(layout.n_views);
  for (int i = 0; i < layout.n_views; ++i) {
    poses[i] = Pose::from_axis_angle(theta.segment<3>(layout.view_offset(i)),
                                     theta.segment<3>(layout.view_offset(i) + 3));
  }
}

template <class T>
bool project_view_point(const CalibrationLayout& layout, const DistortionShape& shape, const T* intr_dist,
                        const T* pose6, const Eigen::Vector3d& model_point, T& u, T& v) {
  T intr[5] = {intr_dist[0], intr_dist[1], intr_dist[2], intr_dist[3], T(0.0)};
  if (layout.n_intr == 5) intr[4] = intr_dist[4];
  const Eigen::Matrix<T, 3, 1> x(T(model_point.x()), T(model_point.y()), T(model_point.z()));
  Eigen::Matrix<T, 3, 1> xc = rotate_axis_angle<T>(pose6, x);
  xc += Eigen::Matrix<T, 3, 1>(pose6[3], pose6[4], pose6[5]);
  return project_camera_point_generic<T>(intr, shape, intr_dist + layout.n_intr, xc, u, v);
}

/// True when the rational radial factor has a positive denominator and
/// r * factor(r) increases on [0, r_max] (no pole, no fold-over).
inline bool radial_map_valid(const DistortionShape& shape, const double* k, double r_max, int samples = 64) {
  if (shape.radial_num_order == 0 && shape.radial_den_order == 0) return true;
  double prev = 0.0;
  for (int i = 1; i <= samples; ++i) {
    const double rad = r_max * i / samples;
    const double r2 = rad * rad;
    double num = 1.0;
    double den = 1.0;
    double rp = r2;
    for (int j = 0; j < kMaxRadialOrder; ++j) {
      if (j < shape.radial_num_order) num += k[j] * rp;
      if (j < shape.radial_den_order) den += k[shape.radial_num_order + j] * rp;
      rp *= r2;
    }
    if (!(den > 0.0)) return false;
    const double mapped = rad * num / den;
    if (!(mapped > prev)) return false;
    prev = mapped;
  }
  return true;
}

/// Residuals r = observed - projected for every view and point, plus the
/// AutoDiff Jacobian of r.
struct CalibrationProblem {
  const CorrespondenceSet* corr = nullptr;
  DistortionShape shape;
  CalibrationLayout layout;
  /// Undistorted radius up to which the radial model must stay a valid,
  /// increasing map; 0 disables the check.
  double validity_radius = 0.0;
  /// Appends coefficient_prior * k_i rows for every distortion coefficient.
  double coefficient_prior = 0.0;

  Eigen::Index observation_rows() const { return static_cast<Eigen::Index>(2 * corr->point_count() * layout.n_views); }
  Eigen::Index prior_rows() const { return coefficient_prior > 0.0 ? layout.n_dist : 0; }

  Eigen::VectorXd residuals(const Eigen::VectorXd& theta) const {
    const std::size_t n_pts = corr->point_count();
    Eigen::VectorXd r(observation_rows() + prior_rows());
    std::vector<double> intr_dist(theta.data(), theta.data() + layout.n_intr + layout.n_dist);
    if (validity_radius > 0.0 && !radial_map_valid(shape, intr_dist.data() + layout.n_intr, validity_radius)) {
      r.setConstant(std::numeric_limits<double>::quiet_NaN());
      return r;
    }
    Eigen::Index row = 0;
    for (int i = 0; i < layout.n_views; ++i) {
      const double* pose6 = theta.data() + layout.view_offset(i);
      for (std::size_t j = 0; j < n_pts; ++j) {
        double u = 0.0, v = 0.0;
        const bool ok = project_view_point<double>(layout, shape, intr_dist.data(), pose6, corr->target.points[j], u, v);
        const ImagePoint& obs = corr->views[i][j];
        r(row++) = ok ? obs.u - u : std::numeric_limits<double>::quiet_NaN();
        r(row++) = ok ? obs.v - v : std::numeric_limits<double>::quiet_NaN();
      }
    }
    for (Eigen::Index k = 0; k < prior_rows(); ++k) r(row++) = coefficient_prior * theta(layout.dist_offset() + k);
    return r;
  }

  Eigen::MatrixXd jacobian(const Eigen::VectorXd& theta) const {
    const std::size_t n_pts = corr->point_count();
    const int n_shared = layout.n_intr + layout.n_dist;
    const int n_local = layout.local_size();
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(observation_rows() + prior_rows(), layout.size());
    std::vector<Jet> shared(n_shared);
    for (int k = 0; k < n_shared; ++k) shared[k] = Jet(theta(k), n_local, k);
    Eigen::Index row = 0;
    for (int i = 0; i < layout.n_views; ++i) {
      Jet pose6[6];
      for (int k = 0; k < 6; ++k) pose6[k] = Jet(theta(layout.view_offset(i) + k), n_local, n_shared + k);
      for (std::size_t j = 0; j < n_pts; ++j) {
        Jet u, v;
        const bool ok = project_view_point<Jet>(layout, shape, shared.data(), pose6, corr->target.points[j], u, v);
        if (!ok) {
          jac.row(row).setConstant(std::numeric_limits<double>::quiet_NaN());
          jac.row(row + 1).setConstant(std::numeric_limits<double>::quiet_NaN());
          row += 2;
          continue;
        }
        Eigen::VectorXd du = Eigen::VectorXd::Zero(n_local);
        Eigen::VectorXd dv = Eigen::VectorXd::Zero(n_local);
        if (u.derivatives().size() == n_local) du = u.derivatives();
        if (v.derivatives().size() == n_local) dv = v.derivatives();
        jac.row(row).head(n_shared) = -du.head(n_shared).transpose();
        jac.row(row).segment(layout.view_offset(i), 6) = -du.tail(6).transpose();
        jac.row(row + 1).head(n_shared) = -dv.head(n_shared).transpose();
        jac.row(row + 1).segment(layout.view_offset(i), 6) = -dv.tail(6).transpose();
        row += 2;
      }
    }
    for (Eigen::Index k = 0; k < prior_rows(); ++k) jac(row++, layout.dist_offset() + k) = coefficient_prior;
    return jac;
  }

  LeastSquaresProblem as_problem() const {
    LeastSquaresProblem p;
    p.residual_fn = [this](const Eigen::VectorXd& theta) { return residuals(theta); };
    p.jacobian_fn = [this](const Eigen::VectorXd& theta) { return jacobian(theta); };
    return p;
  }

  /// The same problem in variables z = theta / scale.
  LeastSquaresProblem as_scaled_problem(const Eigen::VectorXd& scale) const {
    LeastSquaresProblem p;
    p.residual_fn = [this, scale](const Eigen::VectorXd& z) { return residuals(z.cwiseProduct(scale)); };
    p.jacobian_fn = [this, scale](const Eigen::VectorXd& z) {
      return Eigen::MatrixXd(jacobian(z.cwiseProduct(scale)) * scale.asDiagonal());
    };
    return p;
  }
};

/// Fixed per-parameter scales that give every column of the initial
/// Jacobian unit norm.
inline Eigen::VectorXd jacobian_column_scales(const Eigen::MatrixXd& jac) {
  Eigen::VectorXd scale(jac.cols());
  for (Eigen::Index j = 0; j < jac.cols(); ++j) {
    const double n = jac.col(j).norm();
    scale(j) = (std::isfinite(n) && n > 0.0) ? 1.0 / n : 1.0;
  }
  return scale;
}

}  // namespace detail

/// 1.2 x the largest normalized radius of any observation under `a`.
inline double default_validity_radius(const CorrespondenceSet& corr, const Intrinsics& a) {
  double r_obs = 0.0;
  for (const auto& view : corr.views) {
    for (const auto& p : view) r_obs = std::max(r_obs, normalize(p, a).radius());
  }
  return 1.2 * r_obs;
}

/// Initial (A, K, poses) from the closed-form steps, or from the warm start.
inline void initialize_calibration(const CorrespondenceSet& corr, const CalibrationOptions& options, Intrinsics& a,
                                   DistortionParams& dist, std::vector<Pose>& poses) {
  const auto plane = corr.target.plane_points();
  std::vector<Eigen::Matrix3d> homographies;
  if (!options.initial_intrinsics || !options.initial_poses) {
    for (const auto& view : corr.views) homographies.push_back(estimate_homography(plane, view));
  }
  a = options.initial_intrinsics ? *options.initial_intrinsics
                                 : intrinsics_from_homographies(homographies, options.fix_skew);
  if (options.fix_skew) a.skew = 0.0;
  if (options.initial_poses) {
    poses = *options.initial_poses;
  } else {
    poses.clear();
    for (const auto& h : homographies) poses.push_back(extrinsics_from_homography(a, h));
  }
  if (options.initial_distortion) {
    dist = options.initial_distortion->shape == options.shape ? *options.initial_distortion
                                                               : options.initial_distortion->expanded_to(options.shape);
  } else {
    dist = init_distortion(a, poses, corr, options.shape);
  }
}

/// Closed-form initialization followed by joint LM refinement of intrinsics,
/// distortion and every view pose. A run that hits max_iter is returned with
/// converged = false rather than thrown.
inline CalibrationResult calibrate(const CorrespondenceSet& corr, const CalibrationOptions& options) {
  corr.validate();
  options.shape.validate();
  const std::size_t min_views = options.fix_skew ? 2 : 3;
  if (corr.views.size() < min_views) {
    throw Error(ErrorCode::DegenerateConfiguration, "calibration needs at least " + std::to_string(min_views) +
                                                        " views, got " + std::to_string(corr.views.size()));
  }
  Intrinsics a;
  DistortionParams dist;
  std::vector<Pose> poses;
  initialize_calibration(corr, options, a, dist, poses);
  if (poses.size() != corr.views.size()) throw Error(ErrorCode::LengthMismatch, "warm-start pose count mismatch");

  detail::CalibrationProblem problem;
  problem.corr = &corr;
  problem.shape = options.shape;
  problem.layout = {options.fix_skew ? 4 : 5, static_cast<int>(options.shape.param_count()),
                    static_cast<int>(corr.views.size())};
  if (!(options.coefficient_prior >= 0.0)) throw Error(ErrorCode::ConfigError, "coefficient prior must be >= 0");
  problem.coefficient_prior = options.coefficient_prior;
  if (options.validity_radius) {
    problem.validity_radius = *options.validity_radius;
  } else {
    problem.validity_radius = default_validity_radius(corr, a);
  }
  Eigen::VectorXd theta0 = detail::pack_parameters(problem.layout, a, dist, poses);
  if (!problem.residuals(theta0).allFinite()) {
    // A warm start can fall outside the valid region; redo the closed form.
    // The linear radial estimate can itself be wild when the closed-form
    // intrinsics are poor, so the last resort starts undistorted.
    if (options.initial_intrinsics || options.initial_poses || options.initial_distortion) {
      CalibrationOptions cold = options;
      cold.initial_intrinsics.reset();
      cold.initial_poses.reset();
      cold.initial_distortion.reset();
      initialize_calibration(corr, cold, a, dist, poses);
      theta0 = detail::pack_parameters(problem.layout, a, dist, poses);
    }
    if (!problem.residuals(theta0).allFinite()) {
      dist = DistortionParams(options.shape);
      theta0 = detail::pack_parameters(problem.layout, a, dist, poses);
    }
  }
  if (!problem.residuals(theta0).allFinite()) {
    throw Error(ErrorCode::NonFiniteResidual, "initial calibration estimate does not project every point");
  }
  // Intrinsics in pixels and high-order coefficients differ by ~10 orders of
  // magnitude in sensitivity; the solver runs on column-normalized variables.
  const Eigen::VectorXd scale = detail::jacobian_column_scales(problem.jacobian(theta0));
  LMReport report = solve(problem.as_scaled_problem(scale), theta0.cwiseQuotient(scale), options.lm);
  report.theta_final = report.theta_final.cwiseProduct(scale);

  CalibrationResult result;
  detail::unpack_parameters(problem.layout, report.theta_final, options.shape, result.intrinsics, result.distortion,
                            result.poses);
  result.rms_error = reprojection_rms(result.intrinsics, result.distortion, result.poses, corr);
  result.per_view_rms = per_view_reprojection_rms(result.intrinsics, result.distortion, result.poses, corr);
  if (corr.world_reference) {
    result.world_pose = result.poses[corr.world_reference->view].compose(corr.world_reference->board_to_world.inverse());
  }
  result.validity_radius = problem.validity_radius;
  result.lm_settings = options.lm;
  result.fix_skew = options.fix_skew;
  result.lm_iterations = report.iterations;
  result.converged = report.converged;
  result.termination = termination_name(report.termination);
  return result;
}

inline CalibrationResult calibrate(const CorrespondenceSet& corr, const DistortionShape& shape,
                                   const LMSettings& settings = {}) {
  CalibrationOptions options;
  options.shape = shape;
  options.lm = settings;
  return calibrate(corr, options);
}

// ---------------------------------------------------------------------------
// Model-order sweep

struct SweepEntry {
  DistortionShape shape;
  double train_rms = std::numeric_limits<double>::quiet_NaN();
  std::optional<double> test_metric;
  std::optional<std::string> error;
  std::optional<CalibrationResult> result;
  /// This shape's own fit; `result` may instead hold the expanded seed fit.
  std::optional<CalibrationResult> regularized;

  bool ok() const { return !error.has_value(); }
};

struct SweepResult {
  std::vector<SweepEntry> entries;
  int selected = -1;
};

struct SweepOptions {
  LMSettings lm;
  bool fix_skew = true;
  /// Metrics within this relative margin of the best count as tied; ties go
  /// to the shape with fewer parameters.
  double tie_rel_tol = 1e-3;
  /// Start each shape from the result of the largest earlier shape nested in it.
  bool warm_start = true;
  /// Forwarded to every calibration; see CalibrationOptions. High-order
  /// shapes pinned against the validity wall stall, so the sweep relies on
  /// the coefficient prior instead.
  std::optional<double> validity_radius = 0.0;
  double coefficient_prior = 1.0;
  /// Keep the seed shape's fit, expanded, when it fits the training data
  /// better than the new fit. The prior trades a little training error for
  /// stability, so without this the train RMS can creep up along a nested
  /// chain.
  bool nested_guard = true;
};

namespace detail {

/// `r` with its lens re-expressed in `shape` and its errors recomputed.
inline CalibrationResult expanded_result(const CalibrationResult& r, const DistortionShape& shape,
                                         const CorrespondenceSet& corr) {
  CalibrationResult out = r;
  out.distortion = r.distortion.expanded_to(shape);
  out.rms_error = reprojection_rms(out, corr);
  out.per_view_rms = per_view_reprojection_rms(out.intrinsics, out.distortion, out.poses, corr);
  return out;
}

/// The better-fitting of `fit` and the seed's fit re-expressed in the
/// larger shape (same camera, new terms zero).
inline CalibrationResult best_of_nested(const CorrespondenceSet& corr, const CalibrationResult& fit,
                                        const SweepEntry* seed) {
  if (!seed) return fit;
  CalibrationResult nested = expanded_result(*seed->result, fit.distortion.shape, corr);
  return nested.rms_error < fit.rms_error ? nested : fit;
}

}  // namespace detail

/// Scores a calibrated model on held-out data (lower is better).
using ShapeEvaluator = std::function<double(const CalibrationResult&)>;

/// Calibrates under every shape, scores each with `eval_fn` when given, and
/// selects the best; without an evaluator, training RMS decides.
inline SweepResult sweep_model_order(const CorrespondenceSet& corr_train, const ShapeEvaluator& eval_fn,
                                     const std::vector<DistortionShape>& shapes, const SweepOptions& options = {}) {
  if (shapes.empty()) throw Error(ErrorCode::ConfigError, "sweep needs at least one shape");
  SweepResult out;
  // Largest successful earlier shape nested in `shape`.
  const auto seed_of = [](const DistortionShape& shape, const std::vector<SweepEntry>& done) {
    const SweepEntry* seed = nullptr;
    for (const SweepEntry& prev : done) {
      if (prev.ok() && prev.shape.nests_in(shape) && (!seed || prev.shape.param_count() >= seed->shape.param_count())) {
        seed = &prev;
      }
    }
    return seed;
  };
  for (const DistortionShape& shape : shapes) {
    SweepEntry entry;
    entry.shape = shape;
    try {
      CalibrationOptions copts;
      copts.shape = shape;
      copts.lm = options.lm;
      copts.fix_skew = options.fix_skew;
      copts.validity_radius = options.validity_radius;
      copts.coefficient_prior = options.coefficient_prior;
      if (options.warm_start) {
        if (const SweepEntry* seed = seed_of(shape, out.entries)) {
          const CalibrationResult& from = seed->regularized ? *seed->regularized : *seed->result;
          if (!copts.validity_radius) copts.validity_radius = from.validity_radius;
          copts.initial_intrinsics = from.intrinsics;
          copts.initial_distortion = from.distortion;
          copts.initial_poses = from.poses;
        }
      }
      CalibrationResult result = calibrate(corr_train, copts);
      if (options.nested_guard) {
        entry.regularized = result;
        result = detail::best_of_nested(corr_train, result, seed_of(shape, out.entries));
      }
      entry.train_rms = result.rms_error;
      if (eval_fn) entry.test_metric = eval_fn(result);
      entry.result = std::move(result);
    } catch (const Error& e) {
      entry.error = e.what();
    }
    out.entries.push_back(std::move(entry));
  }

  const bool use_test = static_cast<bool>(eval_fn);
  const auto metric = [&](const SweepEntry& e) {
    if (!e.ok()) return std::numeric_limits<double>::infinity();
    const double m = use_test ? e.test_metric.value_or(std::numeric_limits<double>::infinity()) : e.train_rms;
    return std::isfinite(m) ? m : std::numeric_limits<double>::infinity();
  };
  double best = std::numeric_limits<double>::infinity();
  for (const SweepEntry& e : out.entries) best = std::min(best, metric(e));
  if (!std::isfinite(best)) {
    throw Error(ErrorCode::NoConvergence, "every shape in the sweep failed: " +
                                              out.entries.back().error.value_or("non-finite metric"));
  }
  const double threshold = best * (1.0 + options.tie_rel_tol) + 1e-15;
  for (std::size_t i = 0; i < out.entries.size(); ++i) {
    if (metric(out.entries[i]) > threshold) continue;
    if (out.selected < 0 ||
        out.entries[i].shape.param_count() < out.entries[out.selected].shape.param_count()) {
      out.selected = static_cast<int>(i);
    }
  }
  return out;
}

}  // namespace lrstereo
