#pragma once

// Sparse stereo triangulation from distortion-corrected correspondences,
// plus the depth-error sensitivity laws for a parallel rig.

#include <Eigen/Core>
#include <Eigen/SVD>

#include <cmath>
#include <memory>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lrstereo/errors.hpp"
#include "lrstereo/geometry.hpp"
#include "lrstereo/hybrid.hpp"
#include "lrstereo/lm_solver.hpp"

namespace lrstereo {

/// One calibrated camera placed in the shared world frame.
struct CameraModel {
  Intrinsics intrinsics;
  DistortionParams distortion;
  Pose pose;  // world -> camera
  /// When set, points are corrected with the learned inverse map and the
  /// residual-adjusted intrinsics instead of the analytic inverse.
  std::shared_ptr<const HybridModel> hybrid;

  /// Intrinsics and distortion actually used for projection.
  std::pair<Intrinsics, DistortionParams> effective() const {
    if (hybrid) return apply_residuals(*hybrid);
    return {intrinsics, distortion};
  }
};

struct StereoRig {
  CameraModel left;
  CameraModel right;

  double baseline_m() const { return (left.pose.center() - right.pose.center()).norm(); }

  void validate() const {
    if (!left.pose.is_valid() || !right.pose.is_valid()) {
      throw Error(ErrorCode::ConfigError, "stereo rig poses must be proper rotations");
    }
    if (!(baseline_m() > 0.0)) throw Error(ErrorCode::ConfigError, "stereo rig baseline must be positive");
  }
};

struct CorrespondencePair {
  ImagePoint left_px;
  ImagePoint right_px;
  std::string label;
};

struct TriangulatedPoint {
  WorldPoint world;
  /// RMS over both cameras of the pixel distance between the corrected
  /// observation and the reprojected solution.
  double reproj_err_px = 0.0;
  /// sigma_min / sigma_3 of the 4x4 system; near 1 means near-degenerate.
  double condition = 0.0;
};

/// P = A [R | t].
inline Eigen::Matrix<double, 3, 4> projection_matrix(const Intrinsics& a, const Pose& pose) {
  Eigen::Matrix<double, 3, 4> rt;
  rt.leftCols<3>() = pose.rotation;
  rt.col(3) = pose.translation;
  return a.matrix() * rt;
}

/// Distortion-free pixel for an observed pixel: normalize, undistort, then
/// re-apply the linear intrinsics.
inline ImagePoint ideal_pixel(const CameraModel& cam, const ImagePoint& observed) {
  const auto [a, dist] = cam.effective();
  const NormalizedPoint p_d = normalize(observed, a);
  const NormalizedPoint p = cam.hybrid ? undistort_learned(*cam.hybrid, p_d) : undistort(p_d, dist);
  return to_pixel(p, a);
}

/// Linear triangulation from ideal pixels: the right singular vector of the
/// smallest singular value of the stacked 4x4 system.
inline TriangulatedPoint triangulate_ideal(const Eigen::Matrix<double, 3, 4>& p_left,
                                           const Eigen::Matrix<double, 3, 4>& p_right, const ImagePoint& left,
                                           const ImagePoint& right) {
  Eigen::Matrix4d h;
  h.row(0) = left.u * p_left.row(2) - p_left.row(0);
  h.row(1) = left.v * p_left.row(2) - p_left.row(1);
  h.row(2) = right.u * p_right.row(2) - p_right.row(0);
  h.row(3) = right.v * p_right.row(2) - p_right.row(1);

  const Eigen::JacobiSVD<Eigen::Matrix4d> svd(h, Eigen::ComputeFullV);
  Eigen::Vector4d x = svd.matrixV().col(3);
  Eigen::Index largest = 0;
  x.cwiseAbs().maxCoeff(&largest);
  if (x(largest) < 0.0) x = -x;

  if (std::abs(x(3)) < 1e-12) {
    throw Error(ErrorCode::DegenerateGeometry, "rays are parallel; the point is at infinity");
  }
  const Eigen::Vector3d world = x.head<3>() / x(3);
  const double depth_left = p_left.row(2).dot(world.homogeneous());
  const double depth_right = p_right.row(2).dot(world.homogeneous());
  if (!(depth_left > 0.0) || !(depth_right > 0.0)) {
    throw Error(ErrorCode::BehindCamera, "triangulated point is not in front of both cameras");
  }

  TriangulatedPoint out;
  out.world = WorldPoint::from(world);
  const Eigen::Vector3d ql = p_left * world.homogeneous();
  const Eigen::Vector3d qr = p_right * world.homogeneous();
  const double el = std::hypot(ql.x() / ql.z() - left.u, ql.y() / ql.z() - left.v);
  const double er = std::hypot(qr.x() / qr.z() - right.u, qr.y() / qr.z() - right.v);
  out.reproj_err_px = std::sqrt(0.5 * (el * el + er * er));
  const Eigen::Vector4d& sv = svd.singularValues();
  out.condition = sv(2) > 0.0 ? sv(3) / sv(2) : 1.0;
  return out;
}

inline TriangulatedPoint triangulate(const StereoRig& rig, const CorrespondencePair& pair) {
  const ImagePoint left = ideal_pixel(rig.left, pair.left_px);
  const ImagePoint right = ideal_pixel(rig.right, pair.right_px);
  return triangulate_ideal(projection_matrix(rig.left.effective().first, rig.left.pose),
                           projection_matrix(rig.right.effective().first, rig.right.pose), left, right);
}

/// A surveyed world point and where it was observed in one camera.
using ControlPoint = TrainingPoint;

/// Re-estimates the camera orientation from control points, keeping the
/// camera center and lens model fixed. A single reference board pins the
/// orientation to roughly a milliradian; distant surveyed points do far
/// better.
inline CameraModel refine_orientation(const CameraModel& cam, const std::vector<ControlPoint>& pts,
                                      const LMSettings& settings = {}) {
  if (pts.size() < 2) throw Error(ErrorCode::DegenerateConfiguration, "orientation needs at least 2 control points");
  const auto [a, k] = cam.effective();
  const Eigen::Vector3d center = cam.pose.center();
  const Eigen::Matrix3d r0 = cam.pose.rotation;
  const auto pose_for = [&](const Eigen::VectorXd& w) {
    Pose p = Pose::from_axis_angle(w, Eigen::Vector3d::Zero());
    p.rotation = p.rotation * r0;
    p.translation = -p.rotation * center;
    return p;
  };
  LeastSquaresProblem problem;
  problem.residual_fn = [&](const Eigen::VectorXd& w) {
    const Pose p = pose_for(w);
    Eigen::VectorXd r(2 * static_cast<Eigen::Index>(pts.size()));
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Eigen::Vector3d xc = p.apply(pts[i].world.vec());
      const auto j = static_cast<Eigen::Index>(2 * i);
      if (!(xc.z() > 0.0)) {
        r(j) = r(j + 1) = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      const DistortedPoint<double> d =
          distort_generic<double>(xc.x() / xc.z(), xc.y() / xc.z(), k.shape, k.coeffs.data());
      const ImagePoint q = to_pixel({d.x, d.y}, a);
      r(j) = d.valid ? pts[i].pixel.u - q.u : std::numeric_limits<double>::quiet_NaN();
      r(j + 1) = d.valid ? pts[i].pixel.v - q.v : std::numeric_limits<double>::quiet_NaN();
    }
    return r;
  };
  const LMReport report = solve(problem, Eigen::VectorXd::Zero(3), settings);
  CameraModel out = cam;
  out.pose = pose_for(report.theta_final);
  return out;
}

/// First-order depth error of a parallel rig: dZ = z^2 dd / (f B).
inline double depth_error_approx(double z, double delta_d, double f, double baseline) {
  return z * z * delta_d / (f * baseline);
}

/// Exact depth shift when the disparity f B / z loses delta_d pixels.
inline double depth_error_exact(double z, double delta_d, double f, double baseline) {
  const double fb = f * baseline;
  if (!(fb > z * delta_d)) {
    throw Error(ErrorCode::DivergentDepth, "disparity error exceeds the true disparity");
  }
  return z * z * delta_d / (fb - z * delta_d);
}

/// Maps a point marked in an up-scaled patch back to full-resolution pixels.
inline ImagePoint subpixel_map(const ImagePoint& patch_origin, double upscale, const ImagePoint& marked) {
  if (!(upscale >= 1.0)) throw Error(ErrorCode::ConfigError, "upscale factor must be >= 1");
  return {patch_origin.u + marked.u / upscale, patch_origin.v + marked.v / upscale};
}

}  // namespace lrstereo
