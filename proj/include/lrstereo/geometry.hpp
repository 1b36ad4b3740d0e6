#pragma once

// Pinhole projection and the configurable lens-distortion family
// (rational radial, tangential, thin prism, tilted sensor).
//
// The distortion and projection kernels are templated on the scalar type so
// the calibration refinement can evaluate them with forward-mode AutoDiff.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <unsupported/Eigen/AutoDiff>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "lrstereo/errors.hpp"

namespace lrstereo {

struct WorldPoint {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  Eigen::Vector3d vec() const { return {x, y, z}; }
  static WorldPoint from(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }
};

struct ImagePoint {
  double u = 0.0;
  double v = 0.0;
};

struct NormalizedPoint {
  double x = 0.0;
  double y = 0.0;

  double radius() const { return std::hypot(x, y); }
};

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double skew = 0.0;

  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d a;
    a << fx, skew, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return a;
  }

  std::array<double, 5> as_array() const { return {fx, fy, cx, cy, skew}; }
  static Intrinsics from_array(const std::array<double, 5>& a) { return {a[0], a[1], a[2], a[3], a[4]}; }

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy) || !std::isfinite(cx) ||
        !std::isfinite(cy) || !std::isfinite(skew)) {
      throw Error(ErrorCode::ConfigError, "intrinsics require finite values with fx > 0 and fy > 0");
    }
  }
};

/// Rigid transform taking world coordinates into the camera frame: Xc = R X + t.
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static Pose from_axis_angle(const Eigen::Vector3d& aa, const Eigen::Vector3d& t) {
    Pose p;
    const double angle = aa.norm();
    if (angle > 0.0) p.rotation = Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix();
    p.translation = t;
    return p;
  }

  Eigen::Vector3d axis_angle() const {
    const Eigen::AngleAxisd aa(rotation);
    return aa.axis() * aa.angle();
  }

  Eigen::Vector3d apply(const Eigen::Vector3d& x) const { return rotation * x + translation; }
  Eigen::Vector3d center() const { return -rotation.transpose() * translation; }

  Pose inverse() const {
    Pose p;
    p.rotation = rotation.transpose();
    p.translation = -p.rotation * translation;
    return p;
  }

  /// (this ∘ other)(x) = this(other(x)).
  Pose compose(const Pose& other) const {
    Pose p;
    p.rotation = rotation * other.rotation;
    p.translation = rotation * other.translation + translation;
    return p;
  }

  bool is_valid(double tol = 1e-9) const {
    const Eigen::Matrix3d err = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
    return err.cwiseAbs().maxCoeff() <= tol && std::abs(rotation.determinant() - 1.0) <= tol &&
           translation.allFinite();
  }
};

constexpr int kMaxRadialOrder = 6;
constexpr int kMaxPrismOrder = 4;

/// Which terms of the distortion family are active. Coefficients are laid
/// out as [k_num..., k_den..., p1, p2, s..., tau_x, tau_y].
struct DistortionShape {
  int radial_num_order = 0;
  int radial_den_order = 0;
  bool tangential = false;
  int prism_order = 0;
  bool tilt = false;

  std::size_t param_count() const {
    return static_cast<std::size_t>(radial_num_order + radial_den_order + 2 * int(tangential) +
                                    2 * prism_order + 2 * int(tilt));
  }

  std::size_t num_offset() const { return 0; }
  std::size_t den_offset() const { return static_cast<std::size_t>(radial_num_order); }
  std::size_t tangential_offset() const { return den_offset() + static_cast<std::size_t>(radial_den_order); }
  std::size_t prism_offset() const { return tangential_offset() + (tangential ? 2u : 0u); }
  std::size_t tilt_offset() const { return prism_offset() + 2u * static_cast<std::size_t>(prism_order); }

  /// Position of the thin-prism coefficient for `axis` (0 = x, 1 = y) and
  /// power r^(2(term+1)), relative to prism_offset(). The first two powers
  /// follow the classical [s1 s2 | s3 s4] order; higher powers append (x, y)
  /// pairs so that the classical vector stays a prefix.
  std::size_t prism_index(int axis, int term) const {
    const int low = std::min(prism_order, 2);
    if (term < 2) return static_cast<std::size_t>(axis * low + term);
    return static_cast<std::size_t>(4 + 2 * (term - 2) + axis);
  }

  void validate() const {
    if (radial_num_order < 0 || radial_num_order > kMaxRadialOrder || radial_den_order < 0 ||
        radial_den_order > kMaxRadialOrder || prism_order < 0 || prism_order > kMaxPrismOrder) {
      throw Error(ErrorCode::ConfigError, "distortion shape out of range: " + describe());
    }
  }

  /// True when every term of this shape is also present in `other`.
  bool nests_in(const DistortionShape& other) const {
    return radial_num_order <= other.radial_num_order && radial_den_order <= other.radial_den_order &&
           (!tangential || other.tangential) && prism_order <= other.prism_order && (!tilt || other.tilt);
  }

  std::string describe() const {
    return "(" + std::to_string(radial_num_order) + "," + std::to_string(radial_den_order) + "," +
           (tangential ? "T" : "F") + "," + std::to_string(prism_order) + "," + (tilt ? "T" : "F") +
           ")=" + std::to_string(param_count());
  }

  friend bool operator==(const DistortionShape&, const DistortionShape&) = default;

  static DistortionShape none() { return {}; }
  /// Rational radial 3/3, tangential, 2-term thin prism, tilt: 14 parameters.
  static DistortionShape classical14() { return {3, 3, true, 2, true}; }
  /// Radial 5/5, tangential, 3-term thin prism, tilt: 20 parameters.
  static DistortionShape extended20() { return {5, 5, true, 3, true}; }

  /// One nested shape per even parameter count from 14 to 24.
  static std::vector<DistortionShape> default_lattice() {
    return {{3, 3, true, 2, true}, {4, 4, true, 2, true}, {5, 5, true, 2, true},
            {5, 5, true, 3, true}, {5, 5, true, 4, true}, {6, 6, true, 4, true}};
  }
};

inline double value_of(double v) { return v; }
template <class D>
double value_of(const Eigen::AutoDiffScalar<D>& v) {
  return v.value();
}

/// Coefficient vector K together with the shape that gives it meaning.
struct DistortionParams {
  DistortionShape shape;
  std::vector<double> coeffs;

  DistortionParams() = default;
  explicit DistortionParams(const DistortionShape& s) : shape(s), coeffs(s.param_count(), 0.0) {}
  DistortionParams(const DistortionShape& s, std::vector<double> c) : shape(s), coeffs(std::move(c)) {
    validate_layout();
  }

  void validate_layout() const {
    shape.validate();
    if (coeffs.size() != shape.param_count()) {
      throw Error(ErrorCode::DimensionMismatch, "distortion vector has " + std::to_string(coeffs.size()) +
                                                    " entries, shape " + shape.describe() + " needs " +
                                                    std::to_string(shape.param_count()));
    }
  }

  double k_num(int i) const { return coeffs[shape.num_offset() + i]; }
  double k_den(int i) const { return coeffs[shape.den_offset() + i]; }
  double p1() const { return shape.tangential ? coeffs[shape.tangential_offset()] : 0.0; }
  double p2() const { return shape.tangential ? coeffs[shape.tangential_offset() + 1] : 0.0; }
  double prism(int axis, int term) const { return coeffs[shape.prism_offset() + shape.prism_index(axis, term)]; }
  double tau_x() const { return shape.tilt ? coeffs[shape.tilt_offset()] : 0.0; }
  double tau_y() const { return shape.tilt ? coeffs[shape.tilt_offset() + 1] : 0.0; }

  double& k_num(int i) { return coeffs[shape.num_offset() + i]; }
  double& k_den(int i) { return coeffs[shape.den_offset() + i]; }
  double& prism(int axis, int term) { return coeffs[shape.prism_offset() + shape.prism_index(axis, term)]; }
  void set_tangential(double p1v, double p2v) {
    coeffs[shape.tangential_offset()] = p1v;
    coeffs[shape.tangential_offset() + 1] = p2v;
  }
  void set_tilt(double tx, double ty) {
    coeffs[shape.tilt_offset()] = tx;
    coeffs[shape.tilt_offset() + 1] = ty;
  }

  /// Re-express these coefficients in a larger shape; new terms are zero.
  DistortionParams expanded_to(const DistortionShape& target) const {
    if (!shape.nests_in(target)) {
      throw Error(ErrorCode::ConfigError, shape.describe() + " does not nest in " + target.describe());
    }
    DistortionParams out(target);
    for (int i = 0; i < shape.radial_num_order; ++i) out.k_num(i) = k_num(i);
    for (int i = 0; i < shape.radial_den_order; ++i) out.k_den(i) = k_den(i);
    if (shape.tangential) out.set_tangential(p1(), p2());
    for (int t = 0; t < shape.prism_order; ++t) {
      out.prism(0, t) = prism(0, t);
      out.prism(1, t) = prism(1, t);
    }
    if (shape.tilt) out.set_tilt(tau_x(), tau_y());
    return out;
  }
};

/// Tilted-sensor projective correction for angles (tau_x, tau_y), templated
/// for AutoDiff.
template <class T>
Eigen::Matrix<T, 3, 3> tilt_matrix_generic(const T& tau_x, const T& tau_y) {
  using std::cos;
  using std::sin;
  const T cx = cos(tau_x), sx = sin(tau_x), cy = cos(tau_y), sy = sin(tau_y);
  const T zero(0.0), one(1.0);
  Eigen::Matrix<T, 3, 3> rot_x, rot_y, proj_z;
  rot_x << one, zero, zero, zero, cx, sx, zero, -sx, cx;
  rot_y << cy, zero, -sy, zero, one, zero, sy, zero, cy;
  const Eigen::Matrix<T, 3, 3> rot_xy = rot_y * rot_x;
  proj_z << rot_xy(2, 2), zero, -rot_xy(0, 2), zero, rot_xy(2, 2), -rot_xy(1, 2), zero, zero, one;
  return proj_z * rot_xy;
}

inline Eigen::Matrix3d tilt_matrix(double tau_x, double tau_y) { return tilt_matrix_generic<double>(tau_x, tau_y); }

template <class T>
struct DistortedPoint {
  T x;
  T y;
  bool valid;
};

/// Applies the distortion family to a normalized point. `k` points at
/// shape.param_count() coefficients. `valid` is false when the rational
/// denominator or the tilt's homogeneous scale is not positive.
template <class T>
DistortedPoint<T> distort_generic(const T& x, const T& y, const DistortionShape& shape, const T* k) {
  const T r2 = x * x + y * y;
  T num(1.0);
  T den(1.0);
  T rp = r2;
  const int radial = std::max(shape.radial_num_order, shape.radial_den_order);
  for (int i = 0; i < radial; ++i) {
    if (i < shape.radial_num_order) num += k[shape.num_offset() + i] * rp;
    if (i < shape.radial_den_order) den += k[shape.den_offset() + i] * rp;
    rp *= r2;
  }
  bool valid = value_of(den) > 0.0;
  const T radial_scale = num / den;
  T xi = x * radial_scale;
  T yi = y * radial_scale;
  if (shape.tangential) {
    const T& p1 = k[shape.tangential_offset()];
    const T& p2 = k[shape.tangential_offset() + 1];
    xi += 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
    yi += p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
  }
  if (shape.prism_order > 0) {
    const T* s = k + shape.prism_offset();
    rp = r2;
    for (int t = 0; t < shape.prism_order; ++t) {
      xi += s[shape.prism_index(0, t)] * rp;
      yi += s[shape.prism_index(1, t)] * rp;
      rp *= r2;
    }
  }
  if (shape.tilt) {
    const Eigen::Matrix<T, 3, 3> m = tilt_matrix_generic<T>(k[shape.tilt_offset()], k[shape.tilt_offset() + 1]);
    const T hx = m(0, 0) * xi + m(0, 1) * yi + m(0, 2);
    const T hy = m(1, 0) * xi + m(1, 1) * yi + m(1, 2);
    const T hz = m(2, 0) * xi + m(2, 1) * yi + m(2, 2);
    valid = valid && value_of(hz) > 0.0;
    return {hx / hz, hy / hz, valid && std::isfinite(value_of(hx / hz)) && std::isfinite(value_of(hy / hz))};
  }
  return {xi, yi, valid && std::isfinite(value_of(xi)) && std::isfinite(value_of(yi))};
}

/// Projects a camera-frame point to pixels. `intr` holds (fx, fy, cx, cy, skew).
/// Returns false when the point is not in front of the camera or the
/// distortion is invalid there.
template <class T>
bool project_camera_point_generic(const T* intr, const DistortionShape& shape, const T* k,
                                  const Eigen::Matrix<T, 3, 1>& xc, T& u, T& v) {
  if (!(value_of(xc.z()) > 0.0)) return false;
  const T x = xc.x() / xc.z();
  const T y = xc.y() / xc.z();
  const DistortedPoint<T> d = distort_generic<T>(x, y, shape, k);
  u = intr[0] * d.x + intr[4] * d.y + intr[2];
  v = intr[1] * d.y + intr[3];
  return d.valid;
}

/// Rotates `p` by the axis-angle vector `aa` (Rodrigues), with a first-order
/// expansion near zero so derivatives stay finite there.
template <class T>
Eigen::Matrix<T, 3, 1> rotate_axis_angle(const T* aa, const Eigen::Matrix<T, 3, 1>& p) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  const T theta2 = aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2];
  if (value_of(theta2) > 1e-30) {
    const T theta = sqrt(theta2);
    const T c = cos(theta);
    const T s = sin(theta);
    const Eigen::Matrix<T, 3, 1> w(aa[0] / theta, aa[1] / theta, aa[2] / theta);
    const T wp = w.dot(p);
    return p * c + w.cross(p) * s + w * (wp * (T(1.0) - c));
  }
  const Eigen::Matrix<T, 3, 1> w(aa[0], aa[1], aa[2]);
  return p + w.cross(p);
}

/// Applies the distortion to a normalized point.
inline NormalizedPoint distort(const NormalizedPoint& p, const DistortionParams& dist) {
  dist.validate_layout();
  const DistortedPoint<double> d = distort_generic<double>(p.x, p.y, dist.shape, dist.coeffs.data());
  if (!d.valid) {
    throw Error(ErrorCode::NonFiniteResult, "distortion is not finite at r=" + std::to_string(p.radius()));
  }
  return {d.x, d.y};
}

/// Inverts `distort`: fixed-point iteration seeded at p_d, falling back to
/// Newton steps with a central-difference 2x2 Jacobian.
inline NormalizedPoint undistort(const NormalizedPoint& p_d, const DistortionParams& dist, double tol = 1e-10,
                                 int max_iter = 50) {
  dist.validate_layout();
  const auto residual = [&](const Eigen::Vector2d& p, bool& ok) -> Eigen::Vector2d {
    const DistortedPoint<double> d = distort_generic<double>(p.x(), p.y(), dist.shape, dist.coeffs.data());
    ok = d.valid;
    return Eigen::Vector2d(d.x - p_d.x, d.y - p_d.y);
  };

  Eigen::Vector2d p(p_d.x, p_d.y);
  Eigen::Vector2d best = p;
  double best_err = std::numeric_limits<double>::infinity();
  for (int it = 0; it <= max_iter; ++it) {
    bool ok = false;
    const Eigen::Vector2d r = residual(p, ok);
    if (!ok) break;
    const double err = r.norm();
    if (err < best_err) {
      best_err = err;
      best = p;
    }
    if (err < tol) return {p.x(), p.y()};
    if (err > 1e3 * best_err) break;  // diverging
    p -= r;
  }

  p = best;
  for (int it = 0; it < max_iter; ++it) {
    bool ok = false;
    const Eigen::Vector2d r = residual(p, ok);
    if (!ok) break;
    if (r.norm() < tol) return {p.x(), p.y()};
    constexpr double h = 1e-7;
    Eigen::Matrix2d jac;
    for (int j = 0; j < 2; ++j) {
      Eigen::Vector2d step = Eigen::Vector2d::Zero();
      step[j] = h;
      bool ok_plus = false;
      bool ok_minus = false;
      const Eigen::Vector2d rp = residual(p + step, ok_plus);
      const Eigen::Vector2d rm = residual(p - step, ok_minus);
      if (!ok_plus || !ok_minus) {
        throw Error(ErrorCode::NoConvergence, "undistortion left the valid region");
      }
      jac.col(j) = (rp - rm) / (2.0 * h);
    }
    const Eigen::Vector2d delta = jac.partialPivLu().solve(r);
    if (!delta.allFinite()) break;
    p -= delta;
  }
  throw Error(ErrorCode::NoConvergence, "undistortion did not reach tol " + std::to_string(tol) + " within " +
                                            std::to_string(max_iter) + " iterations");
}

/// Applies the linear intrinsic map to a (distorted) normalized point.
inline ImagePoint to_pixel(const NormalizedPoint& p, const Intrinsics& a) {
  return {a.fx * p.x + a.skew * p.y + a.cx, a.fy * p.y + a.cy};
}

/// Inverse of the linear intrinsic map, including skew.
inline NormalizedPoint normalize(const ImagePoint& u, const Intrinsics& a) {
  const double y = (u.v - a.cy) / a.fy;
  const double x = (u.u - a.cx - a.skew * y) / a.fx;
  return {x, y};
}

inline ImagePoint project(const WorldPoint& x, const Pose& pose, const Intrinsics& a, const DistortionParams& dist) {
  const Eigen::Vector3d xc = pose.apply(x.vec());
  if (!(xc.z() > 0.0)) {
    throw Error(ErrorCode::BehindCamera, "camera-frame depth " + std::to_string(xc.z()) + " is not positive");
  }
  return to_pixel(distort({xc.x() / xc.z(), xc.y() / xc.z()}, dist), a);
}

/// Checks that the rational denominator stays positive for every radius up
/// to r_max (sampled densely).
inline bool denominator_positive(const DistortionParams& dist, double r_max, int samples = 512) {
  for (int i = 0; i <= samples; ++i) {
    const double r2 = std::pow(r_max * i / samples, 2);
    double den = 1.0;
    double rp = r2;
    for (int j = 0; j < dist.shape.radial_den_order; ++j) {
      den += dist.k_den(j) * rp;
      rp *= r2;
    }
    if (!(den > 0.0)) return false;
  }
  return true;
}

}  // namespace lrstereo
