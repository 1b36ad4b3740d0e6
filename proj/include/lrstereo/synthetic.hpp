#pragma once

// Ground-truth stereo scenes: a parallel rig, checkerboard views per camera,
// long-range targets and optional training points, all reproducible from a
// seed. Also the end-to-end evaluation of an estimated rig against a scene.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "lrstereo/calibration.hpp"
#include "lrstereo/errors.hpp"
#include "lrstereo/geodesy.hpp"
#include "lrstereo/geometry.hpp"
#include "lrstereo/hybrid.hpp"
#include "lrstereo/stereo.hpp"

namespace lrstereo {

/// Displacement outside the rational/prism/tilt family, added in pixels
/// after the lens model.
struct ExtraWarp {
  enum class Kind { None, RadialBump, Anisotropic };
  Kind kind = Kind::None;
  double amplitude = 0.0;  // pixels
  double center = 0.5;     // normalized radius
  double width = 0.1;      // normalized radius

  void validate() const {
    if (!(amplitude >= 0.0) || !(width > 0.0) || !std::isfinite(center)) {
      throw Error(ErrorCode::ConfigError, "extra warp needs amplitude >= 0 and width > 0");
    }
  }

  /// Pixel displacement at distorted normalized point (x, y). radial_bump
  /// pushes outward by A exp(-((r - c) / w)^2); anisotropic scales the same
  /// bump by cos(2 phi).
  Eigen::Vector2d displacement(double x, double y) const {
    if (kind == Kind::None || amplitude == 0.0) return Eigen::Vector2d::Zero();
    const double r = std::hypot(x, y);
    if (r == 0.0) return Eigen::Vector2d::Zero();
    double mag = amplitude * std::exp(-std::pow((r - center) / width, 2));
    if (kind == Kind::Anisotropic) mag *= (x * x - y * y) / (r * r);
    return mag * Eigen::Vector2d(x / r, y / r);
  }
};

inline std::string warp_kind_name(ExtraWarp::Kind k) {
  switch (k) {
    case ExtraWarp::Kind::None: return "none";
    case ExtraWarp::Kind::RadialBump: return "radial_bump";
    case ExtraWarp::Kind::Anisotropic: return "anisotropic";
  }
  return "none";
}

inline ExtraWarp::Kind parse_warp_kind(const std::string& s) {
  if (s == "none") return ExtraWarp::Kind::None;
  if (s == "radial_bump") return ExtraWarp::Kind::RadialBump;
  if (s == "anisotropic") return ExtraWarp::Kind::Anisotropic;
  throw Error(ErrorCode::ConfigError, "unknown extra_warp kind '" + s + "'");
}

/// A 14-parameter lens with every term active. Leaving the cubic radial
/// terms at zero would make the rational radial part non-identifiable.
inline DistortionParams default_true_distortion() {
  DistortionParams k(DistortionShape::classical14());
  k.k_num(0) = -0.12;
  k.k_num(1) = 0.04;
  k.k_num(2) = -0.015;
  k.k_den(0) = 0.05;
  k.k_den(1) = -0.03;
  k.k_den(2) = 0.02;
  k.set_tangential(1e-3, -4e-4);
  k.prism(0, 0) = 6e-4;
  k.prism(0, 1) = -3e-4;
  k.prism(1, 0) = -5e-4;
  k.prism(1, 1) = 2e-4;
  k.set_tilt(0.003, -0.002);
  return k;
}

struct SceneConfig {
  double baseline_m = 10.0;
  double focal_px = 1600.0;
  int image_width = 1920;
  int image_height = 1080;
  int board_rows = 6;
  int board_cols = 7;
  double square_size_m = 0.05;
  int views = 15;
  /// Bound on each board rotation component (radians) for views after the first.
  double board_tilt_rad = 0.7;
  /// RMS pixel distance of the noise added to each observed point; each
  /// coordinate receives Gaussian noise of std noise_sigma_px / sqrt(2).
  double noise_sigma_px = 0.0;
  DistortionParams true_distortion = default_true_distortion();
  ExtraWarp extra_warp;
  std::vector<double> targets_m = {100, 250, 500, 1000, 2000, 3500, 5000};
  std::uint64_t seed = 1;
  /// Test-point pixels are quantized to 1/marking_upscale, as when points
  /// are marked in a patch up-scaled by that factor; 0 keeps exact values.
  double marking_upscale = 10.0;
  /// Number of long-range (world, pixel) pairs emitted per camera for
  /// hybrid training; their pixels carry calibration-level noise.
  int train_points = 0;
  GeoAnchor anchor{19.0, 72.8, 0.0, 0.0};

  void validate() const {
    if (!(baseline_m > 0.0) || !(focal_px > 0.0) || image_width < 16 || image_height < 16) {
      throw Error(ErrorCode::ConfigError, "baseline, focal length and image size must be positive");
    }
    if (board_rows < 2 || board_cols < 2 || !(square_size_m > 0.0)) {
      throw Error(ErrorCode::ConfigError, "board needs at least 2x2 corners and a positive square size");
    }
    if (!(board_tilt_rad >= 0.0 && board_tilt_rad < 1.4)) {
      throw Error(ErrorCode::ConfigError, "board_tilt_rad must lie in [0, 1.4)");
    }
    if (views < 3) throw Error(ErrorCode::ConfigError, "at least 3 calibration views are required");
    if (!(noise_sigma_px >= 0.0) || !(marking_upscale >= 0.0) || train_points < 0) {
      throw Error(ErrorCode::ConfigError, "noise, marking upscale and train_points must be non-negative");
    }
    for (double d : targets_m) {
      if (!(d > 0.0)) throw Error(ErrorCode::ConfigError, "target distances must be positive");
    }
    true_distortion.validate_layout();
    extra_warp.validate();
    anchor.validate();
  }

  Intrinsics intrinsics() const {
    return {focal_px, focal_px, 0.5 * image_width, 0.5 * image_height, 0.0};
  }
  double half_diagonal() const { return 0.5 * std::hypot(image_width, image_height); }
};

/// Ground-truth camera: lens model, placement and the non-parametric warp.
struct TrueCamera {
  Intrinsics intrinsics;
  DistortionParams distortion;
  Pose pose;
  ExtraWarp warp;

  ImagePoint observe(const Eigen::Vector3d& world) const { return observe_camera(pose.apply(world)); }

  ImagePoint observe_camera(const Eigen::Vector3d& xc) const {
    if (!(xc.z() > 0.0)) throw Error(ErrorCode::BehindCamera, "point behind the ground-truth camera");
    const NormalizedPoint d = distort({xc.x() / xc.z(), xc.y() / xc.z()}, distortion);
    const ImagePoint px = to_pixel(d, intrinsics);
    const Eigen::Vector2d w = warp.displacement(d.x, d.y);
    return {px.u + w.x(), px.v + w.y()};
  }

  CameraModel model() const { return {intrinsics, distortion, pose, nullptr}; }
};

struct LongRangeTarget {
  std::string label;
  WorldPoint world;
  double distance_m = 0.0;
  /// Radius from the left principal point >= 40% of the half-diagonal.
  bool edge = false;
  CorrespondencePair exact;   // noise-free projections
  CorrespondencePair marked;  // what a user would mark (quantized)
};

struct SyntheticScene {
  SceneConfig config;
  TrueCamera left;
  TrueCamera right;
  CorrespondenceSet left_views;  // noisy
  CorrespondenceSet right_views;
  CorrespondenceSet left_views_exact;
  CorrespondenceSet right_views_exact;
  std::vector<Pose> left_board_poses;  // board -> camera
  std::vector<Pose> right_board_poses;
  std::vector<LongRangeTarget> targets;
  std::vector<TrainingPoint> train_left;
  std::vector<TrainingPoint> train_right;

  StereoRig true_rig() const { return {left.model(), right.model()}; }

  std::vector<CorrespondencePair> test_pairs() const {
    std::vector<CorrespondencePair> out;
    for (const auto& t : targets) out.push_back(t.marked);
    return out;
  }
};

namespace detail {

/// Camera looking along world +Y with its x axis along world +X and y axis
/// along world -Z, centered at `center`.
inline Pose forward_camera_pose(const Eigen::Vector3d& center) {
  Pose p;
  p.rotation << 1, 0, 0, 0, 0, -1, 0, 1, 0;
  p.translation = -p.rotation * center;
  return p;
}

inline bool inside(const ImagePoint& p, const SceneConfig& c, double margin) {
  return p.u >= margin && p.u <= c.image_width - 1 - margin && p.v >= margin && p.v <= c.image_height - 1 - margin;
}

/// Board placements aimed at a grid of image positions reaching close to the
/// borders, so the lens model is constrained over most of the frame. View 0
/// faces the camera near the image center and serves as the world reference.
inline std::vector<Pose> board_poses(const SceneConfig& c, const TrueCamera& cam, const PlanarTarget& target,
                                     std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const Eigen::Vector3d board_center(0.5 * (c.board_cols - 1) * c.square_size_m,
                                     0.5 * (c.board_rows - 1) * c.square_size_m, 0.0);
  const double board_extent = std::max(c.board_cols - 1, c.board_rows - 1) * c.square_size_m;
  // Distance at which the board spans about a third of the image width.
  const double base_distance = board_extent * c.focal_px / (0.33 * c.image_width);
  // Board-center targets as fractions of the image size; the outer cells put
  // the board edge within a few pixels of the frame border.
  const double u_lo = 0.17;
  const double v_lo = 0.25;
  const int grid_cols = 5;
  const int grid_rows = 3;

  std::vector<Pose> poses;
  for (int k = 0; k < c.views; ++k) {
    bool placed = false;
    for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
      double fu = 0.5;
      double fv = 0.5;
      Eigen::Vector3d aa;
      if (k == 0) {
        aa = Eigen::Vector3d(0.05 * unit(rng), 0.05 * unit(rng), 0.05 * unit(rng));
      } else {
        // Pull the target toward the center on repeated failures.
        const double spread = std::max(0.3, 1.0 - attempt / 400.0);
        const int cell = (k - 1) % (grid_cols * grid_rows);
        const double gu = u_lo + (1.0 - 2.0 * u_lo) * (cell % grid_cols) / double(grid_cols - 1);
        const double gv = v_lo + (1.0 - 2.0 * v_lo) * (cell / grid_cols) / double(grid_rows - 1);
        fu = 0.5 + spread * (gu - 0.5 + 0.02 * unit(rng));
        fv = 0.5 + spread * (gv - 0.5 + 0.02 * unit(rng));
        aa = Eigen::Vector3d(c.board_tilt_rad * unit(rng), c.board_tilt_rad * unit(rng), 0.2 * unit(rng));
      }
      NormalizedPoint ray;
      try {
        ray = undistort(normalize({fu * (c.image_width - 1), fv * (c.image_height - 1)}, cam.intrinsics),
                        cam.distortion);
      } catch (const Error&) {
        continue;
      }
      const double d = base_distance * (0.9 + 0.3 * (unit(rng) + 1.0) / 2.0);
      Pose p = Pose::from_axis_angle(aa, Eigen::Vector3d::Zero());
      p.translation = d * Eigen::Vector3d(ray.x, ray.y, 1.0) - p.rotation * board_center;
      bool ok = true;
      for (const auto& x : target.points) {
        const Eigen::Vector3d xc = p.apply(x);
        if (!(xc.z() > 0.05 * d)) {
          ok = false;
          break;
        }
        try {
          if (!inside(cam.observe_camera(xc), c, 5.0)) ok = false;
        } catch (const Error&) {
          ok = false;
        }
        if (!ok) break;
      }
      if (ok) {
        poses.push_back(p);
        placed = true;
      }
    }
    if (!placed) {
      throw Error(ErrorCode::ConfigError, "could not place calibration view " + std::to_string(k) +
                                              " inside the image; check board size and focal length");
    }
  }
  return poses;
}

inline void observe_boards(const SceneConfig& c, const TrueCamera& cam, const std::vector<Pose>& poses,
                           const PlanarTarget& target, std::mt19937_64& rng, CorrespondenceSet& exact,
                           CorrespondenceSet& noisy) {
  std::normal_distribution<double> noise(0.0, c.noise_sigma_px / std::sqrt(2.0));
  exact.target = target;
  noisy.target = target;
  for (std::size_t i = 0; i < poses.size(); ++i) {
    std::vector<ImagePoint> ex;
    std::vector<ImagePoint> no;
    for (const auto& x : target.points) {
      const ImagePoint p = cam.observe_camera(poses[i].apply(x));
      ex.push_back(p);
      no.push_back({p.u + noise(rng), p.v + noise(rng)});
    }
    exact.views.push_back(std::move(ex));
    noisy.views.push_back(std::move(no));
    exact.view_ids.push_back("view_" + std::to_string(i));
    noisy.view_ids.push_back("view_" + std::to_string(i));
  }
  // The reference board's placement in the world is surveyed.
  const WorldReference ref{0, cam.pose.inverse().compose(poses[0])};
  exact.world_reference = ref;
  noisy.world_reference = ref;
}

inline double quantize(double v, double upscale) { return upscale > 0.0 ? std::round(v * upscale) / upscale : v; }

}  // namespace detail

/// Samples a world point at `distance` along a direction whose left-camera
/// pixel lies at a radius fraction in [r_lo, r_hi] of the half-diagonal and
/// which is visible in both cameras. Returns nullopt when sampling fails.
inline std::optional<Eigen::Vector3d> sample_visible_point(const SyntheticScene& s, double distance, double r_lo,
                                                           double r_hi, std::mt19937_64& rng, double margin = 20.0) {
  const SceneConfig& c = s.config;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double hd = c.half_diagonal();
  for (int attempt = 0; attempt < 5000; ++attempt) {
    const double r = hd * (r_lo + (r_hi - r_lo) * unit(rng));
    const double phi = 2.0 * std::numbers::pi * unit(rng);
    const ImagePoint target_px{s.left.intrinsics.cx + r * std::cos(phi), s.left.intrinsics.cy + r * std::sin(phi)};
    if (!detail::inside(target_px, c, margin)) continue;
    // Ray through the undistorted pixel, then place the point at `distance`.
    NormalizedPoint p;
    try {
      p = undistort(normalize(target_px, s.left.intrinsics), s.left.distortion);
    } catch (const Error&) {
      continue;
    }
    const Eigen::Vector3d ray_c = Eigen::Vector3d(p.x, p.y, 1.0).normalized();
    const Eigen::Vector3d xw = s.left.pose.inverse().apply(distance * ray_c);
    try {
      if (detail::inside(s.left.observe(xw), c, margin) && detail::inside(s.right.observe(xw), c, margin)) {
        return xw;
      }
    } catch (const Error&) {
    }
  }
  return std::nullopt;
}

/// Builds the full scene. Left camera at the world origin, right camera at
/// (baseline, 0, 0), both looking along +Y.
inline SyntheticScene generate_scene(const SceneConfig& config) {
  config.validate();
  SyntheticScene s;
  s.config = config;
  std::mt19937_64 rng(config.seed);

  s.left = {config.intrinsics(), config.true_distortion, detail::forward_camera_pose(Eigen::Vector3d::Zero()),
            config.extra_warp};
  s.right = {config.intrinsics(), config.true_distortion,
             detail::forward_camera_pose(Eigen::Vector3d(config.baseline_m, 0.0, 0.0)), config.extra_warp};
  if (!denominator_positive(config.true_distortion, 1.5 * config.half_diagonal() / config.focal_px)) {
    throw Error(ErrorCode::ConfigError, "true distortion denominator vanishes inside the field of view");
  }

  const PlanarTarget target = PlanarTarget::grid(config.board_rows, config.board_cols, config.square_size_m);
  s.left_board_poses = detail::board_poses(config, s.left, target, rng);
  s.right_board_poses = detail::board_poses(config, s.right, target, rng);
  detail::observe_boards(config, s.left, s.left_board_poses, target, rng, s.left_views_exact, s.left_views);
  detail::observe_boards(config, s.right, s.right_board_poses, target, rng, s.right_views_exact, s.right_views);

  for (std::size_t i = 0; i < config.targets_m.size(); ++i) {
    const bool edge = i % 2 == 1;
    const auto xw = edge ? sample_visible_point(s, config.targets_m[i], 0.6, 0.95, rng)
                         : sample_visible_point(s, config.targets_m[i], 0.0, 0.3, rng);
    if (!xw) {
      throw Error(ErrorCode::ConfigError, "no visible direction for target at " + std::to_string(config.targets_m[i]) +
                                              " m");
    }
    LongRangeTarget t;
    t.label = "T" + std::to_string(i + 1);
    t.world = WorldPoint::from(*xw);
    t.distance_m = config.targets_m[i];
    const ImagePoint l = s.left.observe(*xw);
    t.edge = std::hypot(l.u - s.left.intrinsics.cx, l.v - s.left.intrinsics.cy) >= 0.4 * config.half_diagonal();
    t.exact = {l, s.right.observe(*xw), t.label};
    const double q = config.marking_upscale;
    t.marked = {{detail::quantize(l.u, q), detail::quantize(l.v, q)},
                {detail::quantize(t.exact.right_px.u, q), detail::quantize(t.exact.right_px.v, q)},
                t.label};
    s.targets.push_back(std::move(t));
  }

  std::normal_distribution<double> noise(0.0, config.noise_sigma_px / std::sqrt(2.0));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double d_lo = config.targets_m.empty() ? 100.0 : *std::min_element(config.targets_m.begin(), config.targets_m.end());
  const double d_hi = config.targets_m.empty() ? 5000.0 : *std::max_element(config.targets_m.begin(), config.targets_m.end());
  for (int i = 0; i < config.train_points; ++i) {
    const double d = d_lo * std::pow(d_hi / d_lo, unit(rng));
    const auto xw = sample_visible_point(s, d, 0.0, 1.0, rng);
    if (!xw) throw Error(ErrorCode::ConfigError, "could not place training point " + std::to_string(i));
    const ImagePoint l = s.left.observe(*xw);
    const ImagePoint r = s.right.observe(*xw);
    s.train_left.push_back({WorldPoint::from(*xw), {l.u + noise(rng), l.v + noise(rng)}});
    s.train_right.push_back({WorldPoint::from(*xw), {r.u + noise(rng), r.v + noise(rng)}});
  }
  return s;
}

// ---------------------------------------------------------------------------
// Evaluation

enum class PipelineMode { Classical, Extended, Hybrid };

inline std::string mode_name(PipelineMode m) {
  switch (m) {
    case PipelineMode::Classical: return "classical";
    case PipelineMode::Extended: return "extended";
    case PipelineMode::Hybrid: return "hybrid";
  }
  return "classical";
}

struct TargetEvaluation {
  std::string label;
  WorldPoint truth;
  std::optional<TriangulatedPoint> estimate;
  std::optional<std::string> error;
  double distance_m = 0.0;
  bool edge = false;
  double depth_error_m = std::numeric_limits<double>::quiet_NaN();     // along the viewing direction (+Y)
  double position_error_m = std::numeric_limits<double>::quiet_NaN();  // 3-D distance
  /// Mean over both cameras of the distance between the observed pixel and
  /// the truth point projected through the estimated camera.
  double reproj_err_px = std::numeric_limits<double>::quiet_NaN();
};

struct PipelineReport {
  PipelineMode mode = PipelineMode::Classical;
  std::vector<TargetEvaluation> targets;
  double rms_depth_error_m = 0.0;
  double geodetic_rms_m = 0.0;
  double max_reproj_err_px = 0.0;
  double mean_center_reproj_px = std::numeric_limits<double>::quiet_NaN();
  double mean_edge_reproj_px = std::numeric_limits<double>::quiet_NaN();
  int failures = 0;
};

/// Projects a world point through an estimated camera (effective parameters
/// in hybrid mode).
inline ImagePoint project_with(const CameraModel& cam, const WorldPoint& x) {
  const auto [a, k] = cam.effective();
  return project(x, cam.pose, a, k);
}

/// Mono reprojection RMS of world points against observed pixels.
inline double longrange_reprojection_rms(const CameraModel& cam, const std::vector<TrainingPoint>& pts) {
  if (pts.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& p : pts) {
    const ImagePoint q = project_with(cam, p.world);
    sum += std::pow(q.u - p.pixel.u, 2) + std::pow(q.v - p.pixel.v, 2);
  }
  return std::sqrt(sum / static_cast<double>(pts.size()));
}

/// Triangulates every pair and scores it against its truth point.
inline PipelineReport evaluate_targets(const std::vector<LongRangeTarget>& targets,
                                       const std::vector<CorrespondencePair>& pairs, const StereoRig& rig,
                                       const GeoAnchor& anchor, PipelineMode mode) {
  if (targets.size() != pairs.size()) throw Error(ErrorCode::LengthMismatch, "targets and pairs differ in length");
  if (mode == PipelineMode::Hybrid && (!rig.left.hybrid || !rig.right.hybrid)) {
    throw Error(ErrorCode::ConfigError, "hybrid evaluation needs a hybrid model for both cameras");
  }
  rig.validate();
  PipelineReport rep;
  rep.mode = mode;
  std::vector<GeoPoint> est_geo;
  std::vector<GeoPoint> true_geo;
  double depth_sq = 0.0;
  int depth_n = 0;
  double center_sum = 0.0;
  double edge_sum = 0.0;
  int center_n = 0;
  int edge_n = 0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    TargetEvaluation ev;
    ev.label = targets[i].label;
    ev.truth = targets[i].world;
    ev.distance_m = targets[i].distance_m;
    ev.edge = targets[i].edge;
    try {
      const ImagePoint l = project_with(rig.left, ev.truth);
      const ImagePoint r = project_with(rig.right, ev.truth);
      ev.reproj_err_px = 0.5 * (std::hypot(l.u - pairs[i].left_px.u, l.v - pairs[i].left_px.v) +
                                std::hypot(r.u - pairs[i].right_px.u, r.v - pairs[i].right_px.v));
      rep.max_reproj_err_px = std::max(rep.max_reproj_err_px, ev.reproj_err_px);
      (ev.edge ? edge_sum : center_sum) += ev.reproj_err_px;
      ++(ev.edge ? edge_n : center_n);

      ev.estimate = triangulate(rig, pairs[i]);
      ev.depth_error_m = std::abs(ev.estimate->world.y - ev.truth.y);
      ev.position_error_m = (ev.estimate->world.vec() - ev.truth.vec()).norm();
      depth_sq += ev.depth_error_m * ev.depth_error_m;
      ++depth_n;
      est_geo.push_back(world_to_geodetic(ev.estimate->world, anchor));
      true_geo.push_back(world_to_geodetic(ev.truth, anchor));
    } catch (const Error& e) {
      ev.error = e.what();
      ++rep.failures;
    }
    rep.targets.push_back(std::move(ev));
  }
  rep.rms_depth_error_m = depth_n ? std::sqrt(depth_sq / depth_n) : 0.0;
  rep.geodetic_rms_m = geodetic_rms(est_geo, true_geo);
  if (center_n) rep.mean_center_reproj_px = center_sum / center_n;
  if (edge_n) rep.mean_edge_reproj_px = edge_sum / edge_n;
  return rep;
}

inline PipelineReport evaluate_pipeline(const SyntheticScene& scene, const StereoRig& estimate, PipelineMode mode) {
  return evaluate_targets(scene.targets, scene.test_pairs(), estimate, scene.config.anchor, mode);
}

/// Camera model from a calibration whose correspondences carried a world
/// reference.
inline CameraModel camera_from_calibration(const CalibrationResult& r) {
  if (!r.world_pose) throw Error(ErrorCode::ConfigError, "calibration has no world pose; add a world_reference");
  return {r.intrinsics, r.distortion, *r.world_pose, nullptr};
}

}  // namespace lrstereo
