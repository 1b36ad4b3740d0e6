#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lrstereo/stereo.hpp"

using namespace lrstereo;

namespace {

constexpr double kF = 1600.0;
constexpr double kBaseline = 10.0;

// Left camera at the origin, right camera 10 m along +X, both looking down +Z.
StereoRig parallel_rig(const DistortionParams& k = DistortionParams(DistortionShape::none())) {
  StereoRig rig;
  const Intrinsics a{kF, kF, 960, 540, 0};
  rig.left = {a, k, Pose{}, nullptr};
  rig.right = {a, k, Pose::from_axis_angle(Eigen::Vector3d::Zero(), {-kBaseline, 0, 0}), nullptr};
  return rig;
}

DistortionParams mild_lens() {
  return DistortionParams(DistortionShape::classical14(), {-0.08, 0.02, 0, 0.01, 0, 0, 5e-4, -3e-4, 2e-4, 0, -1e-4,
                                                           0, 1e-3, -5e-4});
}

}  // namespace

TEST(ProjectionMatrix, IdentityPose) {
  const auto p = projection_matrix(Intrinsics{}, Pose{});
  Eigen::Matrix<double, 3, 4> expected = Eigen::Matrix<double, 3, 4>::Zero();
  expected.leftCols<3>().setIdentity();
  EXPECT_TRUE(p.isApprox(expected, 0.0));
}

TEST(ProjectionMatrix, TranslationOnly) {
  const auto p = projection_matrix(Intrinsics{}, Pose::from_axis_angle(Eigen::Vector3d::Zero(), {1, 0, 0}));
  EXPECT_EQ(p(0, 3), 1.0);
  EXPECT_EQ(p(1, 3), 0.0);
  EXPECT_EQ(p(2, 3), 0.0);
}

TEST(ProjectionMatrix, GeneralByHand) {
  const Intrinsics a{1500, 1450, 900, 500, 2};
  const double t = 20.0 * M_PI / 180.0;
  const Pose pose = Pose::from_axis_angle({0, t, 0}, {0.5, -1, 3});
  const auto p = projection_matrix(a, pose);
  const double c = std::cos(t), s = std::sin(t);
  // R about Y: [[c,0,s],[0,1,0],[-s,0,c]]
  const double rt[3][4] = {{c, 0, s, 0.5}, {0, 1, 0, -1}, {-s, 0, c, 3}};
  const double am[3][3] = {{1500, 2, 900}, {0, 1450, 500}, {0, 0, 1}};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) {
      double v = 0.0;
      for (int k = 0; k < 3; ++k) v += am[i][k] * rt[k][j];
      EXPECT_NEAR(p(i, j), v, 1e-9);
    }
  }
}

TEST(Triangulate, ParallelRigOnAxis) {
  // Disparity f B / Z = 16 px at 1000 m.
  const StereoRig rig = parallel_rig();
  const TriangulatedPoint x = triangulate(rig, {{960, 540}, {944, 540}, "axis"});
  EXPECT_NEAR(x.world.z, 1000.0, 1e-6 * 1000.0);
  EXPECT_NEAR(x.world.x, 0.0, 1e-6);
  EXPECT_NEAR(x.world.y, 0.0, 1e-6);
  EXPECT_LT(x.reproj_err_px, 1e-6);
}

TEST(Triangulate, ZeroDisparityIsDegenerate) {
  try {
    triangulate(parallel_rig(), {{960, 540}, {960, 540}, ""});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateGeometry);
  }
}

TEST(Triangulate, NegativeDisparityIsBehind) {
  try {
    triangulate(parallel_rig(), {{960, 540}, {976, 540}, ""});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BehindCamera);
  }
}

TEST(Triangulate, RoundTripThroughDistortion) {
  StereoRig rig = parallel_rig(mild_lens());
  rig.right.pose = Pose::from_axis_angle({0.01, -0.02, 0.005}, {-kBaseline, 0.2, 0.1});
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> lateral(-0.3, 0.3);
  std::uniform_real_distribution<double> depth(5.0, 100.0);
  for (int i = 0; i < 200; ++i) {
    const double z = depth(rng);
    const WorldPoint p{lateral(rng) * z, lateral(rng) * z * 0.6, z};
    const ImagePoint l = project(p, rig.left.pose, rig.left.intrinsics, rig.left.distortion);
    const ImagePoint r = project(p, rig.right.pose, rig.right.intrinsics, rig.right.distortion);
    const TriangulatedPoint x = triangulate(rig, {l, r, ""});
    EXPECT_LT((x.world.vec() - p.vec()).norm(), 1e-6) << "point " << i;
  }
}

TEST(Triangulate, SolutionMinimizesResidual) {
  StereoRig rig = parallel_rig();
  const auto pl = projection_matrix(rig.left.intrinsics, rig.left.pose);
  const auto pr = projection_matrix(rig.right.intrinsics, rig.right.pose);
  const ImagePoint l{1010.3, 520.7}, r{980.1, 521.9};
  const TriangulatedPoint x = triangulate_ideal(pl, pr, l, r);
  Eigen::Matrix4d h;
  h.row(0) = l.u * pl.row(2) - pl.row(0);
  h.row(1) = l.v * pl.row(2) - pl.row(1);
  h.row(2) = r.u * pr.row(2) - pr.row(0);
  h.row(3) = r.v * pr.row(2) - pr.row(1);
  const Eigen::Vector4d best = x.world.vec().homogeneous().normalized();
  const double hx = (h * best).norm();
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 10000; ++i) {
    const Eigen::Vector4d y = Eigen::Vector4d(n(rng), n(rng), n(rng), n(rng)).normalized();
    ASSERT_LE(hx, (h * y).norm() + 1e-12);
  }
}

TEST(Triangulate, ConditionGrowsWithRange) {
  const StereoRig rig = parallel_rig();
  const double near = triangulate(rig, {{960, 540}, {960 - 160, 540}, ""}).condition;
  const double far = triangulate(rig, {{960, 540}, {960 - 3.2, 540}, ""}).condition;
  EXPECT_GT(far, near);
}

TEST(Triangulate, DisparityShiftMatchesExactLaw) {
  const StereoRig rig = parallel_rig();
  for (const double z : {200.0, 500.0, 1000.0}) {
    for (const double dd : {0.1, 0.5, 1.0}) {
      if (z * dd > 0.5 * kF * kBaseline) continue;
      const double d = kF * kBaseline / z;
      const double got = triangulate(rig, {{960, 540}, {960 - d + dd, 540}, ""}).world.z - z;
      const double want = depth_error_exact(z, dd, kF, kBaseline);
      EXPECT_NEAR(got, want, 0.05 * want) << z << " " << dd;
    }
  }
}

TEST(RigValidate, RejectsZeroBaseline) {
  StereoRig rig = parallel_rig();
  rig.right.pose = rig.left.pose;
  EXPECT_THROW(rig.validate(), Error);
  EXPECT_NO_THROW(parallel_rig().validate());
}

TEST(DepthError, FirstOrderTable) {
  struct Cell {
    double z, dd, expected;
  };
  const Cell cells[] = {{1000, 2, 125},      {1000, 1, 62.5},      {1000, 0.5, 31.25}, {1000, 0.1, 6.25},
                        {5000, 2, 3125},      {5000, 1, 1562.5},    {5000, 0.5, 781.25}, {5000, 0.1, 156.25}};
  for (const Cell& c : cells) EXPECT_DOUBLE_EQ(depth_error_approx(c.z, c.dd, kF, kBaseline), c.expected);
  EXPECT_EQ(depth_error_approx(1234, 0, kF, kBaseline), 0.0);
}

TEST(DepthError, ExactByHand) {
  // 1000^2 * 2 / (16000 - 2000)
  EXPECT_NEAR(depth_error_exact(1000, 2, kF, kBaseline), 142.857142857142857, 1e-9);
}

TEST(DepthError, ExactApproachesFirstOrder) {
  double prev = INFINITY;
  for (const double dd : {1e-1, 1e-2, 1e-3, 1e-4}) {
    const double gap = std::abs(depth_error_exact(1000, dd, kF, kBaseline) / depth_error_approx(1000, dd, kF, kBaseline) - 1);
    EXPECT_LT(gap, prev);
    prev = gap;
  }
  EXPECT_LT(prev, 1e-5);
}

TEST(DepthError, DivergesPastTrueDisparity) {
  try {
    depth_error_exact(5000, 4, kF, kBaseline);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DivergentDepth);
  }
}

TEST(SubpixelMap, Examples) {
  const ImagePoint p = subpixel_map({100, 200}, 10, {37, 52});
  EXPECT_NEAR(p.u, 103.7, 1e-12);
  EXPECT_NEAR(p.v, 205.2, 1e-12);
  const ImagePoint q = subpixel_map({0, 0}, 1, {5, 5});
  EXPECT_EQ(q.u, 5.0);
  EXPECT_EQ(q.v, 5.0);
  EXPECT_THROW(subpixel_map({0, 0}, 0.5, {1, 1}), Error);
}

TEST(SubpixelMap, RoundTrip) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1920);
  for (int i = 0; i < 100; ++i) {
    const ImagePoint p{u(rng), u(rng)};
    const ImagePoint o{std::floor(p.u) - 3, std::floor(p.v) - 3};
    const double s = 1.0 + i % 16;
    const ImagePoint q = subpixel_map(o, s, {(p.u - o.u) * s, (p.v - o.v) * s});
    EXPECT_NEAR(q.u, p.u, 1e-9);
    EXPECT_NEAR(q.v, p.v, 1e-9);
  }
}

TEST(RefineOrientation, RecoversRotation) {
  const StereoRig rig = parallel_rig(mild_lens());
  CameraModel truth = rig.right;
  truth.pose = Pose::from_axis_angle({0.004, -0.01, 0.002}, Eigen::Vector3d::Zero());
  truth.pose.translation = -truth.pose.rotation * Eigen::Vector3d(kBaseline, 0, 0);

  std::vector<ControlPoint> pts;
  for (const WorldPoint& w : {WorldPoint{-200, 30, 1500}, WorldPoint{300, -40, 2500}, WorldPoint{20, 80, 800},
                              WorldPoint{-90, -60, 400}}) {
    pts.push_back({w, project(w, truth.pose, truth.intrinsics, truth.distortion)});
  }
  const CameraModel fitted = refine_orientation(rig.right, pts);
  EXPECT_LT((fitted.pose.rotation - truth.pose.rotation).norm(), 1e-9);
  EXPECT_LT((fitted.pose.center() - rig.right.pose.center()).norm(), 1e-9);

  try {
    refine_orientation(rig.right, {pts[0]});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateConfiguration);
  }
}
