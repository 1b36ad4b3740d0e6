#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "lrstereo/geometry.hpp"

using namespace lrstereo;

namespace {

// k1 k2 k3 | k4 k5 k6 | p1 p2 | s1 s2 s3 s4 | tau_x tau_y
DistortionParams full_lens() {
  return DistortionParams(DistortionShape::classical14(), {-0.12, 0.04, -0.015, 0.05, -0.03, 0.02, 1e-3, -4e-4, 6e-4,
                                                           -3e-4, -5e-4, 2e-4, 0.003, -0.002});
}

}  // namespace

// Reference pixels from cv2.projectPoints with the same 14 coefficients
// (OpenCV order k1 k2 p1 p2 k3 k4 k5 k6 s1 s2 s3 s4 tx ty), zero pose.
TEST(Distortion, MatchesOpenCvProjection) {
  const Intrinsics a{1600, 1600, 959.5, 539.5, 0};
  const DistortionParams k = full_lens();
  struct Case {
    double x, y, u, v;
  };
  const Case cases[] = {{0.3, 0.2, 1430.147828926778, 853.356013130464},
                        {-0.25, 0.1, 564.209558402220, 697.682139866451},
                        {0.05, -0.4, 1037.330100882483, -82.689329102621},
                        {0.5, 0.3, 1720.799203726224, 996.562739036876}};
  for (const Case& c : cases) {
    const ImagePoint p = project({c.x, c.y, 1.0}, Pose{}, a, k);
    EXPECT_NEAR(p.u, c.u, 1e-8);
    EXPECT_NEAR(p.v, c.v, 1e-8);
  }
}

TEST(Distortion, RadialOnlyByHand) {
  DistortionParams k(DistortionShape{2, 0, false, 0, false});
  k.k_num(0) = -0.12;
  k.k_num(1) = 0.04;
  // r^2 = 0.13, factor = 1 - 0.12 * 0.13 + 0.04 * 0.0169 = 0.985076
  const NormalizedPoint d = distort({0.3, 0.2}, k);
  EXPECT_NEAR(d.x, 0.2955228, 1e-15);
  EXPECT_NEAR(d.y, 0.1970152, 1e-15);
}

TEST(Distortion, RationalDenominatorDivides) {
  DistortionParams k(DistortionShape{0, 1, false, 0, false});
  k.k_den(0) = 1.0;
  const NormalizedPoint d = distort({1.0, 0.0}, k);  // 1 / (1 + 1)
  EXPECT_DOUBLE_EQ(d.x, 0.5);
  EXPECT_DOUBLE_EQ(d.y, 0.0);
}

TEST(Distortion, TangentialByHand) {
  DistortionParams k(DistortionShape{0, 0, true, 0, false});
  k.set_tangential(0.01, -0.02);
  const double x = 0.3, y = 0.2, r2 = 0.13;
  const NormalizedPoint d = distort({x, y}, k);
  EXPECT_NEAR(d.x, x + 2 * 0.01 * x * y - 0.02 * (r2 + 2 * x * x), 1e-15);
  EXPECT_NEAR(d.y, y + 0.01 * (r2 + 2 * y * y) + 2 * -0.02 * x * y, 1e-15);
}

TEST(Distortion, ZeroCoefficientsAreIdentity) {
  for (const DistortionShape& s : DistortionShape::default_lattice()) {
    const NormalizedPoint d = distort({0.41, -0.27}, DistortionParams(s));
    EXPECT_DOUBLE_EQ(d.x, 0.41);
    EXPECT_DOUBLE_EQ(d.y, -0.27);
  }
}

TEST(Distortion, ExpandingKeepsTheSameMap) {
  const DistortionParams k = full_lens();
  const DistortionParams big = k.expanded_to(DistortionShape{6, 6, true, 4, true});
  for (double x : {-0.5, 0.0, 0.33}) {
    for (double y : {-0.2, 0.45}) {
      const NormalizedPoint a = distort({x, y}, k);
      const NormalizedPoint b = distort({x, y}, big);
      EXPECT_DOUBLE_EQ(a.x, b.x);
      EXPECT_DOUBLE_EQ(a.y, b.y);
    }
  }
  EXPECT_THROW(big.expanded_to(DistortionShape::classical14()), Error);
}

TEST(Distortion, PoleIsReported) {
  DistortionParams k(DistortionShape{0, 1, false, 0, false});
  k.k_den(0) = -1.0;
  EXPECT_FALSE(denominator_positive(k, 1.5));
  try {
    distort({1.2, 0.0}, k);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteResult);
  }
}

TEST(Distortion, LayoutIsChecked) {
  EXPECT_THROW(DistortionParams(DistortionShape::classical14(), {0.1, 0.2}), Error);
  try {
    DistortionShape{7, 0, false, 0, false}.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ConfigError);
  }
}

TEST(Tilt, ZeroAnglesGiveIdentity) { EXPECT_TRUE(tilt_matrix(0.0, 0.0).isApprox(Eigen::Matrix3d::Identity())); }

TEST(Tilt, SmallTiltMovesPointsSlightly) {
  DistortionParams k(DistortionShape{0, 0, false, 0, true});
  k.set_tilt(0.01, 0.0);
  const NormalizedPoint d = distort({0.2, 0.1}, k);
  EXPECT_GT(std::hypot(d.x - 0.2, d.y - 0.1), 1e-5);
  EXPECT_LT(std::hypot(d.x - 0.2, d.y - 0.1), 1e-2);
}

TEST(Undistort, InvertsDistort) {
  const DistortionParams k = full_lens();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unit(-0.5, 0.5);
  for (int i = 0; i < 500; ++i) {
    const NormalizedPoint p{unit(rng), unit(rng)};
    const NormalizedPoint q = undistort(distort(p, k), k, 1e-13);
    EXPECT_NEAR(q.x, p.x, 1e-11);
    EXPECT_NEAR(q.y, p.y, 1e-11);
  }
}

TEST(Undistort, OutsideTheInvertibleRegionThrows) {
  // r / (1 + r^2) never exceeds 0.5, so radius 0.7 has no preimage.
  DistortionParams k(DistortionShape{0, 1, false, 0, false});
  k.k_den(0) = 1.0;
  try {
    undistort({0.7, 0.0}, k);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoConvergence);
  }
}

TEST(Pinhole, ProjectsKnownPoint) {
  const Intrinsics a{1000, 1000, 500, 400, 0};
  const ImagePoint p = project({1.0, 2.0, 10.0}, Pose{}, a, DistortionParams(DistortionShape::none()));
  EXPECT_DOUBLE_EQ(p.u, 600.0);
  EXPECT_DOUBLE_EQ(p.v, 600.0);
}

TEST(Pinhole, NormalizeUndoesToPixelWithSkew) {
  const Intrinsics a{1500, 1480, 950, 530, 2.5};
  const NormalizedPoint n = normalize(to_pixel({0.31, -0.22}, a), a);
  EXPECT_NEAR(n.x, 0.31, 1e-15);
  EXPECT_NEAR(n.y, -0.22, 1e-15);
}

TEST(Pinhole, PointBehindCameraThrows) {
  try {
    project({0, 0, -5}, Pose{}, Intrinsics{}, DistortionParams(DistortionShape::none()));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BehindCamera);
  }
}

TEST(PoseTest, ComposeWithInverseIsIdentity) {
  const Pose p = Pose::from_axis_angle({0.1, -0.4, 0.25}, {1, 2, 3});
  const Pose q = p.compose(p.inverse());
  EXPECT_TRUE(q.rotation.isApprox(Eigen::Matrix3d::Identity(), 1e-14));
  EXPECT_LT(q.translation.norm(), 1e-14);
  EXPECT_TRUE(p.is_valid());
  EXPECT_TRUE(p.axis_angle().isApprox(Eigen::Vector3d(0.1, -0.4, 0.25), 1e-12));
  EXPECT_TRUE(p.apply(p.center()).isZero(1e-14));
}

TEST(Shapes, CountsAndNesting) {
  EXPECT_EQ(DistortionShape::classical14().param_count(), 14u);
  EXPECT_EQ(DistortionShape::extended20().param_count(), 20u);
  EXPECT_EQ(DistortionShape::none().param_count(), 0u);
  const auto lattice = DistortionShape::default_lattice();
  ASSERT_EQ(lattice.size(), 6u);
  for (std::size_t i = 0; i < lattice.size(); ++i) {
    EXPECT_EQ(lattice[i].param_count(), 14 + 2 * i);
    if (i > 0) {
      EXPECT_TRUE(lattice[i - 1].nests_in(lattice[i]));
      EXPECT_FALSE(lattice[i].nests_in(lattice[i - 1]));
    }
  }
}

TEST(Shapes, ClassicalPrismOrderIsAPrefix) {
  DistortionParams k(DistortionShape{0, 0, false, 3, false});
  k.prism(0, 0) = 1;
  k.prism(0, 1) = 2;
  k.prism(1, 0) = 3;
  k.prism(1, 1) = 4;
  k.prism(0, 2) = 5;
  k.prism(1, 2) = 6;
  EXPECT_EQ(k.coeffs, (std::vector<double>{1, 2, 3, 4, 5, 6}));
}
