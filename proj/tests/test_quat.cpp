// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "mmguide/errors.hpp"
#include "mmguide/quat.hpp"
#include "test_support.hpp"

using namespace mmguide;
using mmguide::testing::random_rotation;
using mmguide::testing::rotation_matrix;

namespace {

constexpr double kTight = 1e-12;

bool same_rotation(const UnitQuaternion &a, const UnitQuaternion &b,
                   double tol) {
  return (a.vec() - b.vec()).norm() < tol || (a.vec() + b.vec()).norm() < tol;
}

UnitQuaternion about_z(double deg) {
  return UnitQuaternion::from_axis_angle({0, 0, 1}, deg_to_rad(deg));
}

} // namespace

TEST(Quaternion, IdentityIsNeutral) {
  Rng rng(1);
  const UnitQuaternion q = random_rotation(rng);
  EXPECT_EQ(multiply(UnitQuaternion::identity(), q), q);
  EXPECT_EQ(multiply(q, UnitQuaternion::identity()), q);
}

TEST(Quaternion, ProductWithConjugateIsIdentity) {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const UnitQuaternion q = random_rotation(rng);
    EXPECT_TRUE(same_rotation(multiply(q, conjugate(q)),
                              UnitQuaternion::identity(), 1e-12));
    EXPECT_TRUE(same_rotation(multiply(conjugate(q), q),
                              UnitQuaternion::identity(), 1e-12));
  }
}

TEST(Quaternion, ConjugateIsInvolution) {
  Rng rng(3);
  const UnitQuaternion q = random_rotation(rng);
  EXPECT_EQ(conjugate(conjugate(q)), q);
  EXPECT_EQ(conjugate(UnitQuaternion::identity()), UnitQuaternion::identity());
}

TEST(Quaternion, QuarterTurnsComposeToHalfTurn) {
  const UnitQuaternion q = multiply(about_z(90), about_z(90));
  EXPECT_TRUE(same_rotation(q, about_z(180), 1e-12));
  const Eigen::Matrix3d expected =
      rotation_matrix(about_z(90)) * rotation_matrix(about_z(90));
  EXPECT_LT((rotation_matrix(q) - expected).norm(), 1e-12);
  Eigen::Matrix3d half;
  half << -1, 0, 0, 0, -1, 0, 0, 0, 1;
  EXPECT_LT((rotation_matrix(q) - half).norm(), 1e-12);
}

TEST(Quaternion, ProductMatchesMatrixComposition) {
  Rng rng(4);
  for (int i = 0; i < 200; ++i) {
    const UnitQuaternion a = random_rotation(rng);
    const UnitQuaternion b = random_rotation(rng);
    const Eigen::Matrix3d expected = rotation_matrix(a) * rotation_matrix(b);
    EXPECT_LT((rotation_matrix(multiply(a, b)) - expected).norm(), 1e-12);
  }
}

TEST(Quaternion, ProductIsAssociative) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const UnitQuaternion a = random_rotation(rng), b = random_rotation(rng),
                         c = random_rotation(rng);
    const auto lhs = multiply(multiply(a, b), c);
    const auto rhs = multiply(a, multiply(b, c));
    EXPECT_LT((lhs.vec() - rhs.vec()).norm(), 1e-9);
  }
}

TEST(Quaternion, RelativeRotationBoundaryCases) {
  Rng rng(6);
  const UnitQuaternion q = random_rotation(rng);
  EXPECT_TRUE(same_rotation(relative_rotation(q, q), UnitQuaternion::identity(),
                            kTight));
  EXPECT_TRUE(same_rotation(relative_rotation(UnitQuaternion::identity(), q), q,
                            kTight));
}

TEST(Quaternion, RelativeRotationRoundTrips) {
  Rng rng(7);
  for (int i = 0; i < 500; ++i) {
    const UnitQuaternion a = random_rotation(rng), b = random_rotation(rng);
    const UnitQuaternion r = relative_rotation(a, b);
    EXPECT_TRUE(same_rotation(multiply(a, r), b, 1e-9));
    EXPECT_NEAR(r.norm(), 1.0, 1e-12);
  }
}

TEST(Quaternion, RelativeRotationRejectsNonUnitInput) {
  const UnitQuaternion bad{2.0, 0.0, 0.0, 0.0};
  EXPECT_THROW(relative_rotation(bad, UnitQuaternion::identity()),
               InvalidArgument);
}

TEST(Quaternion, AngleClosedForms) {
  Rng rng(8);
  const UnitQuaternion q = random_rotation(rng);
  EXPECT_NEAR(angle_between(q, q), 0.0, 1e-6);
  EXPECT_NEAR(angle_between(q, -q), 0.0, 1e-6);
  EXPECT_NEAR(angle_between(UnitQuaternion::identity(), about_z(90)), 90.0,
              1e-10);
}

TEST(Quaternion, AngleIsSymmetricAndSignInvariant) {
  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const UnitQuaternion a = random_rotation(rng), b = random_rotation(rng);
    const double ab = angle_between(a, b);
    EXPECT_DOUBLE_EQ(ab, angle_between(b, a));
    EXPECT_DOUBLE_EQ(ab, angle_between(-a, b));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 180.0);
    // Geodesic angle agrees with the trace of the relative rotation matrix.
    const Eigen::Matrix3d rel =
        rotation_matrix(a).transpose() * rotation_matrix(b);
    const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
    EXPECT_NEAR(ab, rad_to_deg(std::acos(c)), 1e-6);
  }
}

TEST(Quaternion, AngleOfRoundedUnitInputIsFinite) {
  const UnitQuaternion q{1.0 + 1e-15, 0.0, 0.0, 0.0};
  EXPECT_TRUE(std::isfinite(angle_between(q, UnitQuaternion::identity())));
}

TEST(Quaternion, SlerpEndpoints) {
  Rng rng(10);
  const UnitQuaternion a = random_rotation(rng), b = random_rotation(rng);
  EXPECT_TRUE(same_rotation(slerp(a, b, 0.0), a, 1e-12));
  EXPECT_TRUE(same_rotation(slerp(a, b, 1.0), b, 1e-12));
  EXPECT_THROW(slerp(a, b, 1.5), InvalidArgument);
}

TEST(Quaternion, SlerpBisectsAngle) {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const UnitQuaternion a = random_rotation(rng), b = random_rotation(rng);
    const UnitQuaternion m = slerp(a, b, 0.5);
    EXPECT_NEAR(angle_between(a, m), angle_between(a, b) / 2.0, 1e-6);
    EXPECT_NEAR(angle_between(m, b), angle_between(a, b) / 2.0, 1e-6);
  }
}

TEST(Quaternion, NormalizeIsIdempotent) {
  Rng rng(12);
  const UnitQuaternion q{3.0, -1.0, 0.5, 2.0};
  const UnitQuaternion n = normalize(q);
  EXPECT_NEAR(n.norm(), 1.0, kTight);
  EXPECT_EQ(normalize(n), n);
  EXPECT_THROW(normalize(UnitQuaternion{0, 0, 0, 0}), InvalidArgument);
}

TEST(Quaternion, RotationVectorRoundTrip) {
  Rng rng(13);
  for (int i = 0; i < 200; ++i) {
    const UnitQuaternion q = random_rotation(rng);
    const Eigen::Vector3d v = q.rotation_vector();
    EXPECT_LE(v.norm(), kPi + 1e-12);
    EXPECT_TRUE(same_rotation(UnitQuaternion::from_rotation_vector(v), q, 1e-9));
  }
  EXPECT_LT(UnitQuaternion::identity().rotation_vector().norm(), kTight);
}

TEST(Quaternion, MeanOfIdenticalSamples) {
  Rng rng(14);
  const UnitQuaternion q = random_rotation(rng);
  const std::vector<UnitQuaternion> s(5, q);
  EXPECT_TRUE(same_rotation(mean_quaternion(s), q, 1e-12));
}

TEST(Quaternion, MeanAlignsSigns) {
  Rng rng(15);
  const UnitQuaternion q = random_rotation(rng);
  const std::vector<UnitQuaternion> s = {q, -q};
  EXPECT_TRUE(same_rotation(mean_quaternion(s), q, 1e-12));
}

TEST(Quaternion, MeanOfTightClusterIsNearCenter) {
  Rng rng(16);
  const UnitQuaternion center = random_rotation(rng);
  std::vector<UnitQuaternion> s;
  for (int i = 0; i < 100; ++i) {
    const Eigen::Vector3d v(standard_normal(rng), standard_normal(rng),
                            standard_normal(rng));
    UnitQuaternion p =
        multiply(center, UnitQuaternion::from_rotation_vector(deg_to_rad(3.0) * v));
    s.push_back(i % 2 ? -p : p);
  }
  EXPECT_LT(angle_between(mean_quaternion(s), center), 1.0);
}

TEST(Quaternion, MeanRejectsEmptyAndDegenerateInput) {
  EXPECT_THROW(mean_quaternion(std::vector<UnitQuaternion>{}), InvalidArgument);
  // Sign alignment keeps every term in the first sample's hemisphere, so
  // only zero input can cancel.
  const std::vector<UnitQuaternion> zero(3, UnitQuaternion{0, 0, 0, 0});
  EXPECT_THROW(mean_quaternion(zero), DegenerateMean);
}
