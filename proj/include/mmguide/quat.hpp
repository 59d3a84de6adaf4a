// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <span>

namespace mmguide {

/// Probe orientation or relative rotation, scalar-first (w, x, y, z).
///
/// The type does not enforce unit norm on construction; values decoded from
/// sampled 4-vectors are projected with normalize() before use as rotations.
/// q and -q denote the same rotation.
struct UnitQuaternion {
  double w = 1.0;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  static UnitQuaternion identity() { return {}; }
  static UnitQuaternion from_vector(const Eigen::Vector4d &v) {
    return {v[0], v[1], v[2], v[3]};
  }
  /// Rotation of `angle_rad` about `axis` (normalized internally).
  static UnitQuaternion from_axis_angle(const Eigen::Vector3d &axis,
                                        double angle_rad);
  /// Exponential map: rotation vector (axis * angle, radians).
  static UnitQuaternion from_rotation_vector(const Eigen::Vector3d &v);

  Eigen::Vector4d vec() const { return {w, x, y, z}; }
  double norm() const;
  bool is_finite() const;
  /// Logarithmic map; returns axis * angle with angle in [0, pi].
  Eigen::Vector3d rotation_vector() const;

  UnitQuaternion operator-() const { return {-w, -x, -y, -z}; }
  friend bool operator==(const UnitQuaternion &, const UnitQuaternion &) =
      default;
};

UnitQuaternion normalize(const UnitQuaternion &q);
double dot(const UnitQuaternion &a, const UnitQuaternion &b);

/// Hamilton product a*b.
UnitQuaternion multiply(const UnitQuaternion &a, const UnitQuaternion &b);
UnitQuaternion conjugate(const UnitQuaternion &q);

/// conj(q_prev) * q_cur, renormalized. Both inputs must be unit within 1e-6.
UnitQuaternion relative_rotation(const UnitQuaternion &q_prev,
                                 const UnitQuaternion &q_cur);

/// Geodesic angle in degrees, 2*acos(|<a,b>|), in [0, 180]. Exactly zero for
/// a == b or a == -b.
double angle_between(const UnitQuaternion &a, const UnitQuaternion &b);

/// Shorter-arc spherical interpolation, u in [0, 1].
UnitQuaternion slerp(const UnitQuaternion &a, const UnitQuaternion &b,
                     double u);

/// Arithmetic mean after flipping each sample into the hemisphere of the
/// first one, renormalized.
UnitQuaternion mean_quaternion(std::span<const UnitQuaternion> samples);

constexpr double kPi = 3.14159265358979323846;
constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

} // namespace mmguide
