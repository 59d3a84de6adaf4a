// SPDX-License-Identifier: Apache-2.0
#include "mmguide/quat.hpp"

#include <algorithm>
#include <cmath>

#include "mmguide/errors.hpp"

namespace mmguide {

namespace {

constexpr double kUnitTolerance = 1e-6;
constexpr double kDegenerateNorm = 1e-12;

void require_finite(const UnitQuaternion &q, const char *what) {
  if (!q.is_finite())
    throw InvalidArgument(std::string(what) + ": non-finite quaternion");
}

void require_unit(const UnitQuaternion &q, const char *what) {
  require_finite(q, what);
  if (std::abs(q.norm() - 1.0) > kUnitTolerance)
    throw InvalidArgument(std::string(what) + ": quaternion is not unit");
}

} // namespace

UnitQuaternion UnitQuaternion::from_axis_angle(const Eigen::Vector3d &axis,
                                               double angle_rad) {
  const double n = axis.norm();
  if (!(n > 0.0) || !std::isfinite(angle_rad))
    return identity();
  const Eigen::Vector3d u = axis / n;
  const double s = std::sin(0.5 * angle_rad);
  return {std::cos(0.5 * angle_rad), u.x() * s, u.y() * s, u.z() * s};
}

UnitQuaternion UnitQuaternion::from_rotation_vector(const Eigen::Vector3d &v) {
  return from_axis_angle(v, v.norm());
}

double UnitQuaternion::norm() const {
  return std::sqrt(w * w + x * x + y * y + z * z);
}

bool UnitQuaternion::is_finite() const {
  return std::isfinite(w) && std::isfinite(x) && std::isfinite(y) &&
         std::isfinite(z);
}

Eigen::Vector3d UnitQuaternion::rotation_vector() const {
  // Canonical hemisphere so the angle is in [0, pi].
  const UnitQuaternion q = w < 0.0 ? -*this : *this;
  const Eigen::Vector3d v(q.x, q.y, q.z);
  const double s = v.norm();
  if (s < 1e-300)
    return Eigen::Vector3d::Zero();
  const double angle = 2.0 * std::atan2(s, q.w);
  return v * (angle / s);
}

UnitQuaternion normalize(const UnitQuaternion &q) {
  const double n = q.norm();
  if (!(n > 0.0) || !std::isfinite(n))
    throw InvalidArgument("normalize: zero or non-finite quaternion");
  return {q.w / n, q.x / n, q.y / n, q.z / n};
}

double dot(const UnitQuaternion &a, const UnitQuaternion &b) {
  return a.w * b.w + a.x * b.x + a.y * b.y + a.z * b.z;
}

UnitQuaternion multiply(const UnitQuaternion &a, const UnitQuaternion &b) {
  require_finite(a, "multiply");
  require_finite(b, "multiply");
  return {
      a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
      a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
      a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
      a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
  };
}

UnitQuaternion conjugate(const UnitQuaternion &q) {
  return {q.w, -q.x, -q.y, -q.z};
}

UnitQuaternion relative_rotation(const UnitQuaternion &q_prev,
                                 const UnitQuaternion &q_cur) {
  require_unit(q_prev, "relative_rotation");
  require_unit(q_cur, "relative_rotation");
  return normalize(multiply(conjugate(q_prev), q_cur));
}

double angle_between(const UnitQuaternion &a, const UnitQuaternion &b) {
  // Half-angle form; acos of the dot product loses precision near zero.
  const Eigen::Vector4d bb = dot(a, b) < 0.0 ? Eigen::Vector4d(-b.vec()) : b.vec();
  const double half = std::atan2((a.vec() - bb).norm(), (a.vec() + bb).norm());
  return rad_to_deg(4.0 * half);
}

UnitQuaternion slerp(const UnitQuaternion &a, const UnitQuaternion &b,
                     double u) {
  if (!(u >= 0.0 && u <= 1.0))
    throw InvalidArgument("slerp: u must lie in [0, 1]");
  require_finite(a, "slerp");
  require_finite(b, "slerp");
  UnitQuaternion target = b;
  double d = dot(a, b);
  if (d < 0.0) {
    target = -b;
    d = -d;
  }
  d = std::min(d, 1.0);
  const double omega = std::acos(d);
  const double s = std::sin(omega);
  double ka, kb;
  if (s < 1e-10) {
    ka = 1.0 - u;
    kb = u;
  } else {
    ka = std::sin((1.0 - u) * omega) / s;
    kb = std::sin(u * omega) / s;
  }
  return normalize({ka * a.w + kb * target.w, ka * a.x + kb * target.x,
                    ka * a.y + kb * target.y, ka * a.z + kb * target.z});
}

UnitQuaternion mean_quaternion(std::span<const UnitQuaternion> samples) {
  if (samples.empty())
    throw InvalidArgument("mean_quaternion: empty sample list");
  const UnitQuaternion &ref = samples.front();
  Eigen::Vector4d acc = Eigen::Vector4d::Zero();
  for (const auto &q : samples)
    acc += dot(q, ref) < 0.0 ? Eigen::Vector4d(-q.vec()) : q.vec();
  acc /= static_cast<double>(samples.size());
  if (!(acc.norm() > kDegenerateNorm))
    throw DegenerateMean("mean_quaternion: sign-aligned mean has zero norm");
  return normalize(UnitQuaternion::from_vector(acc));
}

} // namespace mmguide
