// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "mmguide/quat.hpp"

namespace mmguide {

/// One synchronized sample of the three modalities.
struct Frame {
  double time = 0.0;                               // seconds
  Eigen::Vector2d gaze = Eigen::Vector2d::Zero();  // normalized, [-0.5, 0.5]
  UnitQuaternion orientation;                      // probe orientation
  Eigen::VectorXd image;                           // per-frame image descriptor

  friend bool operator==(const Frame &, const Frame &) = default;
};

enum class Plane { TVP, ACP, FSP };
inline constexpr std::array<Plane, 3> kAllPlanes = {Plane::TVP, Plane::ACP,
                                                    Plane::FSP};

std::string_view plane_name(Plane p);
std::optional<Plane> parse_plane(std::string_view s);

struct SessionHeader {
  std::uint64_t id = 0;
  Plane plane = Plane::TVP;
  UnitQuaternion target; // standard-plane orientation q*
  double frame_rate = 6.0;

  friend bool operator==(const SessionHeader &, const SessionHeader &) =
      default;
};

struct SessionRecord {
  SessionHeader header;
  std::vector<Frame> frames;

  friend bool operator==(const SessionRecord &, const SessionRecord &) =
      default;
};

} // namespace mmguide
