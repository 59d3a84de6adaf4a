// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

#include "mmguide/quat.hpp"
#include "mmguide/random.hpp"
#include "mmguide/synth.hpp"

namespace mmguide::testing {

inline UnitQuaternion random_rotation(Rng &rng) {
  Eigen::Vector4d v;
  do {
    v = {standard_normal(rng), standard_normal(rng), standard_normal(rng),
         standard_normal(rng)};
  } while (v.norm() < 1e-6);
  v.normalize();
  return UnitQuaternion::from_vector(v);
}

/// Rotation matrix written out from the quaternion components.
inline Eigen::Matrix3d rotation_matrix(const UnitQuaternion &q) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  Eigen::Matrix3d m;
  m << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return m;
}

/// Small, fast dataset for training tests.
inline SynthConfig toy_synth(std::uint64_t seed = 0) {
  SynthConfig c;
  c.n_sessions = 12;
  c.frames_per_session = 12;
  c.d_img = 6;
  c.seed = seed;
  return c;
}

inline Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Rng &rng,
                                     double scale = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = scale * standard_normal(rng);
  return m;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string &tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("mmguide_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir &) = delete;
  TempDir &operator=(const TempDir &) = delete;

  const std::filesystem::path &path() const { return path_; }
  std::filesystem::path operator/(const std::string &name) const {
    return path_ / name;
  }

private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path &p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path &p, const std::string &s) {
  std::ofstream os(p, std::ios::binary);
  os << s;
}

} // namespace mmguide::testing
