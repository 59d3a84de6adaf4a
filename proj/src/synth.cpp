// SPDX-License-Identifier: Apache-2.0
#include "mmguide/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "mmguide/errors.hpp"
#include "mmguide/format.hpp"

namespace mmguide {

std::string_view plane_name(Plane p) {
  switch (p) {
  case Plane::TVP:
    return "TVP";
  case Plane::ACP:
    return "ACP";
  case Plane::FSP:
    return "FSP";
  }
  return "?";
}

std::optional<Plane> parse_plane(std::string_view s) {
  for (Plane p : kAllPlanes)
    if (plane_name(p) == s)
      return p;
  return std::nullopt;
}

void SynthConfig::validate() const {
  if (n_sessions < 0)
    throw InvalidArgument("synth: n_sessions must be >= 0");
  if (frames_per_session < 2)
    throw InvalidArgument("synth: frames_per_session must be >= 2");
  if (!(frame_rate > 0.0) || d_img < 1)
    throw InvalidArgument("synth: frame_rate and d_img must be positive");
  if (!(coarse_fraction > 0.0 && coarse_fraction < 1.0))
    throw InvalidArgument("synth: coarse_fraction must lie in (0, 1)");
  if (!(coupling >= 0.0 && coupling <= 1.0))
    throw InvalidArgument("synth: coupling must lie in [0, 1]");
  if (!(saccade_rate >= 0.0 && saccade_rate <= 1.0))
    throw InvalidArgument("synth: saccade_rate must lie in [0, 1]");
  if (!(saccade_min >= 0.0 && saccade_max >= saccade_min))
    throw InvalidArgument("synth: saccade amplitudes must be ordered");
  for (double v : {gaze_noise, probe_noise_deg, pursuit_gain, lead_gain,
                   centering, image_noise})
    if (!(v >= 0.0) || !std::isfinite(v))
      throw InvalidArgument("synth: noise levels and gains must be >= 0");
}

namespace {

constexpr double kCoarseThresholdDeg = 10.0;
constexpr double kFinalAngleDeg = 1.0;
constexpr double kStartMinDeg = 30.0;
constexpr double kStartMaxDeg = 60.0;
constexpr std::uint64_t kImageBasisSeed = 0x696d616765ULL;

Eigen::Vector3d random_unit3(Rng &rng) {
  Eigen::Vector3d v;
  do {
    v = {standard_normal(rng), standard_normal(rng), standard_normal(rng)};
  } while (v.norm() < 1e-9);
  return v.normalized();
}

Eigen::Vector2d random_unit2(Rng &rng) {
  const double a = uniform(rng, 0.0, 2.0 * kPi);
  return {std::cos(a), std::sin(a)};
}

UnitQuaternion random_orientation(Rng &rng) {
  Eigen::Vector4d v;
  do {
    v = {standard_normal(rng), standard_normal(rng), standard_normal(rng),
         standard_normal(rng)};
  } while (v.norm() < 1e-9);
  return normalize(UnitQuaternion::from_vector(v));
}

/// Fixed smooth feature basis shared by every session.
struct ImageBasis {
  Eigen::MatrixXd weight; // d_img x 3 (angle, gx, gy)
  Eigen::VectorXd phase;

  explicit ImageBasis(int d) : weight(d, 3), phase(d) {
    Rng rng = derive_rng(kImageBasisSeed, static_cast<std::uint64_t>(d));
    for (int k = 0; k < d; ++k) {
      weight(k, 0) = 2.0 * standard_normal(rng);
      weight(k, 1) = 4.0 * standard_normal(rng);
      weight(k, 2) = 4.0 * standard_normal(rng);
      phase[k] = uniform(rng, 0.0, 2.0 * kPi);
    }
  }

  Eigen::VectorXd features(double angle_deg, const Eigen::Vector2d &g,
                           double noise, Rng &rng) const {
    const Eigen::Vector3d in(angle_deg / kStartMaxDeg, g.x(), g.y());
    Eigen::VectorXd f = ((weight * in) + phase).array().cos().matrix();
    for (Eigen::Index k = 0; k < f.size(); ++k)
      f[k] += noise * standard_normal(rng);
    return f;
  }
};

struct PlaneStyle {
  double probe_noise = 1.0;
  double saccades = 1.0;
};

PlaneStyle style_of(Plane p) {
  switch (p) {
  case Plane::TVP:
    return {1.0, 1.0};
  case Plane::ACP:
    return {0.8, 0.9};
  case Plane::FSP:
    return {1.5, 1.3};
  }
  return {};
}

} // namespace

SessionRecord generate_session(const SynthConfig &cfg, std::uint64_t id,
                               Rng &rng) {
  cfg.validate();
  const ImageBasis basis(cfg.d_img);
  const double kappa = cfg.coupling;
  SessionRecord s;
  s.header.id = id;
  s.header.plane = kAllPlanes[std::uniform_int_distribution<int>(0, 2)(rng)];
  s.header.target = random_orientation(rng);
  s.header.frame_rate = cfg.frame_rate;
  const PlaneStyle style = style_of(s.header.plane);

  const int frames = cfg.frames_per_session;
  const int steps = frames - 1;
  const int coarse_steps =
      std::max(1, static_cast<int>(std::lround(cfg.coarse_fraction * steps)));
  const int fine_steps = std::max(1, steps - coarse_steps);
  const double start_deg = uniform(rng, kStartMinDeg, kStartMaxDeg);
  const double coarse_rate = (start_deg - kCoarseThresholdDeg) / coarse_steps;
  const double fine_rate =
      (kCoarseThresholdDeg - kFinalAngleDeg) / fine_steps;
  const double noise_rad = deg_to_rad(cfg.probe_noise_deg) * style.probe_noise;
  const double saccade_p = std::min(1.0, cfg.saccade_rate * style.saccades);

  const UnitQuaternion &target = s.header.target;
  UnitQuaternion q = normalize(multiply(
      target, UnitQuaternion::from_axis_angle(random_unit3(rng),
                                              deg_to_rad(start_deg))));
  Eigen::Vector2d g(uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2));
  Eigen::Vector3d omega = Eigen::Vector3d::Zero(); // rotation vector of r_t
  Eigen::Vector2d shift = Eigen::Vector2d::Zero(); // s_t

  s.frames.reserve(frames);
  for (int t = 0; t < frames; ++t) {
    Frame f;
    f.time = t / cfg.frame_rate;
    f.gaze = g;
    f.orientation = q;
    f.image = basis.features(angle_between(q, target), g, cfg.image_noise, rng);
    s.frames.push_back(std::move(f));
    if (t + 1 == frames)
      break;

    // Gaze: pursuit of the last probe motion, saccades, centering, jitter.
    const Eigen::Vector2d axis2 = omega.head<2>();
    Eigen::Vector2d next_shift =
        kappa * cfg.pursuit_gain * axis2 - cfg.centering * g;
    if (uniform(rng, 0.0, 1.0) < saccade_p) {
      const Eigen::Vector2d along =
          axis2.norm() > 1e-12 ? Eigen::Vector2d(axis2.normalized())
                               : random_unit2(rng);
      Eigen::Vector2d dir = kappa * along + (1.0 - kappa) * random_unit2(rng);
      if (dir.norm() < 1e-12)
        dir = random_unit2(rng);
      next_shift += uniform(rng, cfg.saccade_min, cfg.saccade_max) *
                    dir.normalized();
    }
    next_shift += Eigen::Vector2d(cfg.gaze_noise * standard_normal(rng),
                                  cfg.gaze_noise * standard_normal(rng));
    const Eigen::Vector2d g_next =
        (g + next_shift).cwiseMax(-kGazeLimit).cwiseMin(kGazeLimit);

    // Probe: deterministic steering plus local noise and gaze lead.
    const double angle = angle_between(q, target);
    const double rate =
        angle > kCoarseThresholdDeg ? coarse_rate : fine_rate;
    const UnitQuaternion steered =
        angle > 1e-9 ? slerp(q, target, std::min(1.0, rate / angle)) : q;
    Eigen::Vector3d noise(noise_rad * standard_normal(rng),
                          noise_rad * standard_normal(rng),
                          noise_rad * standard_normal(rng));
    noise.head<2>() += kappa * cfg.lead_gain * shift;
    const UnitQuaternion q_next = normalize(
        multiply(steered, UnitQuaternion::from_rotation_vector(noise)));

    omega = relative_rotation(q, q_next).rotation_vector();
    shift = g_next - g;
    q = q_next;
    g = g_next;
  }
  return s;
}

std::vector<SessionRecord> generate_dataset(const SynthConfig &cfg) {
  cfg.validate();
  std::vector<SessionRecord> out;
  out.reserve(cfg.n_sessions);
  for (int i = 0; i < cfg.n_sessions; ++i) {
    Rng rng = derive_rng(cfg.seed, static_cast<std::uint64_t>(i));
    out.push_back(generate_session(cfg, static_cast<std::uint64_t>(i), rng));
  }
  return out;
}

void validate_session(const SessionRecord &s) {
  if (std::abs(s.header.target.norm() - 1.0) > 1e-6)
    throw ValidationError("target quaternion is not unit");
  for (std::size_t i = 0; i < s.frames.size(); ++i) {
    const Frame &f = s.frames[i];
    if (std::abs(f.orientation.norm() - 1.0) > 1e-6)
      throw ValidationError("frame " + std::to_string(i) +
                            ": quaternion is not unit");
    if (!(std::abs(f.gaze.x()) <= 0.5 && std::abs(f.gaze.y()) <= 0.5))
      throw ValidationError("frame " + std::to_string(i) +
                            ": gaze outside [-0.5, 0.5]");
    if (i > 0 && !(f.time > s.frames[i - 1].time))
      throw ValidationError("frame " + std::to_string(i) +
                            ": time not strictly increasing");
  }
}

void write_dataset(std::ostream &os, std::span<const SessionRecord> sessions,
                   int d_img) {
  os << "mmguide-dataset " << kDatasetFormatVersion << ' ' << d_img << ' '
     << sessions.size() << '\n';
  auto quat = [&](const UnitQuaternion &q) {
    os << ' ' << format_double(q.w) << ' ' << format_double(q.x) << ' '
       << format_double(q.y) << ' ' << format_double(q.z);
  };
  for (const auto &s : sessions) {
    os << "S " << s.header.id << ' ' << plane_name(s.header.plane) << ' '
       << s.frames.size() << ' ' << format_double(s.header.frame_rate);
    quat(s.header.target);
    os << '\n';
    for (const auto &f : s.frames) {
      if (f.image.size() != d_img)
        throw InvalidArgument("write_dataset: image feature size differs "
                              "from d_img");
      os << "F " << format_double(f.time) << ' ' << format_double(f.gaze.x())
         << ' ' << format_double(f.gaze.y());
      quat(f.orientation);
      for (Eigen::Index k = 0; k < f.image.size(); ++k)
        os << ' ' << format_double(f.image[k]);
      os << '\n';
    }
  }
}

void write_dataset(const std::filesystem::path &path,
                   std::span<const SessionRecord> sessions, int d_img) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_dataset(os, sessions, d_img);
  if (!os)
    throw std::runtime_error("write failed: " + path.string());
}

namespace {

UnitQuaternion parse_quat(std::span<const std::string_view> f,
                          std::size_t line) {
  UnitQuaternion q{parse_double(f[0], line), parse_double(f[1], line),
                   parse_double(f[2], line), parse_double(f[3], line)};
  if (!q.is_finite() || std::abs(q.norm() - 1.0) > 1e-6)
    throw ValidationError("quaternion is not unit within 1e-6", line);
  return q;
}

} // namespace

std::vector<SessionRecord> read_dataset(std::istream &is) {
  std::string text;
  std::size_t lineno = 0;
  if (!std::getline(is, text))
    throw ParseError("missing dataset header", 1);
  ++lineno;
  const auto head = split_whitespace(text);
  if (head.size() != 4 || head[0] != "mmguide-dataset")
    throw ParseError("malformed dataset header", lineno);
  if (parse_int(head[1], lineno) != kDatasetFormatVersion)
    throw ParseError("unsupported dataset version", lineno);
  const auto d_img = parse_int(head[2], lineno);
  const auto count = parse_uint(head[3], lineno);
  if (d_img < 1)
    throw ParseError("d_img must be positive", lineno);

  std::vector<SessionRecord> out;
  out.reserve(count);
  std::size_t expected_frames = 0;
  while (std::getline(is, text)) {
    ++lineno;
    const auto f = split_whitespace(text);
    if (f.empty())
      continue;
    if (f[0] == "S") {
      if (!out.empty() && out.back().frames.size() != expected_frames)
        throw ParseError("session has fewer frames than declared", lineno);
      if (f.size() != 9)
        throw ParseError("session line needs 9 fields", lineno);
      SessionRecord s;
      s.header.id = parse_uint(f[1], lineno);
      const auto plane = parse_plane(f[2]);
      if (!plane)
        throw ParseError("unknown plane '" + std::string(f[2]) + "'", lineno);
      s.header.plane = *plane;
      expected_frames = parse_uint(f[3], lineno);
      s.header.frame_rate = parse_double(f[4], lineno);
      s.header.target = parse_quat(std::span(f).subspan(5, 4), lineno);
      s.frames.reserve(expected_frames);
      out.push_back(std::move(s));
    } else if (f[0] == "F") {
      if (out.empty())
        throw ParseError("frame line before any session line", lineno);
      if (f.size() != static_cast<std::size_t>(8 + d_img))
        throw ParseError("frame line needs " + std::to_string(8 + d_img) +
                             " fields",
                         lineno);
      auto &s = out.back();
      if (s.frames.size() == expected_frames)
        throw ParseError("session has more frames than declared", lineno);
      Frame fr;
      fr.time = parse_double(f[1], lineno);
      fr.gaze = {parse_double(f[2], lineno), parse_double(f[3], lineno)};
      fr.orientation = parse_quat(std::span(f).subspan(4, 4), lineno);
      if (!(std::abs(fr.gaze.x()) <= 0.5 && std::abs(fr.gaze.y()) <= 0.5))
        throw ValidationError("gaze outside [-0.5, 0.5]", lineno);
      if (!s.frames.empty() && !(fr.time > s.frames.back().time))
        throw ValidationError("time not strictly increasing", lineno);
      fr.image.resize(d_img);
      for (int k = 0; k < d_img; ++k)
        fr.image[k] = parse_double(f[8 + k], lineno);
      s.frames.push_back(std::move(fr));
    } else {
      throw ParseError("unknown record type '" + std::string(f[0]) + "'",
                       lineno);
    }
  }
  if (!out.empty() && out.back().frames.size() != expected_frames)
    throw ParseError("session has fewer frames than declared", lineno);
  if (out.size() != count)
    throw ParseError("header declares " + std::to_string(count) +
                         " sessions, found " + std::to_string(out.size()),
                     lineno);
  return out;
}

std::vector<SessionRecord> read_dataset(const std::filesystem::path &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw std::runtime_error("cannot open " + path.string());
  return read_dataset(is);
}

std::pair<std::vector<SessionRecord>, std::vector<SessionRecord>>
split_train_test(std::span<const SessionRecord> sessions, double ratio,
                 std::uint64_t seed) {
  if (sessions.size() < 2)
    throw InvalidArgument("split_train_test: need at least 2 sessions");
  if (!(ratio > 0.0 && ratio < 1.0))
    throw InvalidArgument("split_train_test: ratio must lie in (0, 1)");
  std::vector<std::size_t> idx(sessions.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = derive_rng(seed, 0x73706c6974ULL);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n = sessions.size();
  const auto n_train = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n))),
      1, n - 1);
  std::pair<std::vector<SessionRecord>, std::vector<SessionRecord>> out;
  for (std::size_t i = 0; i < n; ++i)
    (i < n_train ? out.first : out.second).push_back(sessions[idx[i]]);
  return out;
}

double gaze_probe_coupling(std::span<const SessionRecord> sessions) {
  double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0, n = 0;
  for (const auto &s : sessions) {
    for (std::size_t t = 1; t + 1 < s.frames.size(); ++t) {
      const Eigen::Vector3d w =
          relative_rotation(s.frames[t - 1].orientation, s.frames[t].orientation)
              .rotation_vector();
      const Eigen::Vector2d shift = s.frames[t + 1].gaze - s.frames[t].gaze;
      for (int k = 0; k < 2; ++k) {
        const double x = w[k], y = shift[k];
        sx += x;
        sy += y;
        sxx += x * x;
        syy += y * y;
        sxy += x * y;
        n += 1;
      }
    }
  }
  if (n < 2)
    return 0.0;
  const double cov = sxy / n - (sx / n) * (sy / n);
  const double vx = sxx / n - (sx / n) * (sx / n);
  const double vy = syy / n - (sy / n) * (sy / n);
  if (vx <= 0.0 || vy <= 0.0)
    return 0.0;
  return cov / std::sqrt(vx * vy);
}

} // namespace mmguide
