// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "mmguide/random.hpp"
#include "mmguide/session.hpp"

namespace mmguide {

/// Synthetic scan-session generator settings.
///
/// The probe steers from a random start 30-60 degrees away from the target
/// plane q* towards it: a fast coarse phase down to 10 degrees followed by a
/// slow fine phase. Gaze is a fixation/saccade process; with coupling kappa
/// the gaze follows the probe's previous rotation (pursuit) and saccades
/// point along its projected axis. lead_gain feeds the current gaze shift
/// into the next probe rotation, also scaled by kappa.
struct SynthConfig {
  int n_sessions = 551;
  int frames_per_session = 60;
  double frame_rate = 6.0;
  int d_img = 32;
  double coarse_fraction = 0.5; ///< share of steps spent above 10 degrees
  double gaze_noise = 0.006;    ///< fixation jitter per frame
  double probe_noise_deg = 0.15;///< per-axis rotation noise per frame
  double saccade_rate = 0.05;   ///< saccade probability per frame
  double saccade_min = 0.01;    ///< saccade amplitude range
  double saccade_max = 0.03;
  double pursuit_gain = 1.0; ///< gaze units per radian of probe rotation
  double lead_gain = 0.1;    ///< radians per gaze unit
  double centering = 0.1;
  double image_noise = 0.05;
  double coupling = 0.75; ///< kappa in [0, 1]
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const SynthConfig &, const SynthConfig &) = default;
};

inline constexpr double kGazeLimit = 0.48;
inline constexpr int kDatasetFormatVersion = 1;

SessionRecord generate_session(const SynthConfig &cfg, std::uint64_t id,
                               Rng &rng);

/// Sessions 0..n-1, each from its own stream derive_rng(seed, id).
std::vector<SessionRecord> generate_dataset(const SynthConfig &cfg);

/// Text format, one record per line:
///   mmguide-dataset <version> <d_img> <sessions>
///   S <id> <plane> <frames> <frame_rate> <qw> <qx> <qy> <qz>
///   F <t> <gx> <gy> <qw> <qx> <qy> <qz> <img_0> ... <img_{d-1}>
void write_dataset(std::ostream &os, std::span<const SessionRecord> sessions,
                   int d_img);
void write_dataset(const std::filesystem::path &path,
                   std::span<const SessionRecord> sessions, int d_img);
std::vector<SessionRecord> read_dataset(std::istream &is);
std::vector<SessionRecord> read_dataset(const std::filesystem::path &path);

/// Checks unit norm (1e-6), gaze range and strictly increasing time.
void validate_session(const SessionRecord &s);

/// Seeded shuffle then split at session granularity; ratio is the train
/// share (0.8 for 4:1).
std::pair<std::vector<SessionRecord>, std::vector<SessionRecord>>
split_train_test(std::span<const SessionRecord> sessions, double ratio,
                 std::uint64_t seed);

/// Pooled Pearson correlation between each gaze shift s_{t+1} and the 2D
/// projection (x, y) of the preceding probe rotation vector of r_t.
double gaze_probe_coupling(std::span<const SessionRecord> sessions);

} // namespace mmguide
