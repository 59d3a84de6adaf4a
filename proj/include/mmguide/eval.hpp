// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmguide/gaussian.hpp"
#include "mmguide/model.hpp"
#include "mmguide/session.hpp"

namespace mmguide {

inline constexpr double kStageThresholdDeg = 10.0;
inline constexpr int kImageWidth = 288;
inline constexpr int kImageHeight = 224;

/// Frames at exactly 10 degrees count as fine.
enum class Stage { Coarse, Fine };

std::string_view stage_name(Stage s);
Stage stage_of(const UnitQuaternion &orientation, const UnitQuaternion &target);

/// angle(q_prev * r_hat, q_true) <= angle(q_prev, q_true).
bool probe_correct(const UnitQuaternion &q_prev, const UnitQuaternion &q_true,
                   const UnitQuaternion &r_hat);
/// Same with strict inequality; the identity rotation never qualifies.
bool probe_correct_strict(const UnitQuaternion &q_prev,
                          const UnitQuaternion &q_true,
                          const UnitQuaternion &r_hat);

/// Pixel offset of a normalized displacement: (dx * 288, dy * 224).
Eigen::Vector2d to_pixel_offset(const Eigen::Vector2d &d);
/// Pixel position of a normalized gaze point, origin at the top-left corner.
Eigen::Vector2d to_pixel_position(const Eigen::Vector2d &g);

/// || pixels(g_prev + s_hat - g_true) ||
double gaze_pixel_error(const Eigen::Vector2d &g_prev,
                        const Eigen::Vector2d &s_hat,
                        const Eigen::Vector2d &g_true);

struct BaselinePrediction {
  int target_frame = 0;
  UnitQuaternion rotation;                             // r_hat_t = r_{t-1}
  Eigen::Vector2d shift = Eigen::Vector2d::Zero();     // s_hat_t = 0
};

/// One prediction per frame after the first. The rotation baseline repeats
/// the previous relative rotation (identity when there is none).
std::vector<BaselinePrediction> run_baselines(std::span<const Frame> frames);

/// Next-step distributions for frames 1..F-1 of a session.
struct StepDistributions {
  std::vector<BivariateGaussian> gaze;      // empty when gaze is not modeled
  std::vector<MultivariateGaussian4> probe; // empty when probe is not modeled
};

using Predictor = std::function<std::vector<StepDistributions>(
    std::span<const SessionRecord>)>;

/// Teacher-forced model predictions, batching sessions of equal length.
Predictor model_predictor(const ModelParams &p, const ModelConfig &cfg);

struct EvalOptions {
  int samples = 100;
  std::uint64_t seed = 0;
  bool best_of = false; ///< adds best-sample columns to the CSV
};

/// Per-frame scores of the averaged prediction and the baselines.
struct FrameScore {
  std::uint64_t session = 0;
  Plane plane = Plane::TVP;
  int target_frame = 0;
  Stage stage = Stage::Coarse;
  std::optional<bool> probe_ok;
  std::optional<bool> probe_ok_strict;
  std::optional<double> gaze_error;      // averaged prediction, pixels
  std::optional<double> gaze_best_error; // closest of the samples
  bool baseline_probe_ok = false;
  bool baseline_probe_ok_strict = false;
  double baseline_gaze_error = 0.0;
};

/// Aggregate for one (plane, stage, method) bucket. Absent values are
/// metrics the method does not produce or buckets without frames.
struct EvalRow {
  std::string plane;  // TVP, ACP, FSP or overall
  std::string stage;  // coarse, fine or all
  std::string method; // model or baseline
  std::int64_t frames = 0;
  std::optional<double> probe_acc;
  std::optional<double> probe_acc_strict;
  std::optional<double> probe_acc_std; // across sample indices
  std::optional<double> gaze_err_px;
  std::optional<double> gaze_err_std;  // across sample indices
  std::optional<double> gaze_best_px;
  std::optional<double> best_le_mean;  // share of frames with best <= mean

  friend bool operator==(const EvalRow &, const EvalRow &) = default;
};

struct EvalReport {
  int samples = 0;
  bool best_of = false;
  std::vector<EvalRow> rows;
  std::vector<FrameScore> frames;

  const EvalRow *find(std::string_view plane, std::string_view stage,
                      std::string_view method) const;
};

EvalReport evaluate(const Predictor &predict,
                    std::span<const SessionRecord> sessions,
                    const EvalOptions &opts = {});
EvalReport evaluate(const ModelParams &p, const ModelConfig &cfg,
                    std::span<const SessionRecord> sessions,
                    const EvalOptions &opts = {});

/// Rows only; per-frame scores are not serialized.
void write_report_csv(std::ostream &os, const EvalReport &report);
EvalReport read_report_csv(std::istream &is);

} // namespace mmguide
