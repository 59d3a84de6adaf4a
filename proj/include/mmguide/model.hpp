// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmguide/gaussian.hpp"
#include "mmguide/gcgru.hpp"
#include "mmguide/graph.hpp"
#include "mmguide/session.hpp"

namespace mmguide {

struct ModelConfig {
  TaskMode mode = TaskMode::Multitask;
  bool use_bipath = true;
  int d_img = 32;
  int image_projection = 0; ///< 0: identity image provider, else output dim
  int hidden = 128;
  int embed = 128;
  int attn = 256;
  double lambda_s = 1.0;
  double lambda_r = 1.0;
  double eta = 50.0;
  double bn_momentum = 0.1;
  std::uint64_t seed = 0;

  NodeLayout layout() const { return NodeLayout::for_mode(mode); }
  bool has_gaze() const { return mode != TaskMode::ProbeOnly; }
  bool has_probe() const { return mode != TaskMode::GazeOnly; }
  ImageFeatureProvider image_provider() const;
  void validate() const;

  friend bool operator==(const ModelConfig &, const ModelConfig &) = default;
};

std::string_view task_mode_name(TaskMode m);
std::optional<TaskMode> parse_task_mode(std::string_view s);

struct OutputHead {
  Matrix weight; // outputs x hidden
  Vector bias;
};

/// All model tensors. Absent modalities/streams are std::nullopt.
struct ModelParams {
  EmbeddingBlock image;
  std::optional<EmbeddingBlock> gaze;
  std::optional<EmbeddingBlock> probe;
  CellParams cell;
  std::optional<OutputHead> gaze_head;
  std::optional<OutputHead> probe_head;

  /// Random initialization seeded by cfg.seed.
  static ModelParams create(const ModelConfig &cfg);
  /// Every tensor zero, batch-norm scale included; running variance one.
  static ModelParams zeros(const ModelConfig &cfg);
  /// Same structure and shapes, all values zero (used for gradients).
  ModelParams zeros_like() const;
};

/// Non-owning view of one tensor in a ModelParams.
struct NamedTensor {
  std::string name;
  double *data = nullptr;
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;

  Eigen::Index size() const { return rows * cols; }
  Eigen::Map<Matrix> map() const { return {data, rows, cols}; }
};

/// Trainable tensors in a fixed order with stable dotted names.
std::vector<NamedTensor> trainable_tensors(ModelParams &p);
/// Batch-norm running statistics (serialized but not trained).
std::vector<NamedTensor> buffer_tensors(ModelParams &p);

std::size_t parameter_count(const ModelConfig &cfg);

/// Parameter-group label used by reports ("embedding", "theta_phi", ...).
std::string parameter_group(std::string_view tensor_name);

/// Sub-model of a multitask parameter set for a single-task mode: shared
/// tensors copied, mask reduced to the surviving nodes, absent-stream
/// tensors and the pathway dropped.
ModelParams restrict_params(const ModelParams &multitask, TaskMode mode);

/// Equal-length windows of frames, one per sequence.
struct SequenceBatch {
  std::vector<std::span<const Frame>> sequences;

  int size() const { return static_cast<int>(sequences.size()); }
  int frames() const;
};

/// Relative-feature tensors. Column t*B + b holds step t of sequence b:
/// inputs are (image_t, s_t, r_t) and targets (s_{t+1}, r_{t+1}), where
/// s_t = g_t - g_{t-1} and r_t = conj(q_{t-1}) q_t. Step 0 has no history and
/// uses s_0 = 0, r_0 = identity.
struct PreparedBatch {
  int batch = 0;
  int steps = 0;
  Matrix image;
  Matrix gaze_shift;     // 2 x N
  Matrix probe_rotation; // 4 x N
  Matrix gaze_target;
  Matrix probe_target;

  Eigen::Index column(int step, int seq) const { return step * batch + seq; }
};

PreparedBatch prepare_batch(const SequenceBatch &batch, const ModelConfig &cfg);

/// Intermediate values of a forward pass, kept for backpropagation.
struct ForwardTrace {
  NodeLayout layout;
  int batch = 0;
  int steps = 0;
  std::vector<EmbedCache> embeds; // per node
  std::vector<Matrix> nodes;      // embedded node features, embed x N
  AdjacencyCache adjacency;
  std::optional<StreamMessages> gaze_messages;
  std::optional<StreamMessages> probe_messages;
  std::vector<RecurrentStep> recurrence;
  Matrix hidden_gaze;  // hidden x N
  Matrix hidden_probe;
  Matrix gaze_raw;  // 5 x N
  Matrix probe_raw; // 14 x N
};

ForwardTrace forward_trace(const ModelParams &p, const ModelConfig &cfg,
                           const PreparedBatch &batch, Mode mode);

struct ForwardOutput {
  int batch = 0;
  int steps = 0;
  std::vector<BivariateGaussian> gaze;      // empty for probe-only
  std::vector<MultivariateGaussian4> probe; // empty for gaze-only

  std::size_t index(int step, int seq) const {
    return static_cast<std::size_t>(step) * batch + seq;
  }
};

/// Decoded next-step distributions for every frame after the first
/// (frames - 1 per sequence). Requires at least two frames.
ForwardOutput forward(const ModelParams &p, const ModelConfig &cfg,
                      const SequenceBatch &batch, Mode mode = Mode::Infer);

/// Training objective: per sequence, sum over steps of
/// lambda_s * NLL(gaze) + lambda_r * NLL(probe) + eta * (1 - |mu_r|^2)^2,
/// averaged over the batch. Terms of absent tasks are zero.
struct LossBreakdown {
  double total = 0.0;
  double nll_gaze = 0.0;
  double nll_probe = 0.0;
  double prior = 0.0;
  int steps = 0; // per sequence

  LossBreakdown per_step() const;
};

LossBreakdown loss(const ModelParams &p, const ModelConfig &cfg,
                   const SequenceBatch &batch, Mode mode = Mode::Train);

/// Loss terms of a finished trace. When the gradient pointers are non-null
/// they receive d total / d raw head outputs (5 x N and 14 x N).
LossBreakdown head_losses(const ForwardTrace &trace, const ModelConfig &cfg,
                          const PreparedBatch &batch, Matrix *grad_gaze_raw,
                          Matrix *grad_probe_raw);
LossBreakdown loss(const ModelParams &p, const ModelConfig &cfg,
                   const PreparedBatch &batch, Mode mode = Mode::Train);

enum class Feedback {
  TeacherForced, ///< ground-truth history, one-step-ahead samples
  Autoregressive ///< sampled shifts/rotations fed back as next inputs
};

struct TrajectoryStep {
  Eigen::Vector2d shift = Eigen::Vector2d::Zero();
  Eigen::Vector2d gaze = Eigen::Vector2d::Zero(); // g_{t-1} + s_hat
  UnitQuaternion rotation;                        // unit-projected sample
  UnitQuaternion orientation;                     // q_{t-1} * r_hat
};

struct SampledTrajectories {
  std::vector<int> target_frame;                  // per step
  std::vector<std::vector<TrajectoryStep>> paths; // [sample][step]
  std::vector<TrajectoryStep> mean;               // averaged prediction
};

/// Draws n trajectories over one sequence. The averaged prediction uses the
/// sample mean for gaze shifts and mean_quaternion for rotations.
SampledTrajectories sample_trajectories(const ModelParams &p,
                                        const ModelConfig &cfg,
                                        std::span<const Frame> sequence, int n,
                                        Rng &rng,
                                        Feedback feedback = Feedback::TeacherForced);

} // namespace mmguide
