// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmguide/model.hpp"

namespace mmguide {

/// Gradients share the ModelParams layout; running statistics are unused.
using Gradients = ModelParams;

struct BackwardResult {
  Gradients grads;
  LossBreakdown loss;
  std::vector<EmbedCache> embeds; // for the running-statistics update
};

/// Exact reverse-mode gradients of loss() through the heads, the recurrence
/// (backprop through time), graph messages, adjacency softmax and the
/// embeddings. Throws NonFiniteGradient naming the first offending tensor.
BackwardResult backward(const ModelParams &p, const ModelConfig &cfg,
                        const PreparedBatch &batch, Mode mode = Mode::Train);

/// Convenience overload returning only the gradients.
Gradients backward(const ModelParams &p, const ModelConfig &cfg,
                   const SequenceBatch &batch);

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

struct OptimizerState {
  AdamWConfig hp;
  ModelParams first_moment;
  ModelParams second_moment;
  std::int64_t step = 0;

  static OptimizerState create(const ModelParams &params, AdamWConfig hp);
};

/// Decoupled-weight-decay Adam with bias correction. The effective learning
/// rate is hp.lr * lr_multiplier.
void adamw_step(OptimizerState &opt, ModelParams &params,
                const Gradients &grads, double lr_multiplier = 1.0);

/// decay^floor(epoch / every); defaults give x0.01 every 8 epochs.
double lr_schedule(int epoch, double decay = 1e-2, int every = 8);

/// Rescales all gradients so their global L2 norm is at most max_norm;
/// returns the norm before clipping.
double clip_global_norm(Gradients &grads, double max_norm);

struct TrainOptions {
  int epochs = 20;
  int batch_size = 2;
  int window = 32;
  double lr = 1e-3;
  double weight_decay = 1e-2;
  double lr_decay = 1e-2;
  int lr_decay_every = 8;
  double clip_norm = 10.0; ///< <= 0 disables clipping
  std::uint64_t seed = 0;
  std::optional<Plane> plane; ///< restrict to one plane (fine-tuning)
};

struct EpochMetrics {
  int epoch = 0;
  LossBreakdown loss; ///< per-step mean over the epoch
  double lr = 0.0;

  friend bool operator==(const EpochMetrics &a, const EpochMetrics &b) {
    return a.epoch == b.epoch && a.lr == b.lr && a.loss.total == b.loss.total &&
           a.loss.nll_gaze == b.loss.nll_gaze &&
           a.loss.nll_probe == b.loss.nll_probe && a.loss.prior == b.loss.prior;
  }
};

/// Everything needed to continue training bit-exactly.
struct TrainState {
  ModelConfig cfg;
  ModelParams params;
  OptimizerState optimizer;
  int epochs_done = 0;

  static TrainState fresh(const ModelConfig &cfg, const TrainOptions &opts);
  static TrainState from_params(const ModelConfig &cfg, ModelParams params,
                                const TrainOptions &opts);
};

using EpochCallback = std::function<void(const EpochMetrics &)>;

/// Runs epochs [state.epochs_done, opts.epochs). Each epoch draws one random
/// contiguous window of opts.window frames per session (whole session when
/// shorter), shuffles, and steps on batches of equal-length windows.
/// Window draws depend only on (seed, epoch), so a resumed run reproduces an
/// uninterrupted one. Throws NonFiniteLoss on a non-finite batch loss.
std::vector<EpochMetrics> train_loop(TrainState &state,
                                     std::span<const SessionRecord> sessions,
                                     const TrainOptions &opts,
                                     const EpochCallback &on_epoch = {});

void write_metrics_csv(std::ostream &os, std::span<const EpochMetrics> rows);
std::vector<EpochMetrics> read_metrics_csv(std::istream &is);

/// Finite-difference comparison of analytic gradients.
struct GradCheckRow {
  std::string tensor;
  std::string group;
  Eigen::Index elements = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckRow> tensors;
  std::map<std::string, double> groups; // max error per group
  double tolerance = 1e-4;
  double seconds = 0.0;
  bool passed = false;
};

using GradientFn = std::function<Gradients(
    const ModelParams &, const ModelConfig &, const PreparedBatch &)>;

/// Central differences with step `step` on every trainable element. The
/// relative error of an element is |a - n| / max(1, |a|, |n|).
GradCheckReport gradient_check(const ModelParams &p, const ModelConfig &cfg,
                               const PreparedBatch &batch, double step = 1e-5,
                               double tolerance = 1e-4,
                               const GradientFn &gradient = {});

/// Small fixed-seed setup: hidden/embed/attn 8, three prediction steps,
/// two sequences, every parameter group randomized away from zero.
struct GradCheckSetup {
  ModelConfig cfg;
  ModelParams params;
  std::vector<std::vector<Frame>> sequences;
  PreparedBatch batch;
};
GradCheckSetup make_gradcheck_setup(std::uint64_t seed = 7,
                                    TaskMode mode = TaskMode::Multitask);

} // namespace mmguide
