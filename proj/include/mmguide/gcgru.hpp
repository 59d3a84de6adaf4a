// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "mmguide/graph.hpp"

namespace mmguide {

enum Gate : int { kUpdateGate = 0, kResetGate = 1, kCandidateGate = 2 };
inline constexpr int kGateCount = 3;

enum class TaskMode { Multitask, GazeOnly, ProbeOnly };

/// Graph node indices for a task mode. Multitask uses {image, gaze, probe};
/// single-task modes drop the absent modality and keep the image node.
struct NodeLayout {
  int image = 0;
  int gaze = -1;
  int probe = -1;
  int count = 1;

  static NodeLayout for_mode(TaskMode mode);
  bool has_gaze() const { return gaze >= 0; }
  bool has_probe() const { return probe >= 0; }
};

/// Per-stream GRU weights; index by Gate.
struct StreamWeights {
  std::array<Matrix, kGateCount> input_kernel;  // hidden x embed
  std::array<Matrix, kGateCount> hidden_kernel; // hidden x hidden
  std::array<Vector, kGateCount> bias;          // hidden

  static StreamWeights create(int embed, int hidden, Rng &rng);
  static StreamWeights zeros(int embed, int hidden);
};

/// Unconstrained channel-wise pathway weights; the effective mixing weights
/// are sigmoid(alpha) and sigmoid(beta).
struct PathwayWeights {
  Vector alpha;
  Vector beta;

  static constexpr double kInitialRaw = 2.2;
  static PathwayWeights create(int hidden, double raw = kInitialRaw);
  Vector alpha_link() const;
  Vector beta_link() const;
};

/// Hidden states, one column per sequence. An absent stream is empty.
struct CellState {
  Matrix gaze;
  Matrix probe;

  static CellState zeros(const NodeLayout &layout, int hidden, int batch);
};

/// Recurrent-cell parameters shared by every time step.
struct CellParams {
  AdjacencyParams adjacency;
  std::optional<StreamWeights> gaze;
  std::optional<StreamWeights> probe;
  std::optional<PathwayWeights> pathway;
};

struct GateActivations {
  Matrix update;
  Matrix reset;
  Matrix candidate;
  Matrix reset_hidden; // reset * h_prev
};

/// z = sigmoid(m_z + U_z h + b_z), r = sigmoid(m_r + U_r h + b_r),
/// h~ = tanh(m_c + U_c (r * h) + b_c).
GateActivations gru_gates(const StreamWeights &w, const Matrix &msg_update,
                          const Matrix &msg_reset, const Matrix &msg_candidate,
                          const Matrix &h_prev);

/// Accumulates weight gradients into `grad`, writes message gradients into
/// `grad_messages` and adds the h_prev contribution to `grad_h_prev`.
void gru_gates_backward(const StreamWeights &w, const GateActivations &g,
                        const Matrix &h_prev, const Matrix &grad_update,
                        const Matrix &grad_candidate, StreamWeights &grad,
                        std::array<Matrix, kGateCount> &grad_messages,
                        Matrix &grad_h_prev);

/// (1 - z) * h_prev + z * h~
Matrix standard_gru_update(const Matrix &z, const Matrix &h_prev,
                           const Matrix &candidate);

/// Cross-stream hidden update. `link_alpha`/`link_beta` are the effective
/// channel weights in [0, 1]; both equal to one reduce to standard GRU
/// updates of each stream.
CellState bidirectional_update(const Vector &link_alpha,
                               const Vector &link_beta, const Matrix &z_s,
                               const Matrix &z_r, const Matrix &h_prev_s,
                               const Matrix &h_prev_r, const Matrix &cand_s,
                               const Matrix &cand_r);

CellState bidirectional_update(const PathwayWeights &pw, const Matrix &z_s,
                               const Matrix &z_r, const Matrix &h_prev_s,
                               const Matrix &h_prev_r, const Matrix &cand_s,
                               const Matrix &cand_r);

struct BidirectionalGrads {
  Matrix z_s, z_r, h_prev_s, h_prev_r, cand_s, cand_r;
  Vector link_alpha, link_beta;
};

BidirectionalGrads bidirectional_update_backward(
    const Vector &link_alpha, const Vector &link_beta, const Matrix &z_s,
    const Matrix &z_r, const Matrix &h_prev_s, const Matrix &h_prev_r,
    const Matrix &cand_s, const Matrix &cand_r, const Matrix &grad_h_s,
    const Matrix &grad_h_r);

/// Gate messages of one stream together with the projections W_g v_k they
/// were built from (needed for the backward pass).
struct StreamMessages {
  std::array<Matrix, kGateCount> message;
  std::array<std::vector<Matrix>, kGateCount> projected;
};

StreamMessages stream_messages(const StreamWeights &w,
                               const AdjacencyBatch &adj, int row,
                               std::span<const Matrix> nodes);

/// Everything one recurrent step produced, kept for backpropagation.
struct RecurrentStep {
  CellState previous;
  std::optional<GateActivations> gaze;
  std::optional<GateActivations> probe;
  CellState next;
};

/// GRU gates plus hidden update given precomputed messages for this step.
/// `gaze_messages`/`probe_messages` may be null for absent streams.
RecurrentStep recurrent_step(const CellParams &p, const NodeLayout &layout,
                             bool use_bipath, const CellState &state,
                             const std::array<Matrix, kGateCount> *gaze_messages,
                             const std::array<Matrix, kGateCount> *probe_messages);

struct CellOutput {
  CellState state;
  Matrix out_gaze;  // empty when the stream is absent
  Matrix out_probe;
};

/// One full time step: adjacency, six gate messages (three per stream),
/// GRU gates and the hidden update. `nodes` are the embedded modality
/// vectors ordered by `layout`.
CellOutput cell_step(const CellParams &p, const NodeLayout &layout,
                     bool use_bipath, const CellState &state,
                     std::span<const Matrix> nodes);

} // namespace mmguide
