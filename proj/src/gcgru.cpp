// SPDX-License-Identifier: Apache-2.0
#include "mmguide/gcgru.hpp"

#include <cmath>

#include "mmguide/errors.hpp"

namespace mmguide {

namespace {

Matrix sigmoid(const Matrix &x) {
  return (1.0 + (-x.array()).exp()).inverse().matrix();
}

Vector sigmoid(const Vector &x) {
  return (1.0 + (-x.array()).exp()).inverse().matrix();
}

Matrix uniform_matrix(int rows, int cols, double bound, Rng &rng) {
  Matrix m(rows, cols);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      m(r, c) = dist(rng);
  return m;
}

Matrix affine(const Matrix &msg, const Matrix &kernel, const Matrix &h,
              const Vector &bias) {
  Matrix a = msg;
  a.noalias() += kernel * h;
  a.colwise() += bias;
  return a;
}

} // namespace

NodeLayout NodeLayout::for_mode(TaskMode mode) {
  switch (mode) {
  case TaskMode::Multitask:
    return {0, 1, 2, 3};
  case TaskMode::GazeOnly:
    return {0, 1, -1, 2};
  case TaskMode::ProbeOnly:
    return {0, -1, 1, 2};
  }
  throw InvalidArgument("unknown task mode");
}

StreamWeights StreamWeights::create(int embed, int hidden, Rng &rng) {
  StreamWeights w;
  const double bound = 1.0 / std::sqrt(double(hidden));
  for (int g = 0; g < kGateCount; ++g) {
    w.input_kernel[g] = uniform_matrix(hidden, embed, bound, rng);
    w.hidden_kernel[g] = uniform_matrix(hidden, hidden, bound, rng);
    w.bias[g] = Vector::Zero(hidden);
  }
  return w;
}

StreamWeights StreamWeights::zeros(int embed, int hidden) {
  StreamWeights w;
  for (int g = 0; g < kGateCount; ++g) {
    w.input_kernel[g] = Matrix::Zero(hidden, embed);
    w.hidden_kernel[g] = Matrix::Zero(hidden, hidden);
    w.bias[g] = Vector::Zero(hidden);
  }
  return w;
}

PathwayWeights PathwayWeights::create(int hidden, double raw) {
  return {Vector::Constant(hidden, raw), Vector::Constant(hidden, raw)};
}

Vector PathwayWeights::alpha_link() const { return sigmoid(alpha); }
Vector PathwayWeights::beta_link() const { return sigmoid(beta); }

CellState CellState::zeros(const NodeLayout &layout, int hidden, int batch) {
  CellState s;
  if (layout.has_gaze())
    s.gaze = Matrix::Zero(hidden, batch);
  if (layout.has_probe())
    s.probe = Matrix::Zero(hidden, batch);
  return s;
}

GateActivations gru_gates(const StreamWeights &w, const Matrix &msg_update,
                          const Matrix &msg_reset, const Matrix &msg_candidate,
                          const Matrix &h_prev) {
  GateActivations g;
  g.update = sigmoid(affine(msg_update, w.hidden_kernel[kUpdateGate], h_prev,
                            w.bias[kUpdateGate]));
  g.reset = sigmoid(affine(msg_reset, w.hidden_kernel[kResetGate], h_prev,
                           w.bias[kResetGate]));
  g.reset_hidden = g.reset.cwiseProduct(h_prev);
  g.candidate = affine(msg_candidate, w.hidden_kernel[kCandidateGate],
                       g.reset_hidden, w.bias[kCandidateGate])
                    .array()
                    .tanh()
                    .matrix();
  return g;
}

void gru_gates_backward(const StreamWeights &w, const GateActivations &g,
                        const Matrix &h_prev, const Matrix &grad_update,
                        const Matrix &grad_candidate, StreamWeights &grad,
                        std::array<Matrix, kGateCount> &grad_messages,
                        Matrix &grad_h_prev) {
  const Matrix a_c = grad_candidate.cwiseProduct(
      (1.0 - g.candidate.array().square()).matrix());
  grad.hidden_kernel[kCandidateGate].noalias() += a_c * g.reset_hidden.transpose();
  grad.bias[kCandidateGate] += a_c.rowwise().sum();
  const Matrix g_rh = w.hidden_kernel[kCandidateGate].transpose() * a_c;
  grad_h_prev += g_rh.cwiseProduct(g.reset);
  const Matrix a_r = g_rh.cwiseProduct(h_prev).cwiseProduct(
      g.reset.cwiseProduct((1.0 - g.reset.array()).matrix()));
  const Matrix a_z = grad_update.cwiseProduct(
      g.update.cwiseProduct((1.0 - g.update.array()).matrix()));

  grad.hidden_kernel[kUpdateGate].noalias() += a_z * h_prev.transpose();
  grad.bias[kUpdateGate] += a_z.rowwise().sum();
  grad_h_prev.noalias() += w.hidden_kernel[kUpdateGate].transpose() * a_z;

  grad.hidden_kernel[kResetGate].noalias() += a_r * h_prev.transpose();
  grad.bias[kResetGate] += a_r.rowwise().sum();
  grad_h_prev.noalias() += w.hidden_kernel[kResetGate].transpose() * a_r;

  grad_messages[kUpdateGate] = a_z;
  grad_messages[kResetGate] = a_r;
  grad_messages[kCandidateGate] = a_c;
}

Matrix standard_gru_update(const Matrix &z, const Matrix &h_prev,
                           const Matrix &candidate) {
  return ((1.0 - z.array()) * h_prev.array() + z.array() * candidate.array())
      .matrix();
}

CellState bidirectional_update(const Vector &link_alpha,
                               const Vector &link_beta, const Matrix &z_s,
                               const Matrix &z_r, const Matrix &h_prev_s,
                               const Matrix &h_prev_r, const Matrix &cand_s,
                               const Matrix &cand_r) {
  const auto a = link_alpha.array();
  const auto b = link_beta.array();
  CellState s;
  s.gaze = Matrix(h_prev_s.rows(), h_prev_s.cols());
  s.probe = Matrix(h_prev_r.rows(), h_prev_r.cols());
  for (Eigen::Index c = 0; c < h_prev_s.cols(); ++c) {
    const auto zs = z_s.col(c).array();
    const auto zr = z_r.col(c).array();
    s.gaze.col(c) = a * (1.0 - zs) * h_prev_s.col(c).array() +
                    a * zs * cand_s.col(c).array() +
                    (1.0 - a) * zr * h_prev_s.col(c).array() +
                    (1.0 - a) * (1.0 - zr) * cand_s.col(c).array();
    s.probe.col(c) = b * (1.0 - zr) * h_prev_r.col(c).array() +
                     b * zr * cand_r.col(c).array() +
                     (1.0 - b) * zs * h_prev_r.col(c).array() +
                     (1.0 - b) * (1.0 - zs) * cand_r.col(c).array();
  }
  return s;
}

CellState bidirectional_update(const PathwayWeights &pw, const Matrix &z_s,
                               const Matrix &z_r, const Matrix &h_prev_s,
                               const Matrix &h_prev_r, const Matrix &cand_s,
                               const Matrix &cand_r) {
  return bidirectional_update(pw.alpha_link(), pw.beta_link(), z_s, z_r,
                              h_prev_s, h_prev_r, cand_s, cand_r);
}

BidirectionalGrads bidirectional_update_backward(
    const Vector &link_alpha, const Vector &link_beta, const Matrix &z_s,
    const Matrix &z_r, const Matrix &h_prev_s, const Matrix &h_prev_r,
    const Matrix &cand_s, const Matrix &cand_r, const Matrix &grad_h_s,
    const Matrix &grad_h_r) {
  const Eigen::Index rows = z_s.rows(), cols = z_s.cols();
  BidirectionalGrads g;
  g.z_s = g.z_r = g.h_prev_s = g.h_prev_r = g.cand_s = g.cand_r =
      Matrix(rows, cols);
  g.link_alpha = Vector::Zero(rows);
  g.link_beta = Vector::Zero(rows);
  const auto a = link_alpha.array();
  const auto b = link_beta.array();
  for (Eigen::Index c = 0; c < cols; ++c) {
    const auto zs = z_s.col(c).array();
    const auto zr = z_r.col(c).array();
    const auto hs = h_prev_s.col(c).array();
    const auto hr = h_prev_r.col(c).array();
    const auto cs = cand_s.col(c).array();
    const auto cr = cand_r.col(c).array();
    const auto gs = grad_h_s.col(c).array();
    const auto gr = grad_h_r.col(c).array();

    g.h_prev_s.col(c) = gs * (a * (1.0 - zs) + (1.0 - a) * zr);
    g.cand_s.col(c) = gs * (a * zs + (1.0 - a) * (1.0 - zr));
    g.h_prev_r.col(c) = gr * (b * (1.0 - zr) + (1.0 - b) * zs);
    g.cand_r.col(c) = gr * (b * zr + (1.0 - b) * (1.0 - zs));
    g.z_s.col(c) = gs * a * (cs - hs) + gr * (1.0 - b) * (hr - cr);
    g.z_r.col(c) = gr * b * (cr - hr) + gs * (1.0 - a) * (hs - cs);
    g.link_alpha.array() +=
        gs * ((1.0 - zs) * hs + zs * cs - zr * hs - (1.0 - zr) * cs);
    g.link_beta.array() +=
        gr * ((1.0 - zr) * hr + zr * cr - zs * hr - (1.0 - zs) * cr);
  }
  return g;
}

StreamMessages stream_messages(const StreamWeights &w,
                               const AdjacencyBatch &adj, int row,
                               std::span<const Matrix> nodes) {
  StreamMessages m;
  for (int g = 0; g < kGateCount; ++g) {
    m.projected[g].reserve(nodes.size());
    for (const Matrix &v : nodes)
      m.projected[g].push_back(w.input_kernel[g] * v);
    m.message[g] = gate_message(adj, row, m.projected[g]);
  }
  return m;
}

RecurrentStep recurrent_step(const CellParams &p, const NodeLayout &layout,
                             bool use_bipath, const CellState &state,
                             const std::array<Matrix, kGateCount> *gaze_messages,
                             const std::array<Matrix, kGateCount> *probe_messages) {
  RecurrentStep step;
  step.previous = state;
  if (layout.has_gaze()) {
    const auto &m = *gaze_messages;
    step.gaze = gru_gates(*p.gaze, m[kUpdateGate], m[kResetGate],
                          m[kCandidateGate], state.gaze);
  }
  if (layout.has_probe()) {
    const auto &m = *probe_messages;
    step.probe = gru_gates(*p.probe, m[kUpdateGate], m[kResetGate],
                           m[kCandidateGate], state.probe);
  }
  if (layout.has_gaze() && layout.has_probe() && use_bipath) {
    step.next = bidirectional_update(*p.pathway, step.gaze->update,
                                     step.probe->update, state.gaze,
                                     state.probe, step.gaze->candidate,
                                     step.probe->candidate);
  } else {
    if (layout.has_gaze())
      step.next.gaze = standard_gru_update(step.gaze->update, state.gaze,
                                           step.gaze->candidate);
    if (layout.has_probe())
      step.next.probe = standard_gru_update(step.probe->update, state.probe,
                                            step.probe->candidate);
  }
  return step;
}

CellOutput cell_step(const CellParams &p, const NodeLayout &layout,
                     bool use_bipath, const CellState &state,
                     std::span<const Matrix> nodes) {
  if (static_cast<int>(nodes.size()) != layout.count)
    throw InvalidArgument("cell_step: node count does not match layout");
  const AdjacencyCache adj = adjacency_forward(p.adjacency, nodes);
  std::optional<StreamMessages> gm, pm;
  if (layout.has_gaze())
    gm = stream_messages(*p.gaze, adj.adjacency, layout.gaze, nodes);
  if (layout.has_probe())
    pm = stream_messages(*p.probe, adj.adjacency, layout.probe, nodes);
  RecurrentStep step =
      recurrent_step(p, layout, use_bipath, state, gm ? &gm->message : nullptr,
                     pm ? &pm->message : nullptr);
  CellOutput out;
  out.state = std::move(step.next);
  out.out_gaze = out.state.gaze;
  out.out_probe = out.state.probe;
  return out;
}

} // namespace mmguide
