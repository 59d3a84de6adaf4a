// SPDX-License-Identifier: Apache-2.0
#include "mmguide/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "mmguide/errors.hpp"
#include "mmguide/format.hpp"

namespace mmguide {

namespace {

Vector sigmoid_derivative(const Vector &raw) {
  const Vector s = (1.0 / (1.0 + (-raw.array()).exp())).matrix();
  return s.cwiseProduct((1.0 - s.array()).matrix());
}

void head_backward(const OutputHead &head, const Matrix &hidden,
                   const Matrix &grad_raw, OutputHead &grad,
                   Matrix &grad_hidden) {
  grad.weight.noalias() += grad_raw * hidden.transpose();
  grad.bias += grad_raw.rowwise().sum();
  grad_hidden.noalias() = head.weight.transpose() * grad_raw;
}

void check_finite(ModelParams &grads) {
  for (const auto &t : trainable_tensors(grads))
    if (!t.map().allFinite())
      throw NonFiniteGradient(t.name);
}

} // namespace

BackwardResult backward(const ModelParams &p, const ModelConfig &cfg,
                        const PreparedBatch &batch, Mode mode) {
  ForwardTrace tr = forward_trace(p, cfg, batch, mode);
  Matrix g_graw, g_praw;
  BackwardResult out;
  out.loss = head_losses(tr, cfg, batch, &g_graw, &g_praw);
  out.grads = p.zeros_like();
  Gradients &g = out.grads;
  const NodeLayout &layout = tr.layout;
  const bool gaze = layout.has_gaze(), probe = layout.has_probe();
  const bool bipath = gaze && probe && cfg.use_bipath;
  const int B = tr.batch;
  const Eigen::Index n = static_cast<Eigen::Index>(tr.steps) * B;

  Matrix dh_gaze, dh_probe; // dL/d hidden outputs, hidden x N
  if (gaze)
    head_backward(*p.gaze_head, tr.hidden_gaze, g_graw, *g.gaze_head, dh_gaze);
  if (probe)
    head_backward(*p.probe_head, tr.hidden_probe, g_praw, *g.probe_head,
                  dh_probe);

  // Message gradients for every column, filled step by step.
  std::array<Matrix, kGateCount> gm_gaze, gm_probe;
  for (int k = 0; k < kGateCount; ++k) {
    if (gaze)
      gm_gaze[k].resize(cfg.hidden, n);
    if (probe)
      gm_probe[k].resize(cfg.hidden, n);
  }

  Vector link_a, link_b;
  if (bipath) {
    link_a = p.cell.pathway->alpha_link();
    link_b = p.cell.pathway->beta_link();
  }
  Matrix carry_gaze = gaze ? Matrix::Zero(cfg.hidden, B) : Matrix();
  Matrix carry_probe = probe ? Matrix::Zero(cfg.hidden, B) : Matrix();

  for (int t = tr.steps - 1; t >= 0; --t) {
    const RecurrentStep &st = tr.recurrence[t];
    const Eigen::Index c0 = static_cast<Eigen::Index>(t) * B;
    Matrix gh_s, gh_r;
    if (gaze)
      gh_s = dh_gaze.middleCols(c0, B) + carry_gaze;
    if (probe)
      gh_r = dh_probe.middleCols(c0, B) + carry_probe;

    Matrix gz_s, gc_s, gz_r, gc_r, ghp_s, ghp_r;
    if (bipath) {
      BidirectionalGrads bg = bidirectional_update_backward(
          link_a, link_b, st.gaze->update, st.probe->update, st.previous.gaze,
          st.previous.probe, st.gaze->candidate, st.probe->candidate, gh_s,
          gh_r);
      g.cell.pathway->alpha +=
          bg.link_alpha.cwiseProduct(sigmoid_derivative(p.cell.pathway->alpha));
      g.cell.pathway->beta +=
          bg.link_beta.cwiseProduct(sigmoid_derivative(p.cell.pathway->beta));
      gz_s = std::move(bg.z_s);
      gc_s = std::move(bg.cand_s);
      ghp_s = std::move(bg.h_prev_s);
      gz_r = std::move(bg.z_r);
      gc_r = std::move(bg.cand_r);
      ghp_r = std::move(bg.h_prev_r);
    } else {
      // h = (1 - z) h_prev + z h~
      auto standard = [](const GateActivations &a, const Matrix &h_prev,
                         const Matrix &gh, Matrix &gz, Matrix &gc,
                         Matrix &ghp) {
        gz = gh.cwiseProduct(a.candidate - h_prev);
        gc = gh.cwiseProduct(a.update);
        ghp = gh.cwiseProduct((1.0 - a.update.array()).matrix());
      };
      if (gaze)
        standard(*st.gaze, st.previous.gaze, gh_s, gz_s, gc_s, ghp_s);
      if (probe)
        standard(*st.probe, st.previous.probe, gh_r, gz_r, gc_r, ghp_r);
    }

    std::array<Matrix, kGateCount> msg;
    if (gaze) {
      gru_gates_backward(*p.cell.gaze, *st.gaze, st.previous.gaze, gz_s, gc_s,
                         *g.cell.gaze, msg, ghp_s);
      for (int k = 0; k < kGateCount; ++k)
        gm_gaze[k].middleCols(c0, B) = msg[k];
      carry_gaze = std::move(ghp_s);
    }
    if (probe) {
      gru_gates_backward(*p.cell.probe, *st.probe, st.previous.probe, gz_r,
                         gc_r, *g.cell.probe, msg, ghp_r);
      for (int k = 0; k < kGateCount; ++k)
        gm_probe[k].middleCols(c0, B) = msg[k];
      carry_probe = std::move(ghp_r);
    }
  }

  const int nodes = layout.count;
  std::vector<Matrix> grad_nodes(nodes);
  for (int j = 0; j < nodes; ++j)
    grad_nodes[j] = Matrix::Zero(tr.nodes[j].rows(), n);
  std::vector<RowVector> grad_eff(static_cast<std::size_t>(nodes) * nodes,
                                  RowVector::Zero(n));
  const AdjacencyBatch &adj = tr.adjacency.adjacency;
  auto messages_backward = [&](const StreamWeights &w, const StreamMessages &sm,
                               int row,
                               const std::array<Matrix, kGateCount> &gmsg,
                               StreamWeights &gw) {
    for (int k = 0; k < kGateCount; ++k)
      gate_message_backward(adj, row, tr.nodes, sm.projected[k],
                            w.input_kernel[k], gmsg[k], gw.input_kernel[k],
                            grad_nodes, grad_eff);
  };
  if (gaze)
    messages_backward(*p.cell.gaze, *tr.gaze_messages, layout.gaze, gm_gaze,
                      *g.cell.gaze);
  if (probe)
    messages_backward(*p.cell.probe, *tr.probe_messages, layout.probe,
                      gm_probe, *g.cell.probe);

  adjacency_backward(p.cell.adjacency, tr.adjacency, tr.nodes, grad_eff,
                     g.cell.adjacency, grad_nodes);

  embed_backward(p.image, tr.embeds[layout.image], grad_nodes[layout.image],
                 g.image);
  if (gaze)
    embed_backward(*p.gaze, tr.embeds[layout.gaze], grad_nodes[layout.gaze],
                   *g.gaze);
  if (probe)
    embed_backward(*p.probe, tr.embeds[layout.probe], grad_nodes[layout.probe],
                   *g.probe);

  check_finite(g);
  out.embeds = std::move(tr.embeds);
  return out;
}

Gradients backward(const ModelParams &p, const ModelConfig &cfg,
                   const SequenceBatch &batch) {
  return backward(p, cfg, prepare_batch(batch, cfg)).grads;
}

OptimizerState OptimizerState::create(const ModelParams &params,
                                      AdamWConfig hp) {
  OptimizerState s;
  s.hp = hp;
  s.first_moment = params.zeros_like();
  s.second_moment = params.zeros_like();
  return s;
}

void adamw_step(OptimizerState &opt, ModelParams &params,
                const Gradients &grads, double lr_multiplier) {
  auto pt = trainable_tensors(params);
  auto gt = trainable_tensors(const_cast<Gradients &>(grads));
  auto mt = trainable_tensors(opt.first_moment);
  auto vt = trainable_tensors(opt.second_moment);
  if (pt.size() != gt.size() || pt.size() != mt.size() ||
      pt.size() != vt.size())
    throw InvalidArgument("adamw_step: tensor sets differ");
  for (std::size_t i = 0; i < pt.size(); ++i)
    if (pt[i].rows != gt[i].rows || pt[i].cols != gt[i].cols ||
        pt[i].rows != mt[i].rows || pt[i].cols != mt[i].cols)
      throw InvalidArgument("adamw_step: shape mismatch in " + pt[i].name);

  const AdamWConfig &hp = opt.hp;
  ++opt.step;
  const double t = static_cast<double>(opt.step);
  const double lr = hp.lr * lr_multiplier;
  const double bc1 = 1.0 - std::pow(hp.beta1, t);
  const double bc2 = 1.0 - std::pow(hp.beta2, t);
  for (std::size_t i = 0; i < pt.size(); ++i) {
    auto w = pt[i].map().array();
    const auto g = gt[i].map().array();
    auto m = mt[i].map().array();
    auto v = vt[i].map().array();
    m = hp.beta1 * m + (1.0 - hp.beta1) * g;
    v = hp.beta2 * v + (1.0 - hp.beta2) * g.square();
    w -= lr * hp.weight_decay * w;
    w -= lr * (m / bc1) / ((v / bc2).sqrt() + hp.eps);
  }
}

double lr_schedule(int epoch, double decay, int every) {
  if (epoch < 0 || every <= 0)
    throw InvalidArgument("lr_schedule: epoch must be >= 0 and period > 0");
  return std::pow(decay, static_cast<double>(epoch / every));
}

double clip_global_norm(Gradients &grads, double max_norm) {
  auto ts = trainable_tensors(grads);
  double sq = 0.0;
  for (const auto &t : ts)
    sq += t.map().squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (const auto &t : ts)
      t.map() *= s;
  }
  return norm;
}

TrainState TrainState::fresh(const ModelConfig &cfg, const TrainOptions &opts) {
  return from_params(cfg, ModelParams::create(cfg), opts);
}

TrainState TrainState::from_params(const ModelConfig &cfg, ModelParams params,
                                   const TrainOptions &opts) {
  TrainState s;
  s.cfg = cfg;
  AdamWConfig hp;
  hp.lr = opts.lr;
  hp.weight_decay = opts.weight_decay;
  s.optimizer = OptimizerState::create(params, hp);
  s.params = std::move(params);
  return s;
}

namespace {

constexpr std::uint64_t kEpochStream = 0x65706f6368ULL;

struct Window {
  std::size_t session;
  std::size_t start;
  std::size_t length;
};

std::vector<Window> draw_windows(std::span<const SessionRecord> sessions,
                                 const TrainOptions &opts, int epoch) {
  Rng rng = derive_rng(opts.seed, kEpochStream, static_cast<std::uint64_t>(epoch));
  std::vector<Window> ws;
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const auto &s = sessions[i];
    if (opts.plane && s.header.plane != *opts.plane)
      continue;
    const std::size_t f = s.frames.size();
    if (f < 2)
      continue;
    const std::size_t len = std::min<std::size_t>(f, opts.window);
    std::uniform_int_distribution<std::size_t> pick(0, f - len);
    ws.push_back({i, pick(rng), len});
  }
  std::shuffle(ws.begin(), ws.end(), rng);
  // Stable grouping by length keeps batches rectangular.
  std::stable_sort(ws.begin(), ws.end(), [](const Window &a, const Window &b) {
    return a.length > b.length;
  });
  return ws;
}

} // namespace

std::vector<EpochMetrics> train_loop(TrainState &state,
                                     std::span<const SessionRecord> sessions,
                                     const TrainOptions &opts,
                                     const EpochCallback &on_epoch) {
  if (opts.batch_size < 1 || opts.window < 2)
    throw InvalidArgument("train_loop: batch_size >= 1 and window >= 2 required");
  std::vector<EpochMetrics> history;
  for (int epoch = state.epochs_done; epoch < opts.epochs; ++epoch) {
    const double mult = lr_schedule(epoch, opts.lr_decay, opts.lr_decay_every);
    const auto windows = draw_windows(sessions, opts, epoch);
    if (windows.empty())
      throw InvalidArgument("train_loop: no usable training sessions");
    LossBreakdown acc;
    double step_weight = 0.0;
    std::size_t i = 0;
    while (i < windows.size()) {
      SequenceBatch sb;
      const std::size_t len = windows[i].length;
      while (i < windows.size() && windows[i].length == len &&
             sb.size() < opts.batch_size) {
        const Window &w = windows[i++];
        sb.sequences.push_back(
            std::span<const Frame>(sessions[w.session].frames)
                .subspan(w.start, w.length));
      }
      const PreparedBatch pb = prepare_batch(sb, state.cfg);
      BackwardResult r = backward(state.params, state.cfg, pb, Mode::Train);
      if (!std::isfinite(r.loss.total))
        throw NonFiniteLoss("training loss is not finite at epoch " +
                            std::to_string(epoch));
      clip_global_norm(r.grads, opts.clip_norm);
      adamw_step(state.optimizer, state.params, r.grads, mult);
      const NodeLayout layout = state.cfg.layout();
      update_running_stats(state.params.image, r.embeds[layout.image]);
      if (layout.has_gaze())
        update_running_stats(*state.params.gaze, r.embeds[layout.gaze]);
      if (layout.has_probe())
        update_running_stats(*state.params.probe, r.embeds[layout.probe]);

      const LossBreakdown ps = r.loss.per_step();
      const double wgt = static_cast<double>(pb.steps) * pb.batch;
      acc.total += ps.total * wgt;
      acc.nll_gaze += ps.nll_gaze * wgt;
      acc.nll_probe += ps.nll_probe * wgt;
      acc.prior += ps.prior * wgt;
      step_weight += wgt;
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = state.optimizer.hp.lr * mult;
    m.loss = {acc.total / step_weight, acc.nll_gaze / step_weight,
              acc.nll_probe / step_weight, acc.prior / step_weight, 1};
    state.epochs_done = epoch + 1;
    history.push_back(m);
    if (on_epoch)
      on_epoch(m);
  }
  return history;
}

void write_metrics_csv(std::ostream &os, std::span<const EpochMetrics> rows) {
  os << "epoch,loss_total,nll_gaze,nll_probe,prior,lr\n";
  for (const auto &r : rows)
    os << r.epoch << ',' << format_double(r.loss.total) << ','
       << format_double(r.loss.nll_gaze) << ','
       << format_double(r.loss.nll_probe) << ','
       << format_double(r.loss.prior) << ',' << format_double(r.lr) << '\n';
}

std::vector<EpochMetrics> read_metrics_csv(std::istream &is) {
  std::vector<EpochMetrics> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (lineno == 1 || line.empty())
      continue;
    const auto f = split(line, ',');
    if (f.size() != 6)
      throw ParseError("metrics: expected 6 fields", lineno);
    EpochMetrics m;
    m.epoch = static_cast<int>(parse_int(f[0], lineno));
    m.loss.total = parse_double(f[1], lineno);
    m.loss.nll_gaze = parse_double(f[2], lineno);
    m.loss.nll_probe = parse_double(f[3], lineno);
    m.loss.prior = parse_double(f[4], lineno);
    m.loss.steps = 1;
    m.lr = parse_double(f[5], lineno);
    rows.push_back(m);
  }
  return rows;
}

GradCheckReport gradient_check(const ModelParams &p, const ModelConfig &cfg,
                               const PreparedBatch &batch, double step,
                               double tolerance, const GradientFn &gradient) {
  const auto t0 = std::chrono::steady_clock::now();
  Gradients analytic =
      gradient ? gradient(p, cfg, batch) : backward(p, cfg, batch).grads;
  ModelParams probe = p;
  auto pt = trainable_tensors(probe);
  auto at = trainable_tensors(analytic);
  if (pt.size() != at.size())
    throw InvalidArgument("gradient_check: gradient structure mismatch");

  GradCheckReport rep;
  rep.tolerance = tolerance;
  for (std::size_t i = 0; i < pt.size(); ++i) {
    GradCheckRow row;
    row.tensor = pt[i].name;
    row.group = parameter_group(pt[i].name);
    row.elements = pt[i].size();
    for (Eigen::Index e = 0; e < pt[i].size(); ++e) {
      double &x = pt[i].data[e];
      const double saved = x;
      x = saved + step;
      const double up = loss(probe, cfg, batch, Mode::Train).total;
      x = saved - step;
      const double down = loss(probe, cfg, batch, Mode::Train).total;
      x = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = at[i].data[e];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      const double err = std::abs(a - numeric) / denom;
      row.max_rel_error = std::isfinite(err)
                              ? std::max(row.max_rel_error, err)
                              : std::numeric_limits<double>::infinity();
    }
    auto [it, inserted] = rep.groups.emplace(row.group, row.max_rel_error);
    if (!inserted)
      it->second = std::max(it->second, row.max_rel_error);
    rep.tensors.push_back(std::move(row));
  }
  rep.passed = std::all_of(rep.tensors.begin(), rep.tensors.end(),
                           [&](const GradCheckRow &r) {
                             return r.max_rel_error < tolerance;
                           });
  rep.seconds = std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
  return rep;
}

GradCheckSetup make_gradcheck_setup(std::uint64_t seed, TaskMode mode) {
  GradCheckSetup s;
  s.cfg.mode = mode;
  s.cfg.use_bipath = true;
  s.cfg.d_img = 6;
  s.cfg.hidden = 8;
  s.cfg.embed = 8;
  s.cfg.attn = 8;
  s.cfg.eta = 0.5;
  s.cfg.seed = seed;
  s.params = ModelParams::create(s.cfg);

  Rng rng = derive_rng(seed, 0x67636bULL);
  auto jitter = [&](Matrix &m, double scale) {
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] += scale * standard_normal(rng);
  };
  auto jitter_v = [&](Vector &v, double scale) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
      v[i] += scale * standard_normal(rng);
  };
  jitter(s.params.cell.adjacency.mask, 0.3);
  jitter(s.params.cell.adjacency.theta, 0.5);
  jitter(s.params.cell.adjacency.phi, 0.5);
  if (s.params.cell.pathway) {
    jitter_v(s.params.cell.pathway->alpha, 1.0);
    jitter_v(s.params.cell.pathway->beta, 1.0);
  }
  for (auto *b : {&s.params.image, s.params.gaze ? &*s.params.gaze : nullptr,
                  s.params.probe ? &*s.params.probe : nullptr})
    if (b) {
      jitter_v(b->bias, 0.2);
      jitter_v(b->bn_scale, 0.2);
      jitter_v(b->bn_shift, 0.3); // keeps most units active through the ReLU
    }
  for (auto *h : {s.params.gaze_head ? &*s.params.gaze_head : nullptr,
                  s.params.probe_head ? &*s.params.probe_head : nullptr})
    if (h) {
      jitter(h->weight, 0.3);
      jitter_v(h->bias, 0.2);
    }

  constexpr int kFrames = 4; // three prediction steps
  constexpr int kSequences = 2;
  for (int b = 0; b < kSequences; ++b) {
    std::vector<Frame> seq;
    UnitQuaternion q = normalize(UnitQuaternion::from_vector(
        Eigen::Vector4d(1.0, 0.2 * standard_normal(rng),
                        0.2 * standard_normal(rng), 0.2 * standard_normal(rng))));
    Eigen::Vector2d g(0.1 * standard_normal(rng), 0.1 * standard_normal(rng));
    for (int t = 0; t < kFrames; ++t) {
      Frame f;
      f.time = t / 6.0;
      f.gaze = g;
      f.orientation = q;
      f.image = Vector(s.cfg.d_img);
      for (int k = 0; k < s.cfg.d_img; ++k)
        f.image[k] = standard_normal(rng);
      seq.push_back(f);
      g += Eigen::Vector2d(0.03 * standard_normal(rng),
                           0.03 * standard_normal(rng));
      g = g.cwiseMax(-0.45).cwiseMin(0.45);
      q = normalize(multiply(
          q, UnitQuaternion::from_rotation_vector(Eigen::Vector3d(
                 0.05 * standard_normal(rng), 0.05 * standard_normal(rng),
                 0.05 * standard_normal(rng)))));
    }
    s.sequences.push_back(std::move(seq));
  }
  SequenceBatch sb;
  for (const auto &seq : s.sequences)
    sb.sequences.emplace_back(seq);
  s.batch = prepare_batch(sb, s.cfg);
  return s;
}

} // namespace mmguide
