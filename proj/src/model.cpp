// SPDX-License-Identifier: Apache-2.0
#include "mmguide/model.hpp"

#include <cmath>

#include "mmguide/errors.hpp"

namespace mmguide {

namespace {

constexpr double kHeadInitScale = 0.1;

Matrix uniform_matrix(int rows, int cols, double bound, Rng &rng) {
  Matrix m(rows, cols);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      m(r, c) = dist(rng);
  return m;
}

OutputHead make_head(int outputs, int hidden, Rng &rng) {
  return {uniform_matrix(outputs, hidden,
                         kHeadInitScale / std::sqrt(double(hidden)), rng),
          Vector::Zero(outputs)};
}

template <class T> void zero_fill(T &m) { m.setZero(); }

void zero_block(EmbeddingBlock &b) {
  zero_fill(b.weight);
  zero_fill(b.bias);
  zero_fill(b.bn_scale);
  zero_fill(b.bn_shift);
  zero_fill(b.running_mean);
  zero_fill(b.running_var);
}

void zero_stream(StreamWeights &w) {
  for (int g = 0; g < kGateCount; ++g) {
    zero_fill(w.input_kernel[g]);
    zero_fill(w.hidden_kernel[g]);
    zero_fill(w.bias[g]);
  }
}

void add_tensor(std::vector<NamedTensor> &out, std::string name, Matrix &m) {
  out.push_back({std::move(name), m.data(), m.rows(), m.cols()});
}

void add_tensor(std::vector<NamedTensor> &out, std::string name, Vector &v) {
  out.push_back({std::move(name), v.data(), v.size(), 1});
}

constexpr const char *kGateNames[kGateCount] = {"update", "reset", "candidate"};

void add_block(std::vector<NamedTensor> &out, const std::string &prefix,
               EmbeddingBlock &b) {
  add_tensor(out, prefix + ".weight", b.weight);
  add_tensor(out, prefix + ".bias", b.bias);
  add_tensor(out, prefix + ".bn_scale", b.bn_scale);
  add_tensor(out, prefix + ".bn_shift", b.bn_shift);
}

void add_stream(std::vector<NamedTensor> &out, const std::string &prefix,
                StreamWeights &w) {
  for (int g = 0; g < kGateCount; ++g) {
    add_tensor(out, prefix + ".W_" + kGateNames[g], w.input_kernel[g]);
    add_tensor(out, prefix + ".U_" + kGateNames[g], w.hidden_kernel[g]);
    add_tensor(out, prefix + ".b_" + kGateNames[g], w.bias[g]);
  }
}

Eigen::Vector4d canonical_rotation(const UnitQuaternion &r) {
  const Eigen::Vector4d v = r.vec();
  return r.w < 0.0 ? Eigen::Vector4d(-v) : v;
}

} // namespace

std::string_view task_mode_name(TaskMode m) {
  switch (m) {
  case TaskMode::Multitask:
    return "multitask";
  case TaskMode::GazeOnly:
    return "gaze-only";
  case TaskMode::ProbeOnly:
    return "probe-only";
  }
  return "?";
}

std::optional<TaskMode> parse_task_mode(std::string_view s) {
  if (s == "multitask")
    return TaskMode::Multitask;
  if (s == "gaze-only" || s == "gaze_only")
    return TaskMode::GazeOnly;
  if (s == "probe-only" || s == "probe_only")
    return TaskMode::ProbeOnly;
  return std::nullopt;
}

ImageFeatureProvider ModelConfig::image_provider() const {
  if (image_projection > 0)
    return ImageFeatureProvider::projection(d_img, image_projection, seed);
  return ImageFeatureProvider::identity(d_img);
}

void ModelConfig::validate() const {
  if (d_img <= 0 || hidden <= 0 || embed <= 0 || attn <= 0 ||
      image_projection < 0)
    throw InvalidArgument("model config: dimensions must be positive");
  if (!(bn_momentum > 0.0 && bn_momentum <= 1.0))
    throw InvalidArgument("model config: bn_momentum must lie in (0, 1]");
  if (!(lambda_s >= 0.0) || !(lambda_r >= 0.0) || !(eta >= 0.0))
    throw InvalidArgument("model config: loss weights must be non-negative");
}

ModelParams ModelParams::create(const ModelConfig &cfg) {
  cfg.validate();
  const NodeLayout layout = cfg.layout();
  Rng rng = derive_rng(cfg.seed, 0x6d6f64656cULL);
  ModelParams p;
  p.image = EmbeddingBlock::create(cfg.image_provider().output_dim(),
                                   cfg.embed, rng);
  p.image.momentum = cfg.bn_momentum;
  if (layout.has_gaze()) {
    p.gaze = EmbeddingBlock::create(2, cfg.embed, rng);
    p.gaze->momentum = cfg.bn_momentum;
  }
  if (layout.has_probe()) {
    p.probe = EmbeddingBlock::create(4, cfg.embed, rng);
    p.probe->momentum = cfg.bn_momentum;
  }
  p.cell.adjacency =
      AdjacencyParams::create(cfg.embed, cfg.attn, layout.count, rng);
  if (layout.has_gaze())
    p.cell.gaze = StreamWeights::create(cfg.embed, cfg.hidden, rng);
  if (layout.has_probe())
    p.cell.probe = StreamWeights::create(cfg.embed, cfg.hidden, rng);
  if (layout.has_gaze() && layout.has_probe() && cfg.use_bipath)
    p.cell.pathway = PathwayWeights::create(cfg.hidden);
  if (layout.has_gaze())
    p.gaze_head = make_head(kGazeHeadSize, cfg.hidden, rng);
  if (layout.has_probe()) {
    p.probe_head = make_head(kProbeHeadSize, cfg.hidden, rng);
    p.probe_head->bias[0] = 1.0; // mean starts at the identity rotation
  }
  return p;
}

ModelParams ModelParams::zeros(const ModelConfig &cfg) {
  ModelParams p = create(cfg);
  p = p.zeros_like();
  for (auto *b : {&p.image, p.gaze ? &*p.gaze : nullptr,
                  p.probe ? &*p.probe : nullptr})
    if (b)
      b->running_var.setOnes();
  return p;
}

ModelParams ModelParams::zeros_like() const {
  ModelParams z = *this;
  zero_block(z.image);
  if (z.gaze)
    zero_block(*z.gaze);
  if (z.probe)
    zero_block(*z.probe);
  z.cell.adjacency.theta.setZero();
  z.cell.adjacency.phi.setZero();
  z.cell.adjacency.mask.setZero();
  if (z.cell.gaze)
    zero_stream(*z.cell.gaze);
  if (z.cell.probe)
    zero_stream(*z.cell.probe);
  if (z.cell.pathway) {
    z.cell.pathway->alpha.setZero();
    z.cell.pathway->beta.setZero();
  }
  for (auto *h : {z.gaze_head ? &*z.gaze_head : nullptr,
                  z.probe_head ? &*z.probe_head : nullptr})
    if (h) {
      h->weight.setZero();
      h->bias.setZero();
    }
  return z;
}

std::vector<NamedTensor> trainable_tensors(ModelParams &p) {
  std::vector<NamedTensor> out;
  add_block(out, "embed.image", p.image);
  if (p.gaze)
    add_block(out, "embed.gaze", *p.gaze);
  if (p.probe)
    add_block(out, "embed.probe", *p.probe);
  add_tensor(out, "adjacency.theta", p.cell.adjacency.theta);
  add_tensor(out, "adjacency.phi", p.cell.adjacency.phi);
  add_tensor(out, "adjacency.mask", p.cell.adjacency.mask);
  if (p.cell.gaze)
    add_stream(out, "stream.gaze", *p.cell.gaze);
  if (p.cell.probe)
    add_stream(out, "stream.probe", *p.cell.probe);
  if (p.cell.pathway) {
    add_tensor(out, "pathway.alpha", p.cell.pathway->alpha);
    add_tensor(out, "pathway.beta", p.cell.pathway->beta);
  }
  if (p.gaze_head) {
    add_tensor(out, "head.gaze.weight", p.gaze_head->weight);
    add_tensor(out, "head.gaze.bias", p.gaze_head->bias);
  }
  if (p.probe_head) {
    add_tensor(out, "head.probe.weight", p.probe_head->weight);
    add_tensor(out, "head.probe.bias", p.probe_head->bias);
  }
  return out;
}

std::vector<NamedTensor> buffer_tensors(ModelParams &p) {
  std::vector<NamedTensor> out;
  auto add = [&](const std::string &prefix, EmbeddingBlock &b) {
    add_tensor(out, prefix + ".running_mean", b.running_mean);
    add_tensor(out, prefix + ".running_var", b.running_var);
  };
  add("embed.image", p.image);
  if (p.gaze)
    add("embed.gaze", *p.gaze);
  if (p.probe)
    add("embed.probe", *p.probe);
  return out;
}

std::size_t parameter_count(const ModelConfig &cfg) {
  ModelParams p = ModelParams::zeros(cfg);
  std::size_t n = 0;
  for (const auto &t : trainable_tensors(p))
    n += static_cast<std::size_t>(t.size());
  return n;
}

std::string parameter_group(std::string_view name) {
  auto starts = [&](std::string_view prefix) {
    return name.substr(0, prefix.size()) == prefix;
  };
  if (starts("embed."))
    return "embedding";
  if (starts("adjacency.theta") || starts("adjacency.phi"))
    return "theta_phi";
  if (starts("adjacency.mask"))
    return "mask";
  if (starts("stream.")) {
    // stream.<s>.<K>_<gate>: group by stream and gate
    const auto dot = name.find('.', 7);
    const auto us = name.find('_', dot);
    return std::string("gate.") + std::string(name.substr(7, dot - 7)) + "." +
           std::string(name.substr(us + 1));
  }
  if (starts("pathway.alpha"))
    return "alpha";
  if (starts("pathway.beta"))
    return "beta";
  if (starts("head.gaze"))
    return "head.gaze";
  if (starts("head.probe"))
    return "head.probe";
  return std::string(name);
}

ModelParams restrict_params(const ModelParams &mt, TaskMode mode) {
  if (!mt.gaze || !mt.probe || !mt.cell.gaze || !mt.cell.probe)
    throw InvalidArgument("restrict_params: source must be multitask");
  if (mode == TaskMode::Multitask)
    return mt;
  const NodeLayout full = NodeLayout::for_mode(TaskMode::Multitask);
  const NodeLayout sub = NodeLayout::for_mode(mode);
  ModelParams p;
  p.image = mt.image;
  p.cell.adjacency.theta = mt.cell.adjacency.theta;
  p.cell.adjacency.phi = mt.cell.adjacency.phi;
  const int kept = sub.has_gaze() ? full.gaze : full.probe;
  const int idx[2] = {full.image, kept};
  p.cell.adjacency.mask = Matrix(2, 2);
  for (int j = 0; j < 2; ++j)
    for (int k = 0; k < 2; ++k)
      p.cell.adjacency.mask(j, k) = mt.cell.adjacency.mask(idx[j], idx[k]);
  if (sub.has_gaze()) {
    p.gaze = mt.gaze;
    p.cell.gaze = mt.cell.gaze;
    p.gaze_head = mt.gaze_head;
  } else {
    p.probe = mt.probe;
    p.cell.probe = mt.cell.probe;
    p.probe_head = mt.probe_head;
  }
  return p;
}

int SequenceBatch::frames() const {
  return sequences.empty() ? 0 : static_cast<int>(sequences.front().size());
}

PreparedBatch prepare_batch(const SequenceBatch &batch,
                            const ModelConfig &cfg) {
  if (batch.sequences.empty())
    throw InvalidArgument("prepare_batch: empty batch");
  const int frames = batch.frames();
  if (frames < 2)
    throw InvalidArgument("prepare_batch: sequences need at least 2 frames");
  for (const auto &s : batch.sequences)
    if (static_cast<int>(s.size()) != frames)
      throw InvalidArgument("prepare_batch: sequences differ in length");

  const ImageFeatureProvider provider = cfg.image_provider();
  PreparedBatch pb;
  pb.batch = batch.size();
  pb.steps = frames - 1;
  const Eigen::Index n = static_cast<Eigen::Index>(pb.steps) * pb.batch;
  pb.image.resize(provider.output_dim(), n);
  pb.gaze_shift.resize(2, n);
  pb.probe_rotation.resize(4, n);
  pb.gaze_target.resize(2, n);
  pb.probe_target.resize(4, n);
  for (int b = 0; b < pb.batch; ++b) {
    const auto &seq = batch.sequences[b];
    for (int t = 0; t < pb.steps; ++t) {
      const Frame &cur = seq[t], &next = seq[t + 1];
      const Eigen::Index c = pb.column(t, b);
      pb.image.col(c) = provider.map(cur.image);
      if (t == 0) {
        pb.gaze_shift.col(c).setZero();
        pb.probe_rotation.col(c) = UnitQuaternion::identity().vec();
      } else {
        const Frame &prev = seq[t - 1];
        pb.gaze_shift.col(c) = cur.gaze - prev.gaze;
        pb.probe_rotation.col(c) = canonical_rotation(
            relative_rotation(prev.orientation, cur.orientation));
      }
      pb.gaze_target.col(c) = next.gaze - cur.gaze;
      pb.probe_target.col(c) = canonical_rotation(
          relative_rotation(cur.orientation, next.orientation));
    }
  }
  return pb;
}

ForwardTrace forward_trace(const ModelParams &p, const ModelConfig &cfg,
                           const PreparedBatch &batch, Mode mode) {
  ForwardTrace tr;
  tr.layout = cfg.layout();
  tr.batch = batch.batch;
  tr.steps = batch.steps;
  const NodeLayout &layout = tr.layout;
  if (layout.has_gaze() != p.gaze.has_value() ||
      layout.has_probe() != p.probe.has_value())
    throw InvalidArgument("forward: parameters do not match the task mode");
  if (layout.has_gaze() && layout.has_probe() && cfg.use_bipath &&
      !p.cell.pathway)
    throw InvalidArgument("forward: bidirectional pathway weights missing");

  tr.embeds.resize(layout.count);
  tr.embeds[layout.image] = embed_forward(p.image, batch.image, mode);
  if (layout.has_gaze())
    tr.embeds[layout.gaze] = embed_forward(*p.gaze, batch.gaze_shift, mode);
  if (layout.has_probe())
    tr.embeds[layout.probe] =
        embed_forward(*p.probe, batch.probe_rotation, mode);
  for (const auto &e : tr.embeds)
    tr.nodes.push_back(e.output);

  tr.adjacency = adjacency_forward(p.cell.adjacency, tr.nodes);
  if (layout.has_gaze())
    tr.gaze_messages = stream_messages(*p.cell.gaze, tr.adjacency.adjacency,
                                       layout.gaze, tr.nodes);
  if (layout.has_probe())
    tr.probe_messages = stream_messages(
        *p.cell.probe, tr.adjacency.adjacency, layout.probe, tr.nodes);

  const Eigen::Index n = static_cast<Eigen::Index>(tr.steps) * tr.batch;
  if (layout.has_gaze())
    tr.hidden_gaze.resize(cfg.hidden, n);
  if (layout.has_probe())
    tr.hidden_probe.resize(cfg.hidden, n);

  CellState state = CellState::zeros(layout, cfg.hidden, tr.batch);
  tr.recurrence.reserve(tr.steps);
  for (int t = 0; t < tr.steps; ++t) {
    const Eigen::Index c0 = static_cast<Eigen::Index>(t) * tr.batch;
    std::array<Matrix, kGateCount> gm, pm;
    for (int g = 0; g < kGateCount; ++g) {
      if (layout.has_gaze())
        gm[g] = tr.gaze_messages->message[g].middleCols(c0, tr.batch);
      if (layout.has_probe())
        pm[g] = tr.probe_messages->message[g].middleCols(c0, tr.batch);
    }
    RecurrentStep step = recurrent_step(
        p.cell, layout, cfg.use_bipath, state,
        layout.has_gaze() ? &gm : nullptr, layout.has_probe() ? &pm : nullptr);
    if (layout.has_gaze())
      tr.hidden_gaze.middleCols(c0, tr.batch) = step.next.gaze;
    if (layout.has_probe())
      tr.hidden_probe.middleCols(c0, tr.batch) = step.next.probe;
    state = step.next;
    tr.recurrence.push_back(std::move(step));
  }

  if (layout.has_gaze()) {
    tr.gaze_raw = p.gaze_head->weight * tr.hidden_gaze;
    tr.gaze_raw.colwise() += p.gaze_head->bias;
  }
  if (layout.has_probe()) {
    tr.probe_raw = p.probe_head->weight * tr.hidden_probe;
    tr.probe_raw.colwise() += p.probe_head->bias;
  }
  return tr;
}

ForwardOutput forward(const ModelParams &p, const ModelConfig &cfg,
                      const SequenceBatch &batch, Mode mode) {
  const PreparedBatch pb = prepare_batch(batch, cfg);
  const ForwardTrace tr = forward_trace(p, cfg, pb, mode);
  ForwardOutput out;
  out.batch = tr.batch;
  out.steps = tr.steps;
  const Eigen::Index n = static_cast<Eigen::Index>(tr.steps) * tr.batch;
  if (tr.layout.has_gaze())
    for (Eigen::Index c = 0; c < n; ++c)
      out.gaze.push_back(decode_gaze_head(tr.gaze_raw.col(c)));
  if (tr.layout.has_probe())
    for (Eigen::Index c = 0; c < n; ++c)
      out.probe.push_back(decode_probe_head(tr.probe_raw.col(c)));
  return out;
}

LossBreakdown LossBreakdown::per_step() const {
  if (steps == 0)
    return *this;
  const double s = static_cast<double>(steps);
  return {total / s, nll_gaze / s, nll_probe / s, prior / s, 1};
}

LossBreakdown head_losses(const ForwardTrace &tr, const ModelConfig &cfg,
                          const PreparedBatch &batch, Matrix *grad_gaze_raw,
                          Matrix *grad_probe_raw) {
  LossBreakdown lb;
  lb.steps = tr.steps;
  const Eigen::Index n = static_cast<Eigen::Index>(tr.steps) * tr.batch;
  const double inv_b = 1.0 / static_cast<double>(tr.batch);
  if (tr.layout.has_gaze()) {
    if (grad_gaze_raw)
      grad_gaze_raw->setZero(kGazeHeadSize, n);
    for (Eigen::Index c = 0; c < n; ++c) {
      const auto h = gaze_head_nll(tr.gaze_raw.col(c), batch.gaze_target.col(c));
      lb.nll_gaze += h.value * inv_b;
      if (grad_gaze_raw)
        grad_gaze_raw->col(c) = cfg.lambda_s * inv_b * h.grad_raw;
    }
  }
  if (tr.layout.has_probe()) {
    if (grad_probe_raw)
      grad_probe_raw->setZero(kProbeHeadSize, n);
    for (Eigen::Index c = 0; c < n; ++c) {
      const Vector14d raw = tr.probe_raw.col(c);
      const auto h = probe_head_nll(raw, batch.probe_target.col(c));
      const PriorTerm pr = quaternion_prior(raw.head<4>(), cfg.eta);
      lb.nll_probe += h.value * inv_b;
      lb.prior += pr.value * inv_b;
      if (grad_probe_raw) {
        Vector14d g = cfg.lambda_r * h.grad_raw;
        g.head<4>() += pr.grad_mu;
        grad_probe_raw->col(c) = inv_b * g;
      }
    }
  }
  lb.total = cfg.lambda_s * lb.nll_gaze + cfg.lambda_r * lb.nll_probe + lb.prior;
  return lb;
}

LossBreakdown loss(const ModelParams &p, const ModelConfig &cfg,
                   const PreparedBatch &batch, Mode mode) {
  const ForwardTrace tr = forward_trace(p, cfg, batch, mode);
  return head_losses(tr, cfg, batch, nullptr, nullptr);
}

LossBreakdown loss(const ModelParams &p, const ModelConfig &cfg,
                   const SequenceBatch &batch, Mode mode) {
  return loss(p, cfg, prepare_batch(batch, cfg), mode);
}

namespace {

TrajectoryStep average_step(std::span<const TrajectoryStep> samples,
                            const Frame &from, bool has_gaze, bool has_probe) {
  TrajectoryStep m;
  const double n = static_cast<double>(samples.size());
  if (has_gaze) {
    for (const auto &s : samples)
      m.shift += s.shift;
    m.shift /= n;
    m.gaze = from.gaze + m.shift;
  }
  if (has_probe) {
    std::vector<UnitQuaternion> rs;
    rs.reserve(samples.size());
    for (const auto &s : samples)
      rs.push_back(s.rotation);
    m.rotation = mean_quaternion(rs);
    m.orientation = normalize(multiply(from.orientation, m.rotation));
  }
  return m;
}

UnitQuaternion sample_rotation(const MultivariateGaussian4 &d, Rng &rng) {
  UnitQuaternion r = normalize(UnitQuaternion::from_vector(sample_mvn4(d, rng)));
  return r.w < 0.0 ? -r : r;
}

} // namespace

SampledTrajectories sample_trajectories(const ModelParams &p,
                                        const ModelConfig &cfg,
                                        std::span<const Frame> sequence, int n,
                                        Rng &rng, Feedback feedback) {
  if (n < 1)
    throw InvalidArgument("sample_trajectories: n must be at least 1");
  const bool has_gaze = cfg.has_gaze(), has_probe = cfg.has_probe();
  SampledTrajectories out;
  out.paths.assign(n, {});

  if (feedback == Feedback::TeacherForced) {
    SequenceBatch sb{{sequence}};
    const ForwardOutput fo = forward(p, cfg, sb, Mode::Infer);
    std::vector<TrajectoryStep> step_samples(n);
    for (int t = 0; t < fo.steps; ++t) {
      const Frame &from = sequence[t];
      out.target_frame.push_back(t + 1);
      for (int k = 0; k < n; ++k) {
        TrajectoryStep s;
        if (has_gaze) {
          s.shift = sample_bivariate(fo.gaze[t], rng);
          s.gaze = from.gaze + s.shift;
        }
        if (has_probe) {
          s.rotation = sample_rotation(fo.probe[t], rng);
          s.orientation = normalize(multiply(from.orientation, s.rotation));
        }
        step_samples[k] = s;
        out.paths[k].push_back(s);
      }
      out.mean.push_back(average_step(step_samples, from, has_gaze, has_probe));
    }
    return out;
  }

  // Autoregressive: the n paths run as n columns of one recurrent batch.
  if (sequence.size() < 2)
    throw InvalidArgument("sample_trajectories: need at least 2 frames");
  const int steps = static_cast<int>(sequence.size()) - 1;
  const NodeLayout layout = cfg.layout();
  const ImageFeatureProvider provider = cfg.image_provider();
  Matrix shift = Matrix::Zero(2, n), rotation(4, n);
  rotation.colwise() = UnitQuaternion::identity().vec();
  std::vector<Eigen::Vector2d> gaze(n, sequence[0].gaze);
  std::vector<UnitQuaternion> orient(n, sequence[0].orientation);
  CellState state = CellState::zeros(layout, cfg.hidden, n);
  for (int t = 0; t < steps; ++t) {
    const Frame &from = sequence[t];
    out.target_frame.push_back(t + 1);
    Matrix image(provider.output_dim(), n);
    image.colwise() = provider.map(from.image);
    std::vector<Matrix> nodes(layout.count);
    nodes[layout.image] = embed_forward(p.image, image, Mode::Infer).output;
    if (has_gaze)
      nodes[layout.gaze] = embed_forward(*p.gaze, shift, Mode::Infer).output;
    if (has_probe)
      nodes[layout.probe] =
          embed_forward(*p.probe, rotation, Mode::Infer).output;
    CellOutput co = cell_step(p.cell, layout, cfg.use_bipath, state, nodes);
    state = co.state;
    Matrix graw, praw;
    if (has_gaze) {
      graw = p.gaze_head->weight * co.out_gaze;
      graw.colwise() += p.gaze_head->bias;
    }
    if (has_probe) {
      praw = p.probe_head->weight * co.out_probe;
      praw.colwise() += p.probe_head->bias;
    }
    std::vector<TrajectoryStep> step_samples(n);
    for (int k = 0; k < n; ++k) {
      TrajectoryStep s;
      if (has_gaze) {
        s.shift = sample_bivariate(decode_gaze_head(graw.col(k)), rng);
        gaze[k] += s.shift;
        s.gaze = gaze[k];
        shift.col(k) = s.shift;
      }
      if (has_probe) {
        s.rotation = sample_rotation(decode_probe_head(praw.col(k)), rng);
        orient[k] = normalize(multiply(orient[k], s.rotation));
        s.orientation = orient[k];
        rotation.col(k) = s.rotation.vec();
      }
      step_samples[k] = s;
      out.paths[k].push_back(s);
    }
    TrajectoryStep m;
    if (has_gaze) {
      for (const auto &s : step_samples) {
        m.shift += s.shift;
        m.gaze += s.gaze;
      }
      m.shift /= n;
      m.gaze /= n;
    }
    if (has_probe) {
      std::vector<UnitQuaternion> rs, qs;
      for (const auto &s : step_samples) {
        rs.push_back(s.rotation);
        qs.push_back(s.orientation);
      }
      m.rotation = mean_quaternion(rs);
      m.orientation = mean_quaternion(qs);
    }
    out.mean.push_back(m);
  }
  return out;
}

} // namespace mmguide
