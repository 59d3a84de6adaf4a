// SPDX-License-Identifier: Apache-2.0
#include "mmguide/eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>

#include "mmguide/errors.hpp"
#include "mmguide/format.hpp"

namespace mmguide {

std::string_view stage_name(Stage s) {
  return s == Stage::Coarse ? "coarse" : "fine";
}

Stage stage_of(const UnitQuaternion &orientation,
               const UnitQuaternion &target) {
  return angle_between(orientation, target) <= kStageThresholdDeg
             ? Stage::Fine
             : Stage::Coarse;
}

bool probe_correct(const UnitQuaternion &q_prev, const UnitQuaternion &q_true,
                   const UnitQuaternion &r_hat) {
  return angle_between(multiply(q_prev, r_hat), q_true) <=
         angle_between(q_prev, q_true);
}

bool probe_correct_strict(const UnitQuaternion &q_prev,
                          const UnitQuaternion &q_true,
                          const UnitQuaternion &r_hat) {
  return angle_between(multiply(q_prev, r_hat), q_true) <
         angle_between(q_prev, q_true);
}

Eigen::Vector2d to_pixel_offset(const Eigen::Vector2d &d) {
  return {d.x() * kImageWidth, d.y() * kImageHeight};
}

Eigen::Vector2d to_pixel_position(const Eigen::Vector2d &g) {
  return {(g.x() + 0.5) * kImageWidth, (g.y() + 0.5) * kImageHeight};
}

double gaze_pixel_error(const Eigen::Vector2d &g_prev,
                        const Eigen::Vector2d &s_hat,
                        const Eigen::Vector2d &g_true) {
  return to_pixel_offset(g_prev + s_hat - g_true).norm();
}

std::vector<BaselinePrediction> run_baselines(std::span<const Frame> frames) {
  if (frames.size() < 2)
    throw InvalidArgument("run_baselines: need at least 2 frames");
  std::vector<BaselinePrediction> out;
  out.reserve(frames.size() - 1);
  for (std::size_t t = 1; t < frames.size(); ++t) {
    BaselinePrediction b;
    b.target_frame = static_cast<int>(t);
    if (t >= 2)
      b.rotation = relative_rotation(frames[t - 2].orientation,
                                     frames[t - 1].orientation);
    out.push_back(b);
  }
  return out;
}

Predictor model_predictor(const ModelParams &p, const ModelConfig &cfg) {
  return [&p, cfg](std::span<const SessionRecord> sessions) {
    constexpr std::size_t kChunk = 16;
    std::vector<StepDistributions> out(sessions.size());
    std::map<std::size_t, std::vector<std::size_t>> by_length;
    for (std::size_t i = 0; i < sessions.size(); ++i)
      if (sessions[i].frames.size() >= 2)
        by_length[sessions[i].frames.size()].push_back(i);
    for (const auto &[len, idx] : by_length) {
      for (std::size_t c = 0; c < idx.size(); c += kChunk) {
        const std::size_t end = std::min(idx.size(), c + kChunk);
        SequenceBatch sb;
        for (std::size_t k = c; k < end; ++k)
          sb.sequences.emplace_back(sessions[idx[k]].frames);
        const ForwardOutput fo = forward(p, cfg, sb, Mode::Infer);
        for (std::size_t k = c; k < end; ++k) {
          const int b = static_cast<int>(k - c);
          StepDistributions &d = out[idx[k]];
          for (int t = 0; t < fo.steps; ++t) {
            if (!fo.gaze.empty())
              d.gaze.push_back(fo.gaze[fo.index(t, b)]);
            if (!fo.probe.empty())
              d.probe.push_back(fo.probe[fo.index(t, b)]);
          }
        }
      }
    }
    return out;
  };
}

const EvalRow *EvalReport::find(std::string_view plane, std::string_view stage,
                                std::string_view method) const {
  for (const auto &r : rows)
    if (r.plane == plane && r.stage == stage && r.method == method)
      return &r;
  return nullptr;
}

namespace {

constexpr std::array<std::string_view, 4> kPlaneKeys = {"TVP", "ACP", "FSP",
                                                        "overall"};
constexpr std::array<std::string_view, 3> kStageKeys = {"coarse", "fine",
                                                        "all"};

struct Bucket {
  std::int64_t frames = 0;
  std::int64_t probe_frames = 0, gaze_frames = 0;
  double probe_ok = 0, probe_ok_strict = 0, gaze_err = 0, gaze_best = 0;
  double best_le_mean = 0;
  double base_probe_ok = 0, base_probe_ok_strict = 0, base_gaze_err = 0;
  std::vector<double> sample_probe_ok; // per sample index
  std::vector<double> sample_gaze_err;
};

double stddev(const std::vector<double> &v) {
  if (v.empty())
    return 0.0;
  double mean = 0.0;
  for (double x : v)
    mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v)
    ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

UnitQuaternion project_rotation(const Eigen::Vector4d &v) {
  if (!(v.norm() > 1e-12) || !v.allFinite())
    return UnitQuaternion::identity();
  UnitQuaternion r = normalize(UnitQuaternion::from_vector(v));
  return r.w < 0.0 ? -r : r;
}

} // namespace

EvalReport evaluate(const Predictor &predict,
                    std::span<const SessionRecord> sessions,
                    const EvalOptions &opts) {
  if (opts.samples < 1)
    throw InvalidArgument("evaluate: samples must be at least 1");
  const auto n = static_cast<std::size_t>(opts.samples);
  const std::vector<StepDistributions> dists = predict(sessions);
  if (dists.size() != sessions.size())
    throw InvalidArgument("evaluate: predictor returned wrong session count");

  std::array<std::array<Bucket, 3>, 4> buckets;
  bool any_gaze = false, any_probe = false;
  for (auto &row : buckets)
    for (auto &b : row) {
      b.sample_probe_ok.assign(n, 0.0);
      b.sample_gaze_err.assign(n, 0.0);
    }

  EvalReport rep;
  rep.samples = opts.samples;
  rep.best_of = opts.best_of;
  std::vector<Eigen::Vector2d> shifts(n);
  std::vector<UnitQuaternion> rots(n);
  std::vector<double> sample_err(n);
  std::vector<char> sample_ok(n);

  for (std::size_t si = 0; si < sessions.size(); ++si) {
    const SessionRecord &s = sessions[si];
    if (s.frames.size() < 2)
      continue;
    const StepDistributions &d = dists[si];
    const bool has_gaze = !d.gaze.empty(), has_probe = !d.probe.empty();
    const std::size_t steps = s.frames.size() - 1;
    if ((has_gaze && d.gaze.size() != steps) ||
        (has_probe && d.probe.size() != steps))
      throw InvalidArgument("evaluate: predictor returned wrong step count");
    any_gaze |= has_gaze;
    any_probe |= has_probe;
    Rng rng = derive_rng(opts.seed, s.header.id, 0x6576616cULL);
    const auto baselines = run_baselines(s.frames);

    for (std::size_t t = 0; t < steps; ++t) {
      const Frame &from = s.frames[t], &to = s.frames[t + 1];
      FrameScore fs;
      fs.session = s.header.id;
      fs.plane = s.header.plane;
      fs.target_frame = static_cast<int>(t + 1);
      fs.stage = stage_of(to.orientation, s.header.target);
      fs.baseline_probe_ok =
          probe_correct(from.orientation, to.orientation, baselines[t].rotation);
      fs.baseline_probe_ok_strict = probe_correct_strict(
          from.orientation, to.orientation, baselines[t].rotation);
      fs.baseline_gaze_error =
          gaze_pixel_error(from.gaze, baselines[t].shift, to.gaze);

      if (has_gaze) {
        Eigen::Vector2d mean = Eigen::Vector2d::Zero();
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < n; ++k) {
          shifts[k] = sample_bivariate(d.gaze[t], rng);
          mean += shifts[k];
          sample_err[k] = gaze_pixel_error(from.gaze, shifts[k], to.gaze);
          best = std::min(best, sample_err[k]);
        }
        mean /= static_cast<double>(n);
        fs.gaze_error = gaze_pixel_error(from.gaze, mean, to.gaze);
        fs.gaze_best_error = best;
      }
      if (has_probe) {
        for (std::size_t k = 0; k < n; ++k) {
          rots[k] = project_rotation(sample_mvn4(d.probe[t], rng));
          sample_ok[k] = probe_correct(from.orientation, to.orientation, rots[k]);
        }
        const UnitQuaternion mean = mean_quaternion(rots);
        fs.probe_ok = probe_correct(from.orientation, to.orientation, mean);
        fs.probe_ok_strict =
            probe_correct_strict(from.orientation, to.orientation, mean);
      }

      const std::size_t plane_idx = static_cast<std::size_t>(s.header.plane);
      const std::size_t stage_idx = fs.stage == Stage::Coarse ? 0 : 1;
      for (std::size_t pi : {plane_idx, std::size_t{3}})
        for (std::size_t sti : {stage_idx, std::size_t{2}}) {
          Bucket &b = buckets[pi][sti];
          ++b.frames;
          b.base_probe_ok += fs.baseline_probe_ok;
          b.base_probe_ok_strict += fs.baseline_probe_ok_strict;
          b.base_gaze_err += fs.baseline_gaze_error;
          if (has_gaze) {
            ++b.gaze_frames;
            b.gaze_err += *fs.gaze_error;
            b.gaze_best += *fs.gaze_best_error;
            b.best_le_mean += *fs.gaze_best_error <= *fs.gaze_error;
            for (std::size_t k = 0; k < n; ++k)
              b.sample_gaze_err[k] += sample_err[k];
          }
          if (has_probe) {
            ++b.probe_frames;
            b.probe_ok += *fs.probe_ok;
            b.probe_ok_strict += *fs.probe_ok_strict;
            for (std::size_t k = 0; k < n; ++k)
              b.sample_probe_ok[k] += sample_ok[k];
          }
        }
      rep.frames.push_back(fs);
    }
  }

  for (std::size_t pi = 0; pi < kPlaneKeys.size(); ++pi)
    for (std::size_t sti = 0; sti < kStageKeys.size(); ++sti) {
      Bucket &b = buckets[pi][sti];
      EvalRow model;
      model.plane = kPlaneKeys[pi];
      model.stage = kStageKeys[sti];
      model.method = "model";
      model.frames = b.frames;
      EvalRow base = model;
      base.method = "baseline";
      if (b.frames > 0) {
        const double nf = static_cast<double>(b.frames);
        if (any_probe) {
          base.probe_acc = b.base_probe_ok / nf;
          base.probe_acc_strict = b.base_probe_ok_strict / nf;
        }
        if (any_gaze)
          base.gaze_err_px = b.base_gaze_err / nf;
      }
      if (b.probe_frames > 0) {
        const double np = static_cast<double>(b.probe_frames);
        model.probe_acc = b.probe_ok / np;
        model.probe_acc_strict = b.probe_ok_strict / np;
        for (double &v : b.sample_probe_ok)
          v /= np;
        model.probe_acc_std = stddev(b.sample_probe_ok);
      }
      if (b.gaze_frames > 0) {
        const double ng = static_cast<double>(b.gaze_frames);
        model.gaze_err_px = b.gaze_err / ng;
        for (double &v : b.sample_gaze_err)
          v /= ng;
        model.gaze_err_std = stddev(b.sample_gaze_err);
        if (opts.best_of) {
          model.gaze_best_px = b.gaze_best / ng;
          model.best_le_mean = b.best_le_mean / ng;
        }
      }
      rep.rows.push_back(std::move(model));
      rep.rows.push_back(std::move(base));
    }
  return rep;
}

EvalReport evaluate(const ModelParams &p, const ModelConfig &cfg,
                    std::span<const SessionRecord> sessions,
                    const EvalOptions &opts) {
  return evaluate(model_predictor(p, cfg), sessions, opts);
}

namespace {

std::string cell(const std::optional<double> &v) {
  return v ? format_double(*v) : std::string();
}

std::optional<double> parse_cell(std::string_view s, std::size_t line) {
  if (s.empty())
    return std::nullopt;
  return parse_double(s, line);
}

} // namespace

void write_report_csv(std::ostream &os, const EvalReport &report) {
  os << "plane,stage,method,frames,probe_acc,probe_acc_strict,probe_acc_std,"
        "gaze_err_px,gaze_err_std";
  if (report.best_of)
    os << ",gaze_best_px,best_le_mean";
  os << '\n';
  for (const auto &r : report.rows) {
    os << r.plane << ',' << r.stage << ',' << r.method << ',' << r.frames << ','
       << cell(r.probe_acc) << ',' << cell(r.probe_acc_strict) << ','
       << cell(r.probe_acc_std) << ',' << cell(r.gaze_err_px) << ','
       << cell(r.gaze_err_std);
    if (report.best_of)
      os << ',' << cell(r.gaze_best_px) << ',' << cell(r.best_le_mean);
    os << '\n';
  }
}

EvalReport read_report_csv(std::istream &is) {
  EvalReport rep;
  std::string line;
  if (!std::getline(is, line))
    throw ParseError("missing report header", 1);
  const auto header = split(trim(line), ',');
  if (header.size() == 11)
    rep.best_of = true;
  else if (header.size() != 9)
    throw ParseError("unexpected report header", 1);
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    const auto row = trim(line);
    if (row.empty())
      continue;
    const auto f = split(row, ',');
    if (f.size() != header.size())
      throw ParseError("wrong number of report fields", lineno);
    EvalRow r;
    r.plane = f[0];
    r.stage = f[1];
    r.method = f[2];
    r.frames = parse_int(f[3], lineno);
    r.probe_acc = parse_cell(f[4], lineno);
    r.probe_acc_strict = parse_cell(f[5], lineno);
    r.probe_acc_std = parse_cell(f[6], lineno);
    r.gaze_err_px = parse_cell(f[7], lineno);
    r.gaze_err_std = parse_cell(f[8], lineno);
    if (rep.best_of) {
      r.gaze_best_px = parse_cell(f[9], lineno);
      r.best_le_mean = parse_cell(f[10], lineno);
    }
    rep.rows.push_back(std::move(r));
  }
  return rep;
}

} // namespace mmguide
