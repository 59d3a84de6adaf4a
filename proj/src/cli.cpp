// SPDX-License-Identifier: Apache-2.0
#include "mmguide/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "mmguide/checkpoint.hpp"
#include "mmguide/config.hpp"
#include "mmguide/errors.hpp"
#include "mmguide/eval.hpp"
#include "mmguide/format.hpp"
#include "mmguide/manifest.hpp"
#include "mmguide/saliency.hpp"
#include "mmguide/synth.hpp"
#include "mmguide/train.hpp"

namespace fs = std::filesystem;

namespace mmguide {

namespace {

/// Config-file errors map to their own exit code.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig load_config(const std::string &path) {
  if (path.empty())
    return {};
  try {
    return apply_config(KeyValueConfig::load(path));
  } catch (const std::exception &e) {
    throw ConfigError(path + ": " + e.what());
  }
}

void add_keys(RunManifest &m, const std::string &prefix,
              const KeyValueConfig &kv) {
  for (const auto &[k, v] : kv.entries())
    m.add(prefix + k, v);
}

int dataset_dim(std::span<const SessionRecord> sessions) {
  for (const auto &s : sessions)
    if (!s.frames.empty())
      return static_cast<int>(s.frames.front().image.size());
  return 0;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::string opt_fixed(const std::optional<double> &v, int digits = 4) {
  return v ? fixed(*v, digits) : std::string("-");
}

// ---------------------------------------------------------------- generate

struct GenerateArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<int> sessions;
  std::optional<double> coupling;
};

int cmd_generate(const GenerateArgs &a, std::ostream &out) {
  RunConfig rc = load_config(a.config);
  if (a.seed)
    rc.synth.seed = *a.seed;
  if (a.sessions)
    rc.synth.n_sessions = *a.sessions;
  if (a.coupling)
    rc.synth.coupling = *a.coupling;
  try {
    rc.synth.validate();
  } catch (const InvalidArgument &e) {
    throw ConfigError(e.what());
  }
  const auto sessions = generate_dataset(rc.synth);
  write_dataset(fs::path(a.out), sessions, rc.synth.d_img);

  RunManifest m;
  m.add("tool_version", std::string(kToolVersion));
  m.add("command", "generate");
  add_keys(m, "config.", synth_key_values(rc.synth));
  m.add("seed", std::to_string(rc.synth.seed));
  m.add("dataset", a.out);
  m.add("dataset_sha256", sha256_file(a.out));
  m.write(fs::path(a.out + ".manifest"));

  std::size_t frames = 0;
  for (const auto &s : sessions)
    frames += s.frames.size();
  out << "generated " << sessions.size() << " sessions, " << frames
      << " frames -> " << a.out << '\n';
  return kExitOk;
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string dataset;
  std::string out;
  std::string mode;
  bool no_bipath = false;
  std::string resume;
  std::optional<int> epochs;
  std::optional<int> finetune_epochs;
  std::optional<std::uint64_t> seed;
};

std::vector<EpochMetrics> read_metrics_file(const fs::path &path) {
  std::ifstream is(path);
  if (!is)
    return {};
  return read_metrics_csv(is);
}

void write_metrics_file(const fs::path &path,
                        std::span<const EpochMetrics> rows) {
  std::ofstream os(path);
  if (!os)
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_metrics_csv(os, rows);
}

void print_epoch(std::ostream &out, const std::string &phase,
                 const EpochMetrics &m) {
  out << phase << " epoch " << std::setw(3) << m.epoch
      << "  loss " << fixed(m.loss.total) << "  nll_gaze "
      << fixed(m.loss.nll_gaze) << "  nll_probe " << fixed(m.loss.nll_probe)
      << "  prior " << fixed(m.loss.prior, 6) << "  lr " << m.lr << '\n';
}

int cmd_train(const TrainArgs &a, std::ostream &out) {
  RunConfig rc = load_config(a.config);
  if (!a.mode.empty()) {
    const auto m = parse_task_mode(a.mode);
    if (!m)
      throw ConfigError("unknown --mode '" + a.mode + "'");
    rc.model.mode = *m;
  }
  if (a.no_bipath)
    rc.model.use_bipath = false;
  if (a.epochs)
    rc.train.epochs = *a.epochs;
  if (a.finetune_epochs)
    rc.finetune_epochs = *a.finetune_epochs;
  if (a.seed) {
    rc.model.seed = rc.train.seed = *a.seed;
  }

  const auto sessions = read_dataset(fs::path(a.dataset));
  if (sessions.size() < 2)
    throw InvalidArgument("train: dataset needs at least 2 sessions");
  const int d_img = dataset_dim(sessions);
  const fs::path out_dir(a.out);
  fs::create_directories(out_dir);

  TrainState state;
  std::vector<EpochMetrics> history;
  std::uint64_t split_seed = rc.train.seed;
  double train_ratio = rc.train_ratio;
  if (!a.resume.empty()) {
    fs::path ck_path(a.resume);
    fs::path metrics_path = ck_path.parent_path() / "metrics.csv";
    if (!is_checkpoint_file(ck_path)) {
      const RunManifest prev = RunManifest::read(ck_path);
      const auto ck = prev.get("checkpoint");
      if (!ck)
        throw CheckpointMismatch("manifest names no checkpoint");
      ck_path = *ck;
      if (auto mp = prev.get("metrics"))
        metrics_path = *mp;
    }
    const Checkpoint ck = load_checkpoint(ck_path);
    state = state_from_checkpoint(ck);
    if (auto s = ck.meta.find("split_seed"); s != ck.meta.end())
      split_seed = parse_uint(s->second);
    if (auto r = ck.meta.find("train_ratio"); r != ck.meta.end())
      train_ratio = parse_double(r->second);
    if (auto s = ck.meta.find("train_seed"); s != ck.meta.end())
      rc.train.seed = parse_uint(s->second);
    rc.model = state.cfg;
    for (const auto &m : read_metrics_file(metrics_path))
      if (m.epoch < state.epochs_done)
        history.push_back(m);
    out << "resuming from " << ck_path.string() << " after epoch "
        << state.epochs_done << '\n';
  } else {
    rc.model.d_img = d_img;
    try {
      rc.model.validate();
    } catch (const InvalidArgument &e) {
      throw ConfigError(e.what());
    }
    state = TrainState::fresh(rc.model, rc.train);
  }
  if (state.cfg.d_img != d_img)
    throw CheckpointMismatch("dataset image dimension " +
                             std::to_string(d_img) +
                             " differs from the model's " +
                             std::to_string(state.cfg.d_img));

  const auto [train_set, test_set] =
      split_train_test(sessions, train_ratio, split_seed);
  out << "training " << task_mode_name(state.cfg.mode)
      << (state.cfg.use_bipath ? "" : " (no bipath)") << " on "
      << train_set.size() << " sessions, holding out " << test_set.size()
      << '\n';

  auto meta_for = [&](Checkpoint &ck, const std::string &phase) {
    ck.meta["phase"] = phase;
    ck.meta["split_seed"] = std::to_string(split_seed);
    ck.meta["train_ratio"] = format_double(train_ratio);
    ck.meta["train_seed"] = std::to_string(rc.train.seed);
  };
  const fs::path ck_path = out_dir / "checkpoint.ckpt";
  const fs::path metrics_path = out_dir / "metrics.csv";
  train_loop(state, train_set, rc.train, [&](const EpochMetrics &m) {
    history.push_back(m);
    print_epoch(out, "pretrain", m);
    Checkpoint ck = checkpoint_from_state(state);
    meta_for(ck, "pretrain");
    save_checkpoint(ck_path, ck);
    write_metrics_file(metrics_path, history);
  });
  if (history.empty() || state.epochs_done == 0) {
    Checkpoint ck = checkpoint_from_state(state);
    meta_for(ck, "pretrain");
    save_checkpoint(ck_path, ck);
    write_metrics_file(metrics_path, history);
  }

  RunManifest m;
  m.add("tool_version", std::string(kToolVersion));
  m.add("command", "train");
  add_keys(m, "config.", model_key_values(state.cfg));
  add_keys(m, "config.", train_key_values(rc.train, rc.finetune_epochs,
                                          train_ratio));
  m.add("seed", std::to_string(rc.train.seed));
  m.add("split_seed", std::to_string(split_seed));
  m.add("dataset", a.dataset);
  m.add("dataset_sha256", sha256_file(a.dataset));
  m.add("checkpoint", ck_path.string());
  m.add("metrics", metrics_path.string());

  if (rc.finetune_epochs > 0) {
    for (Plane plane : kAllPlanes) {
      TrainOptions ft = rc.train;
      ft.plane = plane;
      ft.epochs = rc.finetune_epochs;
      const bool any = std::any_of(
          train_set.begin(), train_set.end(),
          [&](const SessionRecord &s) { return s.header.plane == plane; });
      if (!any)
        continue;
      TrainState fs_state =
          TrainState::from_params(state.cfg, state.params, ft);
      std::vector<EpochMetrics> ft_hist;
      const std::string name(plane_name(plane));
      train_loop(fs_state, train_set, ft, [&](const EpochMetrics &em) {
        ft_hist.push_back(em);
        print_epoch(out, "finetune " + name, em);
      });
      Checkpoint ck = checkpoint_from_state(fs_state);
      meta_for(ck, "finetune");
      ck.meta["plane"] = name;
      const fs::path p = out_dir / ("checkpoint_" + name + ".ckpt");
      const fs::path mp = out_dir / ("metrics_" + name + ".csv");
      save_checkpoint(p, ck);
      write_metrics_file(mp, ft_hist);
      m.add("checkpoint_" + name, p.string());
      m.add("metrics_" + name, mp.string());
    }
  }
  m.write(out_dir / "manifest.txt");
  out << "wrote " << ck_path.string() << '\n';
  return kExitOk;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  std::string config;
  std::string checkpoint;
  std::string dataset;
  std::string out;
  std::string split = "test";
  std::optional<int> samples;
  bool best_of = false;
  std::optional<std::uint64_t> seed;
};

std::vector<SessionRecord> select_split(std::vector<SessionRecord> sessions,
                                        const Checkpoint &ck,
                                        const std::string &which) {
  if (which == "all")
    return sessions;
  const auto seed = ck.meta.find("split_seed");
  const auto ratio = ck.meta.find("train_ratio");
  if (seed == ck.meta.end() || ratio == ck.meta.end() || sessions.size() < 2)
    return sessions;
  auto [train, test] = split_train_test(
      sessions, parse_double(ratio->second), parse_uint(seed->second));
  return which == "train" ? train : test;
}

int cmd_eval(const EvalArgs &a, std::ostream &out) {
  RunConfig rc = load_config(a.config);
  if (a.samples)
    rc.eval.samples = *a.samples;
  if (a.best_of)
    rc.eval.best_of = true;
  if (a.seed)
    rc.eval.seed = *a.seed;
  if (a.split != "test" && a.split != "train" && a.split != "all")
    throw ConfigError("--split must be test, train or all");

  const Checkpoint ck = load_checkpoint(fs::path(a.checkpoint));
  if (!a.config.empty()) {
    // Model keys given in the config must agree with the checkpoint.
    ModelConfig from_file = ck.cfg;
    apply_model_keys(KeyValueConfig::load(a.config), from_file);
    if (!(from_file == ck.cfg))
      throw CheckpointMismatch("config model keys differ from the checkpoint");
  }
  auto sessions = read_dataset(fs::path(a.dataset));
  const int d_img = dataset_dim(sessions);
  if (d_img != 0 && d_img != ck.cfg.d_img)
    throw CheckpointMismatch("dataset image dimension differs from the model");
  sessions = select_split(std::move(sessions), ck, a.split);

  const EvalReport rep = evaluate(ck.params, ck.cfg, sessions, rc.eval);
  {
    std::ofstream os(a.out);
    if (!os)
      throw std::runtime_error("cannot open " + a.out + " for writing");
    write_report_csv(os, rep);
  }
  RunManifest m;
  m.add("tool_version", std::string(kToolVersion));
  m.add("command", "eval");
  add_keys(m, "config.", model_key_values(ck.cfg));
  m.add("config.samples", std::to_string(rc.eval.samples));
  m.add("config.best_of", rc.eval.best_of ? "true" : "false");
  m.add("config.split", a.split);
  m.add("seed", std::to_string(rc.eval.seed));
  m.add("dataset", a.dataset);
  m.add("dataset_sha256", sha256_file(a.dataset));
  m.add("checkpoint", a.checkpoint);
  m.add("checkpoint_sha256", sha256_file(a.checkpoint));
  m.add("report", a.out);
  m.write(fs::path(a.out + ".manifest"));

  out << "plane    stage   method    frames  probe_acc  gaze_px";
  if (rep.best_of)
    out << "  best_px";
  out << '\n';
  for (const auto &r : rep.rows) {
    if (r.stage != "all" && r.plane != "overall")
      continue;
    out << std::left << std::setw(9) << r.plane << std::setw(8) << r.stage
        << std::setw(10) << r.method << std::right << std::setw(6) << r.frames
        << std::setw(11) << opt_fixed(r.probe_acc) << std::setw(9)
        << opt_fixed(r.gaze_err_px, 2);
    if (rep.best_of)
      out << std::setw(9) << opt_fixed(r.gaze_best_px, 2);
    out << '\n';
  }
  return kExitOk;
}

// --------------------------------------------------------- export-saliency

struct SaliencyArgs {
  std::string checkpoint;
  std::string dataset;
  std::uint64_t session = 0;
  std::string out;
  bool raster_csv = false;
};

int cmd_export_saliency(const SaliencyArgs &a, std::ostream &out) {
  const Checkpoint ck = load_checkpoint(fs::path(a.checkpoint));
  if (!ck.cfg.has_gaze())
    throw CheckpointMismatch("checkpoint has no gaze head");
  const auto sessions = read_dataset(fs::path(a.dataset));
  const auto it = std::find_if(sessions.begin(), sessions.end(),
                               [&](const SessionRecord &s) {
                                 return s.header.id == a.session;
                               });
  if (it == sessions.end())
    throw CheckpointMismatch("unknown session " + std::to_string(a.session));
  if (dataset_dim(sessions) != ck.cfg.d_img)
    throw CheckpointMismatch("dataset image dimension differs from the model");
  if (it->frames.size() < 2)
    throw InvalidArgument("session needs at least 2 frames");

  const fs::path dir(a.out);
  fs::create_directories(dir);
  SequenceBatch sb{{std::span<const Frame>(it->frames)}};
  const ForwardOutput fo = forward(ck.params, ck.cfg, sb, Mode::Infer);
  std::ofstream pts(dir / "points.csv");
  if (!pts)
    throw std::runtime_error("cannot write points.csv");
  pts << "t,pred_x_px,pred_y_px,true_x_px,true_y_px\n";
  for (int t = 0; t < fo.steps; ++t) {
    const Frame &from = it->frames[t], &to = it->frames[t + 1];
    const BivariateGaussian &d = fo.gaze[fo.index(t, 0)];
    const Raster r = saliency_raster(d, from.gaze);
    char name[32];
    std::snprintf(name, sizeof name, "saliency_%04d", t + 1);
    {
      std::ofstream pgm(dir / (std::string(name) + ".pgm"), std::ios::binary);
      write_pgm(pgm, r);
    }
    if (a.raster_csv) {
      std::ofstream csv(dir / (std::string(name) + ".csv"));
      write_raster_csv(csv, r);
    }
    const Eigen::Vector2d pred = to_pixel_position(from.gaze + d.mu);
    const Eigen::Vector2d truth = to_pixel_position(to.gaze);
    pts << (t + 1) << ',' << format_double(pred.x()) << ','
        << format_double(pred.y()) << ',' << format_double(truth.x()) << ','
        << format_double(truth.y()) << '\n';
  }
  out << "wrote " << fo.steps << " saliency rasters for session " << a.session
      << " to " << dir.string() << '\n';
  return kExitOk;
}

} // namespace

int cmd_gradcheck(std::ostream &out, std::uint64_t seed,
                  const GradientFn &gradient) {
  const GradCheckSetup s = make_gradcheck_setup(seed);
  const GradCheckReport rep =
      gradient_check(s.params, s.cfg, s.batch, 1e-5, 1e-4, gradient);
  out << "group                     max_rel_error  status\n";
  for (const auto &[group, err] : rep.groups) {
    std::ostringstream e;
    e << std::scientific << std::setprecision(3) << err;
    out << std::left << std::setw(26) << group << std::setw(15) << e.str()
        << (err < rep.tolerance ? "ok" : "FAIL") << '\n';
  }
  out << (rep.passed ? "gradient check passed" : "gradient check FAILED")
      << " (" << rep.tensors.size() << " tensors, tolerance "
      << rep.tolerance << ", " << fixed(rep.seconds, 2) << " s)\n";
  return rep.passed ? kExitOk : kExitGradcheck;
}

int run_cli(const std::vector<std::string> &args, std::ostream &out,
            std::ostream &err) {
  CLI::App app{"Multimodal gaze/probe guidance model toolkit", "mmguide"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto *g = app.add_subcommand("generate", "Generate a synthetic dataset");
  g->add_option("--config", gen.config, "key=value config file");
  g->add_option("--out", gen.out, "Dataset output path")->required();
  g->add_option("--seed", gen.seed, "Override the seed");
  g->add_option("--sessions", gen.sessions, "Override n_sessions");
  g->add_option("--coupling", gen.coupling, "Override coupling kappa");

  TrainArgs tr;
  auto *t = app.add_subcommand("train", "Train a model");
  t->add_option("--config", tr.config, "key=value config file");
  t->add_option("--dataset", tr.dataset, "Dataset path")->required();
  t->add_option("--out", tr.out, "Output directory")->required();
  t->add_option("--mode", tr.mode, "multitask, gaze-only or probe-only");
  t->add_flag("--no-bipath", tr.no_bipath,
              "Disable the cross-stream hidden update");
  t->add_option("--resume", tr.resume, "Checkpoint or manifest to resume");
  t->add_option("--epochs", tr.epochs, "Pretraining epochs");
  t->add_option("--finetune-epochs", tr.finetune_epochs,
                "Per-plane fine-tuning epochs (0 disables)");
  t->add_option("--seed", tr.seed, "Override the seed");

  EvalArgs ev;
  auto *e = app.add_subcommand("eval", "Evaluate a checkpoint");
  e->add_option("--config", ev.config, "key=value config file");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint path")->required();
  e->add_option("--dataset", ev.dataset, "Dataset path")->required();
  e->add_option("--out", ev.out, "Report CSV path")->required();
  e->add_option("--samples", ev.samples, "Sampled trajectories per frame");
  e->add_flag("--best-of", ev.best_of, "Add best-sample columns");
  e->add_option("--split", ev.split, "test, train or all");
  e->add_option("--seed", ev.seed, "Sampling seed");

  std::uint64_t gc_seed = 7;
  auto *gc = app.add_subcommand("gradcheck", "Finite-difference gradient check");
  gc->add_option("--seed", gc_seed, "Model seed");

  SaliencyArgs sa;
  auto *x = app.add_subcommand("export-saliency",
                               "Write predicted gaze saliency rasters");
  x->add_option("--checkpoint", sa.checkpoint, "Checkpoint path")->required();
  x->add_option("--dataset", sa.dataset, "Dataset path")->required();
  x->add_option("--session", sa.session, "Session id")->required();
  x->add_option("--out", sa.out, "Output directory")->required();
  x->add_flag("--raster-csv", sa.raster_csv, "Also write rasters as CSV");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp &) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError &pe) {
    err << "error: " << pe.what() << '\n';
    return kExitConfig;
  }

  try {
    if (*g)
      return cmd_generate(gen, out);
    if (*t)
      return cmd_train(tr, out);
    if (*e)
      return cmd_eval(ev, out);
    if (*gc)
      return cmd_gradcheck(out, gc_seed);
    if (*x)
      return cmd_export_saliency(sa, out);
  } catch (const ConfigError &ce) {
    err << "config error: " << ce.what() << '\n';
    return kExitConfig;
  } catch (const NonFiniteLoss &nf) {
    err << "error: " << nf.what() << '\n';
    return kExitNonFinite;
  } catch (const NonFiniteGradient &ng) {
    err << "error: " << ng.what() << '\n';
    return kExitNonFinite;
  } catch (const CheckpointMismatch &cm) {
    err << "error: " << cm.what() << '\n';
    return kExitMismatch;
  } catch (const std::exception &ex) {
    err << "error: " << ex.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

} // namespace mmguide
