// SPDX-License-Identifier: Apache-2.0
#include "mmguide/config.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "mmguide/errors.hpp"
#include "mmguide/format.hpp"

namespace mmguide {

namespace {

constexpr std::array<std::string_view, 41> kKnownKeys = {
    // shared
    "seed", "d_img",
    // generation
    "n_sessions", "frames_per_session", "frame_rate", "coarse_fraction",
    "gaze_noise", "probe_noise_deg", "saccade_rate", "saccade_min",
    "saccade_max", "pursuit_gain", "lead_gain", "centering", "image_noise",
    "coupling",
    // model
    "mode", "use_bipath", "image_projection", "hidden", "embed", "attn",
    "lambda_s", "lambda_r", "eta", "bn_momentum",
    // training
    "epochs", "finetune_epochs", "batch_size", "window", "lr", "weight_decay",
    "lr_decay", "lr_decay_every", "clip_norm", "train_ratio",
    // evaluation
    "samples", "best_of",
    // reserved for manifests
    "dataset", "checkpoint", "out"};

} // namespace

bool is_known_key(std::string_view key) {
  return std::find(kKnownKeys.begin(), kKnownKeys.end(), key) !=
         kKnownKeys.end();
}

KeyValueConfig KeyValueConfig::parse(std::istream &is, bool allow_unknown) {
  KeyValueConfig kv;
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#')
      continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ParseError("expected key = value", lineno);
    const std::string key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty())
      throw ParseError("empty key", lineno);
    if (!allow_unknown && !is_known_key(key))
      throw ParseError("unknown key '" + key + "'", lineno);
    if (kv.values_.count(key))
      throw ParseError("duplicate key '" + key + "'", lineno);
    kv.values_.emplace(key, value);
    kv.lines_.emplace(key, lineno);
  }
  return kv;
}

KeyValueConfig KeyValueConfig::parse(std::string_view text,
                                     bool allow_unknown) {
  std::istringstream is{std::string(text)};
  return parse(is, allow_unknown);
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path &path) {
  std::ifstream is(path);
  if (!is)
    throw ParseError("cannot open config file " + path.string());
  return parse(is);
}

std::optional<std::string> KeyValueConfig::get(std::string_view key) const {
  const auto it = values_.find(key);
  if (it == values_.end())
    return std::nullopt;
  return it->second;
}

std::size_t KeyValueConfig::line_of(std::string_view key) const {
  const auto it = lines_.find(key);
  return it == lines_.end() ? 0 : it->second;
}

void KeyValueConfig::set(const std::string &key, const std::string &value) {
  values_[key] = value;
}

void KeyValueConfig::write(std::ostream &os) const {
  for (const auto &[k, v] : values_)
    os << k << " = " << v << '\n';
}

namespace {

template <class F> void with(const KeyValueConfig &kv, std::string_view key, F f) {
  if (auto v = kv.get(key))
    f(*v, kv.line_of(key));
}

void read_int(const KeyValueConfig &kv, std::string_view key, int &out) {
  with(kv, key, [&](const std::string &v, std::size_t line) {
    out = static_cast<int>(parse_int(v, line));
  });
}

void read_double(const KeyValueConfig &kv, std::string_view key, double &out) {
  with(kv, key, [&](const std::string &v, std::size_t line) {
    out = parse_double(v, line);
  });
}

void read_bool(const KeyValueConfig &kv, std::string_view key, bool &out) {
  with(kv, key, [&](const std::string &v, std::size_t line) {
    out = parse_bool(v, line);
  });
}

void read_seed(const KeyValueConfig &kv, std::uint64_t &out) {
  with(kv, "seed", [&](const std::string &v, std::size_t line) {
    out = parse_uint(v, line);
  });
}

} // namespace

void apply_model_keys(const KeyValueConfig &kv, ModelConfig &cfg) {
  with(kv, "mode", [&](const std::string &v, std::size_t line) {
    const auto m = parse_task_mode(v);
    if (!m)
      throw ParseError("unknown mode '" + v + "'", line);
    cfg.mode = *m;
  });
  read_bool(kv, "use_bipath", cfg.use_bipath);
  read_int(kv, "d_img", cfg.d_img);
  read_int(kv, "image_projection", cfg.image_projection);
  read_int(kv, "hidden", cfg.hidden);
  read_int(kv, "embed", cfg.embed);
  read_int(kv, "attn", cfg.attn);
  read_double(kv, "lambda_s", cfg.lambda_s);
  read_double(kv, "lambda_r", cfg.lambda_r);
  read_double(kv, "eta", cfg.eta);
  read_double(kv, "bn_momentum", cfg.bn_momentum);
  read_seed(kv, cfg.seed);
}

RunConfig apply_config(const KeyValueConfig &kv, RunConfig rc) {
  SynthConfig &s = rc.synth;
  read_int(kv, "n_sessions", s.n_sessions);
  read_int(kv, "frames_per_session", s.frames_per_session);
  read_double(kv, "frame_rate", s.frame_rate);
  read_int(kv, "d_img", s.d_img);
  read_double(kv, "coarse_fraction", s.coarse_fraction);
  read_double(kv, "gaze_noise", s.gaze_noise);
  read_double(kv, "probe_noise_deg", s.probe_noise_deg);
  read_double(kv, "saccade_rate", s.saccade_rate);
  read_double(kv, "saccade_min", s.saccade_min);
  read_double(kv, "saccade_max", s.saccade_max);
  read_double(kv, "pursuit_gain", s.pursuit_gain);
  read_double(kv, "lead_gain", s.lead_gain);
  read_double(kv, "centering", s.centering);
  read_double(kv, "image_noise", s.image_noise);
  read_double(kv, "coupling", s.coupling);
  read_seed(kv, s.seed);

  apply_model_keys(kv, rc.model);

  TrainOptions &t = rc.train;
  read_int(kv, "epochs", t.epochs);
  read_int(kv, "finetune_epochs", rc.finetune_epochs);
  read_int(kv, "batch_size", t.batch_size);
  read_int(kv, "window", t.window);
  read_double(kv, "lr", t.lr);
  read_double(kv, "weight_decay", t.weight_decay);
  read_double(kv, "lr_decay", t.lr_decay);
  read_int(kv, "lr_decay_every", t.lr_decay_every);
  read_double(kv, "clip_norm", t.clip_norm);
  read_double(kv, "train_ratio", rc.train_ratio);
  read_seed(kv, t.seed);

  read_int(kv, "samples", rc.eval.samples);
  read_bool(kv, "best_of", rc.eval.best_of);
  read_seed(kv, rc.eval.seed);
  return rc;
}

KeyValueConfig model_key_values(const ModelConfig &c) {
  KeyValueConfig kv;
  kv.set("mode", std::string(task_mode_name(c.mode)));
  kv.set("use_bipath", c.use_bipath ? "true" : "false");
  kv.set("d_img", std::to_string(c.d_img));
  kv.set("image_projection", std::to_string(c.image_projection));
  kv.set("hidden", std::to_string(c.hidden));
  kv.set("embed", std::to_string(c.embed));
  kv.set("attn", std::to_string(c.attn));
  kv.set("lambda_s", format_double(c.lambda_s));
  kv.set("lambda_r", format_double(c.lambda_r));
  kv.set("eta", format_double(c.eta));
  kv.set("bn_momentum", format_double(c.bn_momentum));
  kv.set("seed", std::to_string(c.seed));
  return kv;
}

KeyValueConfig synth_key_values(const SynthConfig &s) {
  KeyValueConfig kv;
  kv.set("n_sessions", std::to_string(s.n_sessions));
  kv.set("frames_per_session", std::to_string(s.frames_per_session));
  kv.set("frame_rate", format_double(s.frame_rate));
  kv.set("d_img", std::to_string(s.d_img));
  kv.set("coarse_fraction", format_double(s.coarse_fraction));
  kv.set("gaze_noise", format_double(s.gaze_noise));
  kv.set("probe_noise_deg", format_double(s.probe_noise_deg));
  kv.set("saccade_rate", format_double(s.saccade_rate));
  kv.set("saccade_min", format_double(s.saccade_min));
  kv.set("saccade_max", format_double(s.saccade_max));
  kv.set("pursuit_gain", format_double(s.pursuit_gain));
  kv.set("lead_gain", format_double(s.lead_gain));
  kv.set("centering", format_double(s.centering));
  kv.set("image_noise", format_double(s.image_noise));
  kv.set("coupling", format_double(s.coupling));
  kv.set("seed", std::to_string(s.seed));
  return kv;
}

KeyValueConfig train_key_values(const TrainOptions &t, int finetune_epochs,
                                double train_ratio) {
  KeyValueConfig kv;
  kv.set("epochs", std::to_string(t.epochs));
  kv.set("finetune_epochs", std::to_string(finetune_epochs));
  kv.set("batch_size", std::to_string(t.batch_size));
  kv.set("window", std::to_string(t.window));
  kv.set("lr", format_double(t.lr));
  kv.set("weight_decay", format_double(t.weight_decay));
  kv.set("lr_decay", format_double(t.lr_decay));
  kv.set("lr_decay_every", std::to_string(t.lr_decay_every));
  kv.set("clip_norm", format_double(t.clip_norm));
  kv.set("train_ratio", format_double(train_ratio));
  kv.set("seed", std::to_string(t.seed));
  return kv;
}

} // namespace mmguide
