// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "mmguide/eval.hpp"
#include "mmguide/model.hpp"
#include "mmguide/synth.hpp"
#include "mmguide/train.hpp"

namespace mmguide {

/// Flat `key = value` file. Blank lines and lines starting with '#' are
/// ignored. Duplicate keys and (unless allowed) unknown keys are parse
/// errors carrying the line number.
class KeyValueConfig {
public:
  static KeyValueConfig parse(std::istream &is, bool allow_unknown = false);
  static KeyValueConfig parse(std::string_view text, bool allow_unknown = false);
  static KeyValueConfig load(const std::filesystem::path &path);

  std::optional<std::string> get(std::string_view key) const;
  std::size_t line_of(std::string_view key) const;
  void set(const std::string &key, const std::string &value);
  const std::map<std::string, std::string, std::less<>> &entries() const {
    return values_;
  }
  void write(std::ostream &os) const;

private:
  std::map<std::string, std::string, std::less<>> values_;
  std::map<std::string, std::size_t, std::less<>> lines_;
};

bool is_known_key(std::string_view key);

/// Everything a run can be configured with. `seed` seeds generation, model
/// initialization, window sampling, the train/test split and evaluation.
struct RunConfig {
  SynthConfig synth;
  ModelConfig model;
  TrainOptions train;
  int finetune_epochs = 16;
  double train_ratio = 0.8;
  EvalOptions eval;
};

/// Overrides the defaults in `base` with the keys present in `kv`.
RunConfig apply_config(const KeyValueConfig &kv, RunConfig base = {});

void apply_model_keys(const KeyValueConfig &kv, ModelConfig &cfg);
KeyValueConfig model_key_values(const ModelConfig &cfg);
KeyValueConfig synth_key_values(const SynthConfig &cfg);
KeyValueConfig train_key_values(const TrainOptions &opts, int finetune_epochs,
                                double train_ratio);

} // namespace mmguide
