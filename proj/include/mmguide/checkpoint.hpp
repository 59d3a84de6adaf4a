// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>

#include "mmguide/model.hpp"
#include "mmguide/train.hpp"

namespace mmguide {

/// Binary checkpoint:
///   "MMGCKPT\0" | u32 version | u64 n | n bytes of key=value text
///   (model config plus meta.* entries) | u32 tensor count |
///   per tensor: u32 name length, name, u64 rows, u64 cols, rows*cols
///   little-endian f64 in column-major order.
/// Optimizer moments are stored as adam.m.<name> / adam.v.<name>.
struct Checkpoint {
  ModelConfig cfg;
  ModelParams params;
  std::optional<OptimizerState> optimizer;
  int epochs_done = 0;
  std::map<std::string, std::string> meta;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(std::ostream &os, const Checkpoint &ck);
void save_checkpoint(const std::filesystem::path &path, const Checkpoint &ck);

/// Throws CheckpointMismatch on a foreign file, missing or unexpected
/// tensors and shape disagreements with the stored configuration.
Checkpoint load_checkpoint(std::istream &is);
Checkpoint load_checkpoint(const std::filesystem::path &path);

/// True when the file starts with the checkpoint magic.
bool is_checkpoint_file(const std::filesystem::path &path);

Checkpoint checkpoint_from_state(const TrainState &state);
TrainState state_from_checkpoint(const Checkpoint &ck);

} // namespace mmguide
