// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mmguide/train.hpp"

namespace mmguide {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,     ///< I/O or data errors
  kExitConfig = 2,      ///< config file or command-line parse error
  kExitNonFinite = 3,   ///< non-finite loss or gradient during training
  kExitMismatch = 4,    ///< checkpoint/config mismatch, unknown session
  kExitGradcheck = 5,   ///< gradient check failed
};

/// Entry point shared by the executable and the tests. `args` excludes the
/// program name. Human-readable progress goes to `out`, errors to `err`.
int run_cli(const std::vector<std::string> &args, std::ostream &out,
            std::ostream &err);

/// Gradient check on the small fixed-seed model; prints one line per
/// parameter group. `gradient` replaces the analytic backward pass (used to
/// inject faults in tests).
int cmd_gradcheck(std::ostream &out, std::uint64_t seed = 7,
                  const GradientFn &gradient = {});

} // namespace mmguide
