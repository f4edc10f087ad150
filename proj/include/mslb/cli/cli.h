// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace mslb::cli {

/// Runs one subcommand. Returns 0 on success, 1 on usage, validation,
/// configuration, or missing-prerequisite errors, and 2 on runtime errors.
/// `args` excludes the program name.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mslb::cli
