// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "mslb/cli/cli.h"

int main(int argc, char** argv) {
  return mslb::cli::run_command(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
