// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace a2f {
namespace cli {

// Runs one subcommand. `args` excludes the program name, natural order.
// Returns 0 on success, 2 on usage errors, 1 on runtime failures.
int run(std::vector<std::string> args);

}  // namespace cli
}  // namespace a2f
