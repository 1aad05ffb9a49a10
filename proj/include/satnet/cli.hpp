#pragma once

#include <string>
#include <vector>

namespace satnet {

/// Entry point behind the `satnet` binary. Commands: train, eval, synth,
/// report. Exit codes: 0 success, 1 configuration/usage error, 2 data error,
/// 3 numerical abort.
int run_cli(const std::vector<std::string>& args);

} // namespace satnet
