#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace dmse::cli {

enum ExitCode : int {
  kOk = 0,
  kConfigError = 2,
  kDataError = 3,
  kTrainingAborted = 4,
};

/// Entry point of the `dmse` tool; args excludes the program name.
/// Subcommands: train, eval, predict, export, cv, synth.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dmse::cli
