#pragma once

#include <atomic>
#include <ostream>
#include <string>
#include <vector>

namespace mmsynth {

enum ExitStatus : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2 };

// Set by the SIGINT handler; synth stops at the next sample boundary and
// leaves a resumable checkpoint.
std::atomic<bool>& interrupt_flag();

// args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mmsynth
