#pragma once

namespace fisherjscc::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kDataError = 3,
  kNumericalAbort = 4,
};

// Entry point of the fisherjscc tool; returns the process exit status.
int run(int argc, char** argv);

}  // namespace fisherjscc::cli
