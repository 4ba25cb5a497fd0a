#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace tst::cli {

enum ExitCode : int { kSuccess = 0, kFailure = 1, kUsage = 2, kDataError = 3, kNumericFailure = 4 };

/// Entry point behind the `tst` executable; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace tst::cli
