#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fedshadow::cli {

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,       // bad arguments, bad config, I/O problems
    kDiverged = 2,      // the federation hit a non-finite value
    kIncomplete = 3,    // analyze/report on a run that did not complete
};

/// Entry point shared by the executable and the tests. `args` excludes argv[0].
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace fedshadow::cli
