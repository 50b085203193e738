#pragma once

#include <string>
#include <vector>

namespace symdistill::cli {

/// Full command line including the program name. Returns the process exit
/// code: 0 on success, 2 on argument errors, 1 on runtime errors.
int run(std::vector<std::string> args);

}  // namespace symdistill::cli
