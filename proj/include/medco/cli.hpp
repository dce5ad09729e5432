#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace medco {

/// Exit status of a CLI invocation: 0 success, 1 runtime failure, 2 usage
/// error. args excludes the program name. Failures print one JSON line
/// {"error": {...}} on err.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace medco
