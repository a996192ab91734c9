#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace ivgap::cli {

enum ExitCode { ok = 0, user_error = 1, numerical_error = 2 };

// args excludes the program name
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

}  // namespace ivgap::cli
