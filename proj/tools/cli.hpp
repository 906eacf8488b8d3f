#pragma once

// Command-line front end: validate, train, serve, predict and explain.

#include <ostream>
#include <string>
#include <vector>

namespace matchlike {

/// Exit codes: 0 success, 1 failure (JSON error on `err`), 2 usage error.
/// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace matchlike
