#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "defence/image.hpp"

namespace defence::cli {

/// Runs one subcommand. `args` excludes the program name. Returns the
/// process exit status.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

/// `dx,dy;dx,dy;...` displacement list.
std::vector<Offset> parse_shifts(const std::string& text);

/// Flat `key=value` lines; blank lines and `#` comments are skipped.
std::vector<std::pair<std::string, std::string>> parse_config(const std::string& text);

}  // namespace defence::cli
