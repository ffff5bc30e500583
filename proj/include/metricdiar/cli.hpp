#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace metricdiar {

// Entry point for the metricdiar tool; args excludes the program name.
// Returns 0 on success, 2 on usage/validation errors, 3 on runtime errors.
int run_cli(const std::vector<std::string> &args, std::ostream &out, std::ostream &err);

} // namespace metricdiar
