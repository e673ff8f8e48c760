#pragma once

#include <iosfwd>

namespace jointscen {

/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
int run_cli(int argc, char** argv);
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace jointscen
