#pragma once

#include <ostream>

namespace psdf {

// Runs the library's invariant suite, one line per check. Returns the number
// of failed checks.
int run_selftest(std::ostream& out);

}  // namespace psdf
