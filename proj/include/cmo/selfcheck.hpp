#pragma once

#include <ostream>

namespace cmo {

/// Runs the built-in invariant checks (sampling distributions, region
/// arithmetic, label mixing, loss identity, gradients, schedules, file
/// round-trips). Prints one line per check; returns true when all pass.
bool run_selfcheck(std::ostream& out);

}  // namespace cmo
