#pragma once

namespace reconformer {

// Runs the cross-module invariant suite; prints one line per check.
// Returns the number of failed checks.
int run_selftest();

}  // namespace reconformer
