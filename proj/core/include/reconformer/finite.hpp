#pragma once

#include <cmath>
#include <cstddef>

namespace reconformer {

// True iff every entry is finite. A single pass over |x| with a double
// accumulator: any NaN or infinity poisons the sum, and float-sized inputs
// cannot overflow a double by summing.
template <typename S>
bool all_finite(const S* p, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::fabs(static_cast<double>(p[i]));
  return std::isfinite(acc);
}

}  // namespace reconformer
