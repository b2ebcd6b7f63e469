#pragma once

#include <functional>

#include "reconformer/tensor.hpp"

namespace reconformer {

// Compares reverse-mode gradients of a scalar-valued map against central
// finite differences (f(x+h) - f(x-h)) / 2h, coordinate by coordinate, in
// float64. Returns the worst relative error
//   |fd - ad| / max(1e-8, |fd| + |ad|).
// The callable must be pure: it is re-evaluated twice per coordinate.
double finite_diff_gradcheck(const std::function<Tensor64(const Tensor64&)>& f,
                             const Tensor64& input, double h = 1e-4);

}  // namespace reconformer
