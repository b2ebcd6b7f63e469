#pragma once

#include <cstdint>

#include "reconformer/kspace.hpp"

namespace reconformer {

// Synthetic complex-valued phantom: a handful of randomly placed, rotated,
// overlapping ellipses with random intensities, clipped at magnitude_clip,
// multiplied by a smooth random quadratic phase field in [-pi, pi].
struct PhantomSpec {
  int height = 64;
  int width = 64;
  int min_ellipses = 6;
  int max_ellipses = 12;
  double intensity_min = 0.2;
  double intensity_max = 1.0;
  double magnitude_clip = 1.5;
  std::uint64_t seed = 0;
};

ComplexImage gen_phantom(const PhantomSpec& spec);

}  // namespace reconformer
