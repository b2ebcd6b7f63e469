#include "reconformer/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "reconformer/rng.hpp"

namespace reconformer {

namespace {

struct Ellipse {
  double cy, cx, a, b, cos_t, sin_t, intensity;
};

}  // namespace

ComplexImage gen_phantom(const PhantomSpec& spec) {
  const char* where = "phantom-data::gen_phantom";
  require(spec.height >= 16 && spec.width >= 16, ErrorKind::Config, where,
          "phantom extents must be >= 16");
  require(spec.min_ellipses >= 1 && spec.max_ellipses >= spec.min_ellipses, ErrorKind::Config,
          where, "bad ellipse count range");
  require(spec.intensity_max >= spec.intensity_min && spec.intensity_min > 0, ErrorKind::Config,
          where, "bad intensity range");

  Rng rng(spec.seed);
  const int n =
      spec.min_ellipses +
      static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.max_ellipses - spec.min_ellipses + 1)));

  const double radius_unit = 0.5 * std::min(spec.height, spec.width);
  std::vector<Ellipse> ellipses;
  ellipses.reserve(n);
  for (int i = 0; i < n; ++i) {
    Ellipse e;
    e.cy = rng.next_range(0.15, 0.85) * spec.height;
    e.cx = rng.next_range(0.15, 0.85) * spec.width;
    e.a = rng.next_range(0.10, 0.32) * radius_unit;
    e.b = rng.next_range(0.10, 0.32) * radius_unit;
    double theta = rng.next_range(0.0, 3.141592653589793);
    e.cos_t = std::cos(theta);
    e.sin_t = std::sin(theta);
    e.intensity = rng.next_range(spec.intensity_min, spec.intensity_max);
    ellipses.push_back(e);
  }

  // Quadratic phase field coefficients over normalized [-1,1]^2 coordinates,
  // rescaled so the peak phase magnitude is a random amplitude <= pi.
  double coeff[6];
  for (double& c : coeff) c = rng.next_range(-1.0, 1.0);
  const double amp = rng.next_range(0.25 * 3.141592653589793, 3.141592653589793);

  std::vector<double> magnitude(static_cast<std::size_t>(spec.height) * spec.width, 0.0);
  std::vector<double> phase_raw(magnitude.size(), 0.0);
  double phase_peak = 0.0;
  for (int r = 0; r < spec.height; ++r) {
    const double v = 2.0 * r / (spec.height - 1) - 1.0;
    for (int c = 0; c < spec.width; ++c) {
      const double u = 2.0 * c / (spec.width - 1) - 1.0;
      const std::size_t i = static_cast<std::size_t>(r) * spec.width + c;
      double m = 0.0;
      for (const auto& e : ellipses) {
        const double dy = r - e.cy, dx = c - e.cx;
        const double ry = e.cos_t * dy - e.sin_t * dx;
        const double rx = e.sin_t * dy + e.cos_t * dx;
        if ((ry / e.a) * (ry / e.a) + (rx / e.b) * (rx / e.b) <= 1.0) m += e.intensity;
      }
      magnitude[i] = std::min(m, spec.magnitude_clip);
      phase_raw[i] = coeff[0] + coeff[1] * u + coeff[2] * v + coeff[3] * u * u +
                     coeff[4] * u * v + coeff[5] * v * v;
      phase_peak = std::max(phase_peak, std::fabs(phase_raw[i]));
    }
  }

  const double phase_scale = phase_peak > 1e-12 ? amp / phase_peak : 0.0;
  ComplexImage img(spec.height, spec.width);
  for (int r = 0; r < spec.height; ++r)
    for (int c = 0; c < spec.width; ++c) {
      const std::size_t i = static_cast<std::size_t>(r) * spec.width + c;
      const double phi = phase_raw[i] * phase_scale;
      img.re(r, c) = static_cast<float>(magnitude[i] * std::cos(phi));
      img.im(r, c) = static_cast<float>(magnitude[i] * std::sin(phi));
    }
  return img;
}

}  // namespace reconformer
