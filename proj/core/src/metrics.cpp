#include "reconformer/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "reconformer/config.hpp"

namespace reconformer {

namespace {
const char* const kWhere = "train-eval::metrics";

double mse_real_pair(const std::vector<float>& a, const std::vector<float>& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = static_cast<double>(a[i]) - b[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

}  // namespace

std::string PsnrResult::str() const { return identical ? "identical" : format_double(db); }

PsnrResult psnr(const std::vector<double>& recon, const std::vector<double>& reference,
                double data_range) {
  require(recon.size() == reference.size() && !recon.empty(), ErrorKind::Shape,
          std::string(kWhere) + "::psnr", "size mismatch");
  require(data_range > 0.0, ErrorKind::Domain, std::string(kWhere) + "::psnr",
          "data_range must be positive");
  double mse = 0;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    double d = recon[i] - reference[i];
    mse += d * d;
  }
  mse /= static_cast<double>(recon.size());
  if (mse == 0.0) return {0.0, true};
  return {10.0 * std::log10(data_range * data_range / mse), false};
}

double ssim(const std::vector<double>& recon, const std::vector<double>& reference, int height,
            int width, double data_range) {
  const std::string where = std::string(kWhere) + "::ssim";
  require(height >= 7 && width >= 7, ErrorKind::Domain, where, "images must be at least 7x7");
  require(recon.size() == reference.size() &&
              recon.size() == static_cast<std::size_t>(height) * width,
          ErrorKind::Shape, where, "size mismatch");
  require(data_range > 0.0, ErrorKind::Domain, where, "data_range must be positive");

  constexpr int kWin = 7;
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const double inv_n = 1.0 / (kWin * kWin);

  double total = 0;
  std::size_t count = 0;
  for (int r = 0; r + kWin <= height; ++r)
    for (int c = 0; c + kWin <= width; ++c) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      for (int dy = 0; dy < kWin; ++dy)
        for (int dx = 0; dx < kWin; ++dx) {
          double x = recon[static_cast<std::size_t>(r + dy) * width + (c + dx)];
          double y = reference[static_cast<std::size_t>(r + dy) * width + (c + dx)];
          sx += x;
          sy += y;
          sxx += x * x;
          syy += y * y;
          sxy += x * y;
        }
      double mx = sx * inv_n, my = sy * inv_n;
      double vx = sxx * inv_n - mx * mx;
      double vy = syy * inv_n - my * my;
      double cov = sxy * inv_n - mx * my;
      double score = ((2 * mx * my + c1) * (2 * cov + c2)) /
                     ((mx * mx + my * my + c1) * (vx + vy + c2));
      total += score;
      ++count;
    }
  return total / static_cast<double>(count);
}

BandMetrics kspace_band_metrics(const ComplexImage& recon, const ComplexImage& reference,
                                double low_fraction) {
  require(recon.same_shape(reference), ErrorKind::Shape,
          std::string(kWhere) + "::kspace_band_metrics", "shape mismatch");

  auto split_r = band_split(fft2c(recon), low_fraction);
  auto split_g = band_split(fft2c(reference), low_fraction);
  ComplexImage low_r = ifft2c(split_r.low), low_g = ifft2c(split_g.low);
  ComplexImage high_r = ifft2c(split_r.high), high_g = ifft2c(split_g.high);

  const std::vector<double> ref_mag = magnitude(reference);
  const double data_range = *std::max_element(ref_mag.begin(), ref_mag.end());

  BandMetrics out;
  out.low_mse = mse_real_pair(low_r.data, low_g.data);
  out.high_mse = mse_real_pair(high_r.data, high_g.data);
  out.total_mse = mse_real_pair(recon.data, reference.data);
  out.low_psnr = psnr(magnitude(low_r), magnitude(low_g), data_range);
  out.high_psnr = psnr(magnitude(high_r), magnitude(high_g), data_range);
  return out;
}

}  // namespace reconformer
