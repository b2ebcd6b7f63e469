#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "reconformer/kspace.hpp"

namespace reconformer {

// PSNR with an "identical" sentinel for MSE = 0.
struct PsnrResult {
  double db = 0.0;
  bool identical = false;

  std::string str() const;
};

template <typename S, typename Tag>
std::vector<double> magnitude(const ComplexField<S, Tag>& field) {
  std::vector<double> out(field.data.size() / 2);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double re = field.data[2 * i], im = field.data[2 * i + 1];
    out[i] = std::sqrt(re * re + im * im);
  }
  return out;
}

// 10 log10(data_range^2 / MSE); domain error on zero data_range.
PsnrResult psnr(const std::vector<double>& recon, const std::vector<double>& reference,
                double data_range);

// Mean local SSIM: 7x7 uniform window, K1 = 0.01, K2 = 0.03, population
// statistics, averaged over positions where the window lies fully inside.
double ssim(const std::vector<double>& recon, const std::vector<double>& reference, int height,
            int width, double data_range);

// Frequency-band comparison of two complex images: each is split at
// low_fraction in k-space, transformed back, and scored per band. The MSE
// fields are over the two real channels, so low + high equals the full MSE.
struct BandMetrics {
  PsnrResult low_psnr, high_psnr;
  double low_mse = 0.0, high_mse = 0.0, total_mse = 0.0;
};

BandMetrics kspace_band_metrics(const ComplexImage& recon, const ComplexImage& reference,
                                double low_fraction = 1.0 / 3.0);

}  // namespace reconformer
