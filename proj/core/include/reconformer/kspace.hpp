#pragma once

#include <cstdint>
#include <vector>

#include "reconformer/errors.hpp"

namespace reconformer {

namespace detail {
struct image_tag;
struct kspace_tag;
}  // namespace detail

// H x W complex field stored as two real channels: data[(r*W + c)*2 + 0] is
// the real part, ... + 1 the imaginary part. The tag keeps image-domain and
// frequency-domain fields from mixing accidentally.
template <typename S, typename Tag>
struct ComplexField {
  int height = 0;
  int width = 0;
  std::vector<S> data;

  ComplexField() = default;
  ComplexField(int h, int w) : height(h), width(w) {
    require(h >= 1 && w >= 1, ErrorKind::Shape, "kspace-core::ComplexField", "degenerate extent");
    data.assign(static_cast<std::size_t>(h) * w * 2, S(0));
  }
  ComplexField(int h, int w, std::vector<S> values) : height(h), width(w), data(std::move(values)) {
    require(h >= 1 && w >= 1, ErrorKind::Shape, "kspace-core::ComplexField", "degenerate extent");
    require(data.size() == static_cast<std::size_t>(h) * w * 2, ErrorKind::Shape,
            "kspace-core::ComplexField", "data length != H*W*2");
  }

  S& re(int r, int c) { return data[(static_cast<std::size_t>(r) * width + c) * 2]; }
  S& im(int r, int c) { return data[(static_cast<std::size_t>(r) * width + c) * 2 + 1]; }
  S re(int r, int c) const { return data[(static_cast<std::size_t>(r) * width + c) * 2]; }
  S im(int r, int c) const { return data[(static_cast<std::size_t>(r) * width + c) * 2 + 1]; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const ComplexField& o) const { return height == o.height && width == o.width; }
};

template <typename S>
using ComplexImageT = ComplexField<S, detail::image_tag>;
template <typename S>
using KSpaceT = ComplexField<S, detail::kspace_tag>;

using ComplexImage = ComplexImageT<float>;
using KSpace = KSpaceT<float>;
using ComplexImage64 = ComplexImageT<double>;
using KSpace64 = KSpaceT<double>;

// Binary Cartesian column mask U. Expanding to H x W replicates the column
// pattern across every row.
struct SamplingMask {
  int width = 0;
  std::vector<std::uint8_t> columns_sampled;
  double acceleration_factor = 0.0;
  double center_fraction = 0.0;
  std::uint64_t seed = 0;

  bool sampled(int column) const { return columns_sampled[column] != 0; }
  int sampled_count() const;
};

// Centered orthonormal 2D DFT: spectrum shifted so the zero frequency lands at
// (H/2, W/2), scaled by 1/sqrt(H*W) in both directions so Parseval holds.
template <typename S>
KSpaceT<S> fft2c(const ComplexImageT<S>& img);

template <typename S>
ComplexImageT<S> ifft2c(const KSpaceT<S>& k);

// Low-level centered transform on an interleaved re/im buffer; used by the
// autodiff FFT nodes. `out` may not alias `in`.
template <typename S>
void fft2c_raw(int height, int width, const S* in, S* out, bool inverse);

// Variable-density Cartesian mask in the fastMRI style: a contiguous centered
// block of floor(center_fraction * W) columns (at least one) is always kept;
// every other column is kept independently with probability
//   p = (W/af - center_fraction*W) / (W - center_fraction*W),
// drawn in increasing column order from Rng(seed), sampled iff u < p.
SamplingMask make_cartesian_mask(int width, double acceleration_factor, double center_fraction,
                                 std::uint64_t seed);

// x = U o (fft2c(y) + eps). Noise is complex Gaussian per entry (independent
// N(0, sigma^2) on the real and imaginary parts), drawn row-major with the
// real draw first, then zeroed wherever U = 0.
template <typename S>
KSpaceT<S> forward_model(const ComplexImageT<S>& y, const SamplingMask& mask, double noise_sigma,
                         std::uint64_t seed);

// Zero-filled reconstruction ifft2c(U o x); masking is applied, not assumed.
template <typename S>
ComplexImageT<S> zero_fill(const KSpaceT<S>& x, const SamplingMask& mask);

// Hard data-consistency projection: F^-1[U x + (1-U) F img].
template <typename S>
ComplexImageT<S> data_consistency(const ComplexImageT<S>& img, const KSpaceT<S>& x,
                                  const SamplingMask& mask);

template <typename S>
struct BandSplitT {
  KSpaceT<S> low;
  KSpaceT<S> high;
};

// Splits a centered spectrum into the centered rectangle of side
// floor(low_fraction*H) x floor(low_fraction*W) and its complement.
// low + high == k exactly. low_fraction in (0, 1]; 1 is the degenerate
// all-low split.
template <typename S>
BandSplitT<S> band_split(const KSpaceT<S>& k, double low_fraction);

}  // namespace reconformer
