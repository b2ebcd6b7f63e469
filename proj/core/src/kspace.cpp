#include "reconformer/kspace.hpp"

#include <cmath>
#include <complex>
#include <unordered_map>

#include "reconformer/finite.hpp"
#include "reconformer/rng.hpp"

namespace reconformer {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// Roots of unity exp(-2*pi*i*j/n) for j < n/2, cached per length.
const std::vector<std::complex<double>>& root_table(int n) {
  thread_local std::unordered_map<int, std::vector<std::complex<double>>> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::vector<std::complex<double>> roots(n / 2);
  for (int j = 0; j < n / 2; ++j) {
    double a = -2.0 * kPi * j / n;
    roots[j] = {std::cos(a), std::sin(a)};
  }
  return cache.emplace(n, std::move(roots)).first->second;
}

// Iterative radix-2 Cooley-Tukey, unnormalized. inverse=true conjugates the
// twiddles (still unnormalized).
template <typename S>
void fft_pow2(std::complex<S>* a, int n, bool inverse) {
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j |= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  const auto& roots = root_table(n);
  for (int len = 2; len <= n; len <<= 1) {
    int stride = n / len;
    for (int i = 0; i < n; i += len) {
      for (int j = 0; j < len / 2; ++j) {
        std::complex<double> w = roots[static_cast<std::size_t>(j) * stride];
        if (inverse) w = std::conj(w);
        std::complex<double> u(a[i + j]);
        std::complex<double> v = std::complex<double>(a[i + j + len / 2]) * w;
        a[i + j] = std::complex<S>(u + v);
        a[i + j + len / 2] = std::complex<S>(u - v);
      }
    }
  }
}

// O(n^2) fallback for non-power-of-two lengths.
template <typename S>
void dft_naive(std::complex<S>* a, int n, bool inverse) {
  std::vector<std::complex<double>> out(n);
  double sign = inverse ? 1.0 : -1.0;
  for (int k = 0; k < n; ++k) {
    std::complex<double> acc(0, 0);
    for (int j = 0; j < n; ++j) {
      double ang = sign * 2.0 * kPi * k * j / n;
      acc += std::complex<double>(a[j]) * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = acc;
  }
  for (int k = 0; k < n; ++k) a[k] = std::complex<S>(out[k]);
}

template <typename S>
void fft_1d(std::complex<S>* a, int n, bool inverse) {
  if (n == 1) return;
  if (is_pow2(n))
    fft_pow2(a, n, inverse);
  else
    dft_naive(a, n, inverse);
}

}  // namespace

template <typename S>
void fft2c_raw(int height, int width, const S* in, S* out, bool inverse) {
  const int h2 = (height + 1) / 2, w2 = (width + 1) / 2;  // ifftshift offsets
  std::vector<std::complex<S>> buf(static_cast<std::size_t>(height) * width);
  for (int r = 0; r < height; ++r) {
    int sr = (r + h2) % height;
    for (int c = 0; c < width; ++c) {
      int sc = (c + w2) % width;
      const S* p = in + (static_cast<std::size_t>(r) * width + c) * 2;
      buf[static_cast<std::size_t>(sr) * width + sc] = {p[0], p[1]};
    }
  }
  for (int r = 0; r < height; ++r) fft_1d(buf.data() + static_cast<std::size_t>(r) * width, width, inverse);
  std::vector<std::complex<S>> col(height);
  for (int c = 0; c < width; ++c) {
    for (int r = 0; r < height; ++r) col[r] = buf[static_cast<std::size_t>(r) * width + c];
    fft_1d(col.data(), height, inverse);
    for (int r = 0; r < height; ++r) buf[static_cast<std::size_t>(r) * width + c] = col[r];
  }
  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(height) * width));
  const int fh = height / 2, fw = width / 2;  // fftshift offsets
  for (int r = 0; r < height; ++r) {
    int dr = (r + fh) % height;
    for (int c = 0; c < width; ++c) {
      int dc = (c + fw) % width;
      std::complex<S> v = buf[static_cast<std::size_t>(r) * width + c];
      S* p = out + (static_cast<std::size_t>(dr) * width + dc) * 2;
      p[0] = v.real() * scale;
      p[1] = v.imag() * scale;
    }
  }
}

template <typename S>
KSpaceT<S> fft2c(const ComplexImageT<S>& img) {
  require(all_finite(img.data.data(), img.data.size()), ErrorKind::Domain, "kspace-core::fft2c",
          "non-finite input");
  KSpaceT<S> k(img.height, img.width);
  fft2c_raw(img.height, img.width, img.data.data(), k.data.data(), false);
  return k;
}

template <typename S>
ComplexImageT<S> ifft2c(const KSpaceT<S>& k) {
  require(all_finite(k.data.data(), k.data.size()), ErrorKind::Domain, "kspace-core::ifft2c",
          "non-finite input");
  ComplexImageT<S> img(k.height, k.width);
  fft2c_raw(k.height, k.width, k.data.data(), img.data.data(), true);
  return img;
}

int SamplingMask::sampled_count() const {
  int n = 0;
  for (auto v : columns_sampled) n += v != 0;
  return n;
}

SamplingMask make_cartesian_mask(int width, double acceleration_factor, double center_fraction,
                                 std::uint64_t seed) {
  const char* where = "kspace-core::make_cartesian_mask";
  require(width >= 1, ErrorKind::Config, where, "width must be positive");
  require(acceleration_factor > 1.0, ErrorKind::Config, where, "acceleration factor must exceed 1");
  require(center_fraction > 0.0 && center_fraction <= 1.0, ErrorKind::Config, where,
          "center_fraction must be in (0, 1]");

  SamplingMask mask;
  mask.width = width;
  mask.acceleration_factor = acceleration_factor;
  mask.center_fraction = center_fraction;
  mask.seed = seed;
  mask.columns_sampled.assign(width, 0);

  int block = static_cast<int>(std::floor(center_fraction * width));
  if (block < 1) block = 1;
  if (block >= width) {  // degenerate full sampling, effective af = 1
    mask.columns_sampled.assign(width, 1);
    return mask;
  }
  require(acceleration_factor * center_fraction < 1.0, ErrorKind::Config, where,
          "af * center_fraction must stay below 1");

  const int start = (width - block) / 2;
  for (int c = start; c < start + block; ++c) mask.columns_sampled[c] = 1;

  const double p =
      (width / acceleration_factor - center_fraction * width) / (width - center_fraction * width);
  Rng rng(seed);
  for (int c = 0; c < width; ++c) {
    if (c >= start && c < start + block) continue;
    if (rng.next_unit() < p) mask.columns_sampled[c] = 1;
  }
  return mask;
}

template <typename S>
KSpaceT<S> forward_model(const ComplexImageT<S>& y, const SamplingMask& mask, double noise_sigma,
                         std::uint64_t seed) {
  const char* where = "kspace-core::forward_model";
  require(noise_sigma >= 0.0, ErrorKind::Config, where, "noise_sigma must be non-negative");
  require(mask.width == y.width, ErrorKind::Shape, where, "mask width != image width");

  KSpaceT<S> x = fft2c(y);
  if (noise_sigma > 0.0) {
    Rng rng(seed);
    for (std::size_t i = 0; i < x.data.size(); ++i)
      x.data[i] += static_cast<S>(noise_sigma * rng.next_gauss());
  }
  for (int r = 0; r < x.height; ++r)
    for (int c = 0; c < x.width; ++c)
      if (!mask.sampled(c)) x.re(r, c) = x.im(r, c) = S(0);
  return x;
}

template <typename S>
ComplexImageT<S> zero_fill(const KSpaceT<S>& x, const SamplingMask& mask) {
  require(mask.width == x.width, ErrorKind::Shape, "kspace-core::zero_fill",
          "mask width != k-space width");
  KSpaceT<S> masked = x;
  for (int r = 0; r < x.height; ++r)
    for (int c = 0; c < x.width; ++c)
      if (!mask.sampled(c)) masked.re(r, c) = masked.im(r, c) = S(0);
  return ifft2c(masked);
}

template <typename S>
ComplexImageT<S> data_consistency(const ComplexImageT<S>& img, const KSpaceT<S>& x,
                                  const SamplingMask& mask) {
  const char* where = "kspace-core::data_consistency";
  require(img.height == x.height && img.width == x.width, ErrorKind::Shape, where,
          "image and k-space shapes differ");
  require(mask.width == x.width, ErrorKind::Shape, where, "mask width != k-space width");

  KSpaceT<S> k = fft2c(img);
  for (int r = 0; r < k.height; ++r)
    for (int c = 0; c < k.width; ++c)
      if (mask.sampled(c)) {
        k.re(r, c) = x.re(r, c);
        k.im(r, c) = x.im(r, c);
      }
  return ifft2c(k);
}

template <typename S>
BandSplitT<S> band_split(const KSpaceT<S>& k, double low_fraction) {
  require(low_fraction > 0.0 && low_fraction <= 1.0, ErrorKind::Config, "kspace-core::band_split",
          "low_fraction must be in (0, 1]");
  const int bh = static_cast<int>(std::floor(low_fraction * k.height));
  const int bw = static_cast<int>(std::floor(low_fraction * k.width));
  const int r0 = k.height / 2 - bh / 2;
  const int c0 = k.width / 2 - bw / 2;

  BandSplitT<S> out{KSpaceT<S>(k.height, k.width), KSpaceT<S>(k.height, k.width)};
  for (int r = 0; r < k.height; ++r)
    for (int c = 0; c < k.width; ++c) {
      bool in_low = r >= r0 && r < r0 + bh && c >= c0 && c < c0 + bw;
      KSpaceT<S>& dst = in_low ? out.low : out.high;
      dst.re(r, c) = k.re(r, c);
      dst.im(r, c) = k.im(r, c);
    }
  return out;
}

template void fft2c_raw<float>(int, int, const float*, float*, bool);
template void fft2c_raw<double>(int, int, const double*, double*, bool);
template KSpaceT<float> fft2c(const ComplexImageT<float>&);
template KSpaceT<double> fft2c(const ComplexImageT<double>&);
template ComplexImageT<float> ifft2c(const KSpaceT<float>&);
template ComplexImageT<double> ifft2c(const KSpaceT<double>&);
template KSpaceT<float> forward_model(const ComplexImageT<float>&, const SamplingMask&, double,
                                      std::uint64_t);
template KSpaceT<double> forward_model(const ComplexImageT<double>&, const SamplingMask&, double,
                                       std::uint64_t);
template ComplexImageT<float> zero_fill(const KSpaceT<float>&, const SamplingMask&);
template ComplexImageT<double> zero_fill(const KSpaceT<double>&, const SamplingMask&);
template ComplexImageT<float> data_consistency(const ComplexImageT<float>&, const KSpaceT<float>&,
                                               const SamplingMask&);
template ComplexImageT<double> data_consistency(const ComplexImageT<double>&,
                                                const KSpaceT<double>&, const SamplingMask&);
template BandSplitT<float> band_split(const KSpaceT<float>&, double);
template BandSplitT<double> band_split(const KSpaceT<double>&, double);

}  // namespace reconformer
