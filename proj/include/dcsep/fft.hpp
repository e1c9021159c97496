#pragma once

// Iterative radix-2 FFT. Sizes must be powers of two. A plan holds the
// twiddle table and bit-reversal permutation so repeated transforms of the
// same size do no trigonometry.

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <vector>

#include "dcsep/error.hpp"

namespace dcsep {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

class FftPlan {
 public:
  explicit FftPlan(std::size_t n) : n_(n), twiddle_(n / 2), rev_(n) {
    if (!is_power_of_two(n)) {
      throw ConfigError("FFT size must be a power of two, got " + std::to_string(n));
    }
    for (std::size_t k = 0; k < n / 2; ++k) {
      const double a = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
      twiddle_[k] = {std::cos(a), std::sin(a)};
    }
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) ++bits;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t r = 0;
      for (std::size_t b = 0; b < bits; ++b) {
        if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
      }
      rev_[i] = r;
    }
  }

  std::size_t size() const { return n_; }

  // In-place forward transform (e^{-i...}); inverse=true gives the
  // unnormalized conjugate transform.
  void transform(std::span<std::complex<double>> data, bool inverse = false) const {
    if (data.size() != n_) throw ShapeError("FFT buffer size mismatch");
    for (std::size_t i = 0; i < n_; ++i) {
      if (i < rev_[i]) std::swap(data[i], data[rev_[i]]);
    }
    for (std::size_t len = 2; len <= n_; len <<= 1) {
      const std::size_t half = len / 2;
      const std::size_t step = n_ / len;
      for (std::size_t start = 0; start < n_; start += len) {
        for (std::size_t k = 0; k < half; ++k) {
          std::complex<double> w = twiddle_[k * step];
          if (inverse) w = std::conj(w);
          const std::complex<double> u = data[start + k];
          const std::complex<double> v = data[start + k + half] * w;
          data[start + k] = u + v;
          data[start + k + half] = u - v;
        }
      }
    }
  }

  // One-sided spectrum (n/2+1 bins) of a real signal of length n.
  void rfft(std::span<const double> in, std::span<std::complex<double>> out) const {
    if (in.size() != n_ || out.size() != n_ / 2 + 1) throw ShapeError("rfft size mismatch");
    std::vector<std::complex<double>> buf(in.begin(), in.end());
    transform(buf);
    for (std::size_t k = 0; k <= n_ / 2; ++k) out[k] = buf[k];
  }

  // Real signal from a one-sided spectrum; Hermitian symmetry is assumed and
  // the imaginary residue of the inverse is discarded. Normalized by 1/n.
  void irfft(std::span<const std::complex<double>> in, std::span<double> out) const {
    if (in.size() != n_ / 2 + 1 || out.size() != n_) throw ShapeError("irfft size mismatch");
    std::vector<std::complex<double>> buf(n_);
    for (std::size_t k = 0; k <= n_ / 2; ++k) buf[k] = in[k];
    for (std::size_t k = n_ / 2 + 1; k < n_; ++k) buf[k] = std::conj(in[n_ - k]);
    transform(buf, true);
    const double scale = 1.0 / static_cast<double>(n_);
    for (std::size_t i = 0; i < n_; ++i) out[i] = buf[i].real() * scale;
  }

 private:
  std::size_t n_;
  std::vector<std::complex<double>> twiddle_;
  std::vector<std::size_t> rev_;
};

}  // namespace dcsep
