#pragma once

// Shared test utilities: deterministic RNG and the slow reference
// implementations ("oracles") the fast paths are checked against. These
// stay independent of the library's production code paths.

#include "mpid/core.hpp"

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>

namespace testsupport {

// Minimal xorshift-based generator so expected values never depend on
// the standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next_u64() {
    std::uint64_t x = state_;
    x ^= x >> 12;
    x ^= x << 25;
    x ^= x >> 27;
    state_ = x;
    return x * 0x2545f4914f6cdd1dull;
  }

  // uniform in [0,1)
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  double normal() {
    double u1 = 0.0;
    while (u1 <= 1e-300) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t state_;
};

inline mpid::Image random_image(Rng& rng, mpid::Index rows, mpid::Index cols,
                                double lo = 0.0, double hi = 1.0) {
  mpid::Image img(rows, cols);
  for (mpid::Index r = 0; r < rows; ++r)
    for (mpid::Index c = 0; c < cols; ++c) img(r, c) = rng.uniform(lo, hi);
  return img;
}

// O(n^4) direct DFT, unnormalized forward.
inline mpid::Spectrum dft2_oracle(const mpid::Image& img) {
  using namespace std::complex_literals;
  const mpid::Index h = img.rows(), w = img.cols();
  mpid::Spectrum out(h, w);
  for (mpid::Index u = 0; u < h; ++u) {
    for (mpid::Index v = 0; v < w; ++v) {
      std::complex<double> acc = 0.0;
      for (mpid::Index y = 0; y < h; ++y) {
        for (mpid::Index x = 0; x < w; ++x) {
          const double phase =
              -2.0 * std::numbers::pi *
              (static_cast<double>(u * y) / static_cast<double>(h) +
               static_cast<double>(v * x) / static_cast<double>(w));
          acc += img(y, x) * std::exp(1i * phase);
        }
      }
      out(u, v) = acc;
    }
  }
  return out;
}

// Naive same-extent true convolution with replicate boundary.
inline mpid::Image conv_same_oracle(const mpid::Image& img,
                                    const mpid::Image& taps) {
  const mpid::Index h = img.rows(), w = img.cols();
  const mpid::Index k = taps.rows(), r = k / 2;
  mpid::Image out(h, w);
  for (mpid::Index y = 0; y < h; ++y) {
    for (mpid::Index x = 0; x < w; ++x) {
      double acc = 0.0;
      for (mpid::Index i = 0; i < k; ++i) {
        for (mpid::Index j = 0; j < k; ++j) {
          const mpid::Index sy = std::clamp<mpid::Index>(y - (i - r), 0, h - 1);
          const mpid::Index sx = std::clamp<mpid::Index>(x - (j - r), 0, w - 1);
          acc += taps(i, j) * img(sy, sx);
        }
      }
      out(y, x) = acc;
    }
  }
  return out;
}

inline double max_abs_diff(const mpid::Image& a, const mpid::Image& b) {
  return (a - b).abs().maxCoeff();
}

// Anti-aliased disc coverage on an odd k x k support, 16x16 subsamples.
// side: 0 = full disc, -1 = left half (x <= 0), +1 = right half (x >= 0).
inline mpid::Image raster_disc_oracle(mpid::Index extent, double radius,
                                      int side = 0) {
  const mpid::Index r = extent / 2;
  mpid::Image out = mpid::Image::Zero(extent, extent);
  const int ss = 16;
  for (mpid::Index i = 0; i < extent; ++i) {
    for (mpid::Index j = 0; j < extent; ++j) {
      int hit = 0;
      for (int a = 0; a < ss; ++a) {
        for (int b = 0; b < ss; ++b) {
          const double y = static_cast<double>(i - r) +
                           (a + 0.5) / static_cast<double>(ss) - 0.5;
          const double x = static_cast<double>(j - r) +
                           (b + 0.5) / static_cast<double>(ss) - 0.5;
          if (x * x + y * y > radius * radius) continue;
          if (side < 0 && x > 0.0) continue;
          if (side > 0 && x <= 0.0) continue;
          ++hit;
        }
      }
      out(i, j) = static_cast<double>(hit) / static_cast<double>(ss * ss);
    }
  }
  return out;
}

}  // namespace testsupport
