#include "doctest.h"

#include "mpid/noisebias.hpp"
#include "support.hpp"

#include <complex>

using namespace mpid;
using testsupport::Rng;

namespace {

Spectrum random_spectrum(Rng& rng, Index rows, Index cols, double scale) {
  Spectrum s(rows, cols);
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r)
      s(r, c) = std::complex<double>(rng.uniform(-scale, scale),
                                     rng.uniform(-scale, scale));
  return s;
}

Kernel half_disc(double d, int side) {
  if (d <= 1.0) return Kernel::identity();
  const Index ext = 2 * static_cast<Index>(std::ceil((d - 1.0) / 2.0)) + 1;
  return Kernel(testsupport::raster_disc_oracle(ext, (d - 1.0) / 2.0, side));
}

// The artifact's scalable kernel family: a large calibrated reference
// resized to each hypothesis.
struct DiscFamily {
  Kernel ref_left = half_disc(59.0, -1);
  Kernel ref_right = half_disc(59.0, 1);
  Kernel left(double d) const { return scale_kernel(ref_left, 59.0, d); }
  Kernel right(double d) const { return scale_kernel(ref_right, 59.0, d); }
};

// Per-bin quadratic energy minimized numerically through central
// differences; independent of the closed-form solution path.
std::complex<double> minimize_bin(std::complex<double> il,
                                  std::complex<double> ir,
                                  std::complex<double> kl,
                                  std::complex<double> kr, double reg) {
  auto energy = [&](double x, double y) {
    const std::complex<double> c(x, y);
    return std::norm(kl * c - il) + std::norm(kr * c - ir) + reg * std::norm(c);
  };
  // The energy is exactly quadratic, so a large step carries no
  // truncation error and avoids cancellation noise.
  const double h = 0.25;
  const double e0 = energy(0, 0);
  const double gx = (energy(h, 0) - energy(-h, 0)) / (2 * h);
  const double gy = (energy(0, h) - energy(0, -h)) / (2 * h);
  const double hxx = (energy(h, 0) - 2 * e0 + energy(-h, 0)) / (h * h);
  const double hyy = (energy(0, h) - 2 * e0 + energy(0, -h)) / (h * h);
  const double hxy = (energy(h, h) - energy(h, -h) - energy(-h, h) +
                      energy(-h, -h)) /
                     (4 * h * h);
  const double det = hxx * hyy - hxy * hxy;
  const double x = (-gx * hyy + gy * hxy) / det;
  const double y = (-gy * hxx + gx * hxy) / det;
  return {x, y};
}

}  // namespace

TEST_CASE("wiener_two_obs averages the observations under delta kernels") {
  Rng rng(61);
  Spectrum il = random_spectrum(rng, 8, 8, 1.0);
  Spectrum ir = random_spectrum(rng, 8, 8, 1.0);
  Spectrum ones = Spectrum::Constant(8, 8, 1.0);
  PriorSpec prior;
  prior.sigma2 = 1e-12;
  prior.phi2 = 1.0;
  Spectrum c = wiener_two_obs(il, ir, ones, ones, prior);
  Spectrum expect = 0.5 * (il + ir);
  CHECK((c - expect).abs().maxCoeff() < 1e-9);
}

TEST_CASE("wiener_two_obs of zero observations is zero") {
  Spectrum z = Spectrum::Zero(6, 6);
  Spectrum ones = Spectrum::Constant(6, 6, 1.0);
  PriorSpec prior;
  Spectrum c = wiener_two_obs(z, z, ones, ones, prior);
  CHECK(c.abs().maxCoeff() == 0.0);
}

TEST_CASE("wiener_two_obs matches per-bin numerical minimization") {
  Rng rng(62);
  const Index n = 16;
  Spectrum il = random_spectrum(rng, n, n, 1.0);
  Spectrum ir = random_spectrum(rng, n, n, 1.0);
  Spectrum kl = random_spectrum(rng, n, n, 0.8);
  Spectrum kr = random_spectrum(rng, n, n, 0.8);
  PriorSpec prior;
  prior.sigma2 = 2e-3;
  prior.phi2 = 50.0;
  Spectrum fast = wiener_two_obs(il, ir, kl, kr, prior);
  for (Index c = 0; c < n; ++c) {
    for (Index r = 0; r < n; ++r) {
      auto slow = minimize_bin(il(r, c), ir(r, c), kl(r, c), kr(r, c),
                               prior.sigma2 * prior.phi2);
      CHECK(std::abs(fast(r, c) - slow) < 1e-8);
    }
  }
}

TEST_CASE("wiener_two_obs reduces to single-observation form when K_r = 0") {
  Rng rng(63);
  Spectrum il = random_spectrum(rng, 8, 8, 1.0);
  Spectrum ir = random_spectrum(rng, 8, 8, 1.0);
  Spectrum kl = random_spectrum(rng, 8, 8, 1.0);
  Spectrum kzero = Spectrum::Zero(8, 8);
  PriorSpec prior;
  prior.sigma2 = 1e-3;
  prior.phi2 = 10.0;
  Spectrum c = wiener_two_obs(il, ir, kl, kzero, prior);
  Spectrum expect =
      il * kl.conjugate() /
      (kl.abs2() + prior.sigma2 * prior.phi2).cast<std::complex<double>>();
  CHECK((c - expect).abs().maxCoeff() < 1e-12);
}

TEST_CASE("wiener_two_obs rejects a vanishing prior") {
  Spectrum z = Spectrum::Zero(4, 4);
  PriorSpec prior;
  prior.sigma2 = 0.0;
  CHECK_THROWS(wiener_two_obs(z, z, z, z, prior));
}

TEST_CASE("kernel_spectrum of a delta is the all-ones spectrum") {
  Spectrum s = kernel_spectrum(Kernel::identity(), 16, 16);
  CHECK((s - std::complex<double>(1.0, 0.0)).abs().maxCoeff() < 1e-12);
}

TEST_CASE("expected_energy vanishes for the true hypothesis at sigma 0") {
  DiscFamily fam;
  PriorSpec zero;
  zero.sigma2 = 0.0;
  Kernel tl = fam.left(17.0), tr = fam.right(17.0);
  CHECK(expected_energy(tl, tr, tl, tr, zero, 64, 64) == 0.0);
}

TEST_CASE("noiseless energy sweep recovers the true defocus exactly") {
  DiscFamily fam;
  PriorSpec zero;
  zero.sigma2 = 0.0;
  for (double dt : {5.0, 11.0}) {
    Kernel tl = fam.left(dt), tr = fam.right(dt);
    double best = 1e300;
    double arg = -1.0;
    for (double d = 1.0; d <= 16.001; d += 1.0) {
      const double e =
          expected_energy(fam.left(d), fam.right(d), tl, tr, zero, 32, 32);
      if (e < best) {
        best = e;
        arg = d;
      }
    }
    CHECK(arg == dt);
  }
}

TEST_CASE("noise biases the energy argmin toward smaller defocus") {
  DiscFamily fam;
  PriorSpec prior;  // paper values: sigma2 5e-5, phi2 100
  const double dt = 32.0;
  Kernel tl = fam.left(dt), tr = fam.right(dt);
  double best = 1e300;
  double arg = -1.0;
  for (double d = 1.0; d <= 59.001; d += 1.0) {
    const double e =
        expected_energy(fam.left(d), fam.right(d), tl, tr, prior, 128, 128);
    if (e < best) {
      best = e;
      arg = d;
    }
  }
  CHECK(arg < dt);
}

TEST_CASE("expected_energy is symmetric under swapping the view labels") {
  DiscFamily fam;
  PriorSpec prior;
  Kernel hl = fam.left(9.0), hr = fam.right(9.0);
  Kernel tl = fam.left(13.0), tr = fam.right(13.0);
  const double a = expected_energy(hl, hr, tl, tr, prior, 64, 64);
  const double b = expected_energy(hr, hl, tr, tl, prior, 64, 64);
  CHECK(a == doctest::Approx(b).epsilon(1e-12));
}

TEST_CASE("bias_term closed forms") {
  Kernel id = Kernel::identity();
  SUBCASE("sigma 0 gives zero bias") {
    PriorSpec zero;
    zero.sigma2 = 0.0;
    CHECK(bias_term(id, id, zero, 32, 32) == 0.0);
  }
  SUBCASE("delta kernels give the closed form") {
    PriorSpec prior;
    prior.sigma2 = 3e-4;
    prior.phi2 = 25.0;
    const double reg = prior.sigma2 * prior.phi2;
    const double expect = prior.sigma2 * reg / (2.0 + reg);
    CHECK(bias_term(id, id, prior, 32, 32) ==
          doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("bias_term grows with defocus size on the disc family") {
  DiscFamily fam;
  PriorSpec prior;
  double prev = -1.0;
  for (double d : {1.0, 5.0, 9.0, 17.0, 25.0, 33.0, 41.0, 49.0, 59.0}) {
    const double b = bias_term(fam.left(d), fam.right(d), prior, 128, 128);
    CHECK(b >= prev);
    prev = b;
  }
}

TEST_CASE("bias_term is stable against larger spectral extents") {
  DiscFamily fam;
  PriorSpec prior;
  for (double d : {9.0, 33.0}) {
    const double b128 = bias_term(fam.left(d), fam.right(d), prior, 128, 128);
    const double b256 = bias_term(fam.left(d), fam.right(d), prior, 256, 256);
    CHECK(std::abs(b256 - b128) / b128 < 0.01);
  }
}

namespace {

KernelGrid uniform_grid(const Kernel& k, double ref, View v) {
  std::vector<Kernel> cells(48, k);
  return KernelGrid(std::move(cells), ref, v, 128, 128);
}

}  // namespace

TEST_CASE("build_bias_table per-layer values") {
  DiscFamily fam;
  KernelGrid left = uniform_grid(fam.ref_left, 59.0, View::left);
  KernelGrid right = uniform_grid(fam.ref_right, 59.0, View::right);

  SUBCASE("tiny sizes collapse to the delta closed form") {
    PriorSpec prior;
    BiasTable t = build_bias_table({1e-4, 1e-5, 1e-6}, left, right, prior);
    const double reg = prior.sigma2 * prior.phi2;
    const double expect = prior.sigma2 * reg / (2.0 + reg);
    for (double v : t.values) CHECK(v == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("paper-sized table decreases from back to front") {
    PriorSpec prior;
    std::vector<double> sizes;
    for (Index i = 0; i < 12; ++i)
      sizes.push_back(59.0 + static_cast<double>(i) * (1.0 - 59.0) / 11.0);
    BiasTable t = build_bias_table(sizes, left, right, prior);
    for (std::size_t i = 0; i + 1 < t.values.size(); ++i)
      CHECK(t.values[i] >= t.values[i + 1]);
    CHECK(t.values.front() > t.values.back());
  }
  SUBCASE("zero noise zeroes the table") {
    PriorSpec prior;
    prior.sigma2 = 0.0;
    BiasTable t = build_bias_table({31.0, 17.0, 5.0}, left, right, prior);
    for (double v : t.values) CHECK(v == 0.0);
  }
}

TEST_CASE("subtracting the bias never shrinks the energy argmin") {
  DiscFamily fam;
  PriorSpec prior;
  const Index ext = 128;
  for (double dt : {8.0, 16.0, 32.0}) {
    Kernel tl = fam.left(dt), tr = fam.right(dt);
    double best_u = 1e300, best_c = 1e300, arg_u = -1, arg_c = -1;
    for (double d = 1.0; d <= 59.001; d += 1.0) {
      Kernel hl = fam.left(d), hr = fam.right(d);
      const double e = expected_energy(hl, hr, tl, tr, prior, ext, ext);
      const double b = bias_term(hl, hr, prior, ext, ext) *
                       static_cast<double>(ext * ext);
      if (e < best_u) {
        best_u = e;
        arg_u = d;
      }
      if (e - b < best_c) {
        best_c = e - b;
        arg_c = d;
      }
    }
    CHECK(arg_u <= arg_c);
    CHECK(std::abs(arg_c - dt) <= 1.0);  // corrected recovery within one step
  }
}
