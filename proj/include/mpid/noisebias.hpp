#pragma once

#include "mpid/kernels.hpp"

#include <vector>

namespace mpid {

// Gaussian-noise variance and the constant inverse spectral power used
// as the natural-image prior in the frequency-domain analysis.
struct PriorSpec {
  double sigma2 = 5e-5;
  double phi2 = 100.0;
};

void validate(const PriorSpec& prior);

// Per-layer scalar bias corrections b(d_i), back to front.
struct BiasTable {
  std::vector<double> values;
};

// Kernel spectrum with the kernel's center placed at the origin, so
// kernels of different extents stay aligned and a delta transforms to
// the all-ones spectrum.
Spectrum kernel_spectrum(const Kernel& k, Index rows, Index cols);

// Generalized Wiener deconvolution with two observations:
//   c^ = (I_l conj(K_l) + I_r conj(K_r)) / (|K_l|^2 + |K_r|^2 + s2 phi2)
// Requires sigma2 * phi2 > 0 so the denominator cannot vanish.
Spectrum wiener_two_obs(const Spectrum& obs_left, const Spectrum& obs_right,
                        const Spectrum& k_left, const Spectrum& k_right,
                        const PriorSpec& prior);

// Expected residual energy of a defocus hypothesis given the true
// kernels, summed over all frequency bins of a rows x cols spectrum:
//   sum_f (1/phi2) |Kt_l Kh_r - Kt_r Kh_l|^2 / B
//   + sigma2 sum_f [ (|Kt_l|^2 + |Kt_r|^2 + sigma2 phi2) / B + 1 ]
// with B = |Kh_l|^2 + |Kh_r|^2 + sigma2 phi2 from the hypothesis pair.
double expected_energy(const Kernel& hyp_left, const Kernel& hyp_right,
                       const Kernel& true_left, const Kernel& true_right,
                       const PriorSpec& prior, Index rows, Index cols);

// Expected noise energy absorbed by the prior at this defocus,
// per pixel (the bin sum divided by the bin count):
//   b = sigma2 * mean_f [ sigma2 phi2 / (|K_l|^2 + |K_r|^2 + sigma2 phi2) ]
double bias_term(const Kernel& left_at_d, const Kernel& right_at_d,
                 const PriorSpec& prior, Index rows, Index cols);

// Spectral extents used for the per-layer bias table; larger extents
// move the values by well under a percent (tested).
inline constexpr Index kBiasSpectrumExtent = 128;

// Evaluates bias_term per layer with both views' kernels taken at the
// image center (the grid midpoint); one scalar per layer.
BiasTable build_bias_table(const std::vector<double>& defocus_sizes,
                           const KernelGrid& left, const KernelGrid& right,
                           const PriorSpec& prior);

}  // namespace mpid
