#include "mpid/noisebias.hpp"

namespace mpid {

void validate(const PriorSpec& prior) {
  require(prior.sigma2 >= 0.0, "PriorSpec: sigma2 must be >= 0");
  require(prior.phi2 > 0.0, "PriorSpec: phi2 must be > 0");
}

Spectrum kernel_spectrum(const Kernel& k, Index rows, Index cols) {
  require(k.extent() <= rows && k.extent() <= cols,
          "kernel_spectrum: kernel larger than the spectral extents");
  const Index r = k.radius();
  Image embedded = Image::Zero(rows, cols);
  for (Index i = 0; i < k.extent(); ++i) {
    for (Index j = 0; j < k.extent(); ++j) {
      const Index y = ((i - r) % rows + rows) % rows;
      const Index x = ((j - r) % cols + cols) % cols;
      embedded(y, x) += k.taps()(i, j);
    }
  }
  return fft2(embedded);
}

Spectrum wiener_two_obs(const Spectrum& obs_left, const Spectrum& obs_right,
                        const Spectrum& k_left, const Spectrum& k_right,
                        const PriorSpec& prior) {
  validate(prior);
  require(prior.sigma2 * prior.phi2 > 0.0,
          "wiener_two_obs: sigma2 * phi2 must be positive");
  require(obs_left.rows() == obs_right.rows() &&
              obs_left.rows() == k_left.rows() &&
              obs_left.rows() == k_right.rows() &&
              obs_left.cols() == obs_right.cols() &&
              obs_left.cols() == k_left.cols() &&
              obs_left.cols() == k_right.cols(),
          "wiener_two_obs: spectral extents differ");
  Spectrum num = obs_left * k_left.conjugate() + obs_right * k_right.conjugate();
  Image den =
      k_left.abs2() + k_right.abs2() + prior.sigma2 * prior.phi2;
  return num / den.cast<std::complex<double>>();
}

double expected_energy(const Kernel& hyp_left, const Kernel& hyp_right,
                       const Kernel& true_left, const Kernel& true_right,
                       const PriorSpec& prior, Index rows, Index cols) {
  validate(prior);
  Spectrum kh_l = kernel_spectrum(hyp_left, rows, cols);
  Spectrum kh_r = kernel_spectrum(hyp_right, rows, cols);
  Spectrum kt_l = kernel_spectrum(true_left, rows, cols);
  Spectrum kt_r = kernel_spectrum(true_right, rows, cols);

  const double reg = prior.sigma2 * prior.phi2;
  double first = 0.0, second = 0.0;
  for (Index c = 0; c < cols; ++c) {
    for (Index r = 0; r < rows; ++r) {
      const double b = std::norm(kh_l(r, c)) + std::norm(kh_r(r, c)) + reg;
      const double cross =
          std::norm(kt_l(r, c) * kh_r(r, c) - kt_r(r, c) * kh_l(r, c));
      if (b > 0.0) first += cross / (prior.phi2 * b);
      if (prior.sigma2 > 0.0) {
        const double power =
            std::norm(kt_l(r, c)) + std::norm(kt_r(r, c)) + reg;
        second += prior.sigma2 * (power / b + 1.0);
      }
    }
  }
  return first + second;
}

double bias_term(const Kernel& left_at_d, const Kernel& right_at_d,
                 const PriorSpec& prior, Index rows, Index cols) {
  validate(prior);
  if (prior.sigma2 == 0.0) return 0.0;
  Spectrum kl = kernel_spectrum(left_at_d, rows, cols);
  Spectrum kr = kernel_spectrum(right_at_d, rows, cols);
  const double reg = prior.sigma2 * prior.phi2;
  double acc = 0.0;
  for (Index c = 0; c < cols; ++c)
    for (Index r = 0; r < rows; ++r)
      acc += reg / (std::norm(kl(r, c)) + std::norm(kr(r, c)) + reg);
  return prior.sigma2 * acc / static_cast<double>(rows * cols);
}

BiasTable build_bias_table(const std::vector<double>& defocus_sizes,
                           const KernelGrid& left, const KernelGrid& right,
                           const PriorSpec& prior) {
  validate(prior);
  BiasTable table;
  table.values.resize(defocus_sizes.size());
  const double cx = 0.5 * static_cast<double>(left.coverage_cols());
  const double cy = 0.5 * static_cast<double>(left.coverage_rows());
  parallel_for(static_cast<Index>(defocus_sizes.size()), [&](Index i) {
    const double d = defocus_sizes[static_cast<std::size_t>(i)];
    Kernel kl = kernel_at(left, cx, cy, d);
    Kernel kr = kernel_at(right, 0.5 * right.coverage_cols(),
                          0.5 * right.coverage_rows(), d);
    table.values[static_cast<std::size_t>(i)] =
        bias_term(kl, kr, prior, kBiasSpectrumExtent, kBiasSpectrumExtent);
  });
  return table;
}

}  // namespace mpid
