#pragma once

#include "mpid/core.hpp"

#include <filesystem>

namespace mpid {

// Normalized 2-D blur kernel: odd square extent, non-negative taps
// summing to one. Construction normalizes; invalid taps throw.
class Kernel {
 public:
  Kernel() : taps_(Image::Ones(1, 1)) {}
  explicit Kernel(Image taps);

  static Kernel identity() { return Kernel(); }

  const Image& taps() const { return taps_; }
  Index extent() const { return taps_.rows(); }
  Index radius() const { return taps_.rows() / 2; }

 private:
  Image taps_;
};

// Unnormalized forward DFT of the zero-padded input.
Spectrum fft2(const Image& img, Index pad_rows, Index pad_cols);
Spectrum fft2(const Image& img);

// Inverse of fft2 (real part), scaled by 1/(rows*cols).
Image ifft2(const Spectrum& spec);

// Replicate-extend crop: reads img at clamped coordinates. The window
// may extend past any border; (row0,col0) may be negative.
Image gather_replicate(const Image& img, Index row0, Index col0, Index rows,
                       Index cols);

// Pre-planned convolution kernel. Holds FFT spectra when the kernel is
// large enough to take the frequency path; both the forward kernel and
// its 180-degree flip (adjoint) are cached for a fixed patch size.
struct ConvPlan {
  Image taps;
  Index patch_rows = 0, patch_cols = 0;  // full-overlap input extents
  bool use_fft = false;
  Index fft_rows = 0, fft_cols = 0;
  Spectrum khat;      // FFT of taps at origin
  Spectrum khat_adj;  // FFT of flipped taps at origin
};

// Spatial path for taps up to 9x9, FFT path above.
ConvPlan plan_conv(Image taps, Index patch_rows, Index patch_cols);

// True convolution, full-overlap ("valid") output:
// out(y,x) = sum_{i,j} taps(i,j) * patch(y + k-1 - i, x + k-1 - j).
Image conv_valid(const Image& patch, const ConvPlan& plan);
Image conv_valid(const Image& patch, const Image& taps);

// Adjoint of conv_valid w.r.t. the patch: full linear convolution of the
// output-gradient with the flipped taps. Result has patch extents.
Image conv_valid_adjoint(const Image& out_grad, const ConvPlan& plan);

// Same-extent true convolution with replicate boundary handling.
Image convolve_same(const Image& img, const Kernel& k);

// Force one path regardless of kernel extent (path-agreement tests).
Image convolve_same_spatial(const Image& img, const Kernel& k);
Image convolve_same_fft(const Image& img, const Kernel& k);

// Corner-aligned bilinear resampling; constants map to constants.
Image resample_bilinear(const Image& img, Index new_rows, Index new_cols);

// Fixed 3x3 binomial blur [[1,2,1],[2,4,2],[1,2,1]]/16 with replicate
// boundary; the windowed-statistics substrate of the smoothness terms.
Image gaussian3_blur(const Image& img);
const Image& gaussian3_taps();

// IMG1 container: magic "MPIDIMG1", little-endian u32 height, u32 width,
// then height*width f64 row-major.
void save_image(const std::filesystem::path& path, const Image& img);
Image load_image(const std::filesystem::path& path);

// IMG1 block embedded in a larger stream (checkpoint files).
void write_image_block(std::ostream& os, const Image& img);
Image read_image_block(std::istream& is);

}  // namespace mpid
