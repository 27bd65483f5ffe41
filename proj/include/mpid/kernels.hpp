#pragma once

#include "mpid/numerics.hpp"

#include <memory>
#include <vector>

namespace mpid {

enum class View { left, right };

// Calibrated spatially-varying blur kernels for one DP view: a fixed
// 8x6 (cols x rows) grid of cell kernels at a common reference defocus,
// spanning a coverage window in pixels. Defocus sizes are expressed as
// kernel extents in pixels; scaling to another size is linear in
// d_to/d_from. Only d >= 0 is supported (scene at or behind the focus
// plane); negative sizes are rejected wherever configs are read.
class KernelGrid {
 public:
  static constexpr Index kGridRows = 6;
  static constexpr Index kGridCols = 8;

  KernelGrid(std::vector<Kernel> cells_row_major, double reference_defocus,
             View view, Index coverage_rows, Index coverage_cols);

  const Kernel& cell(Index row, Index col) const;
  double reference_defocus() const { return reference_defocus_; }
  View view() const { return view_; }
  Index coverage_rows() const { return coverage_rows_; }
  Index coverage_cols() const { return coverage_cols_; }

  // Continuous center of a grid cell in pixel coordinates (x = col+0.5
  // scaled to coverage). Pixel (y,x) has center (x+0.5, y+0.5).
  double cell_center_x(Index col) const;
  double cell_center_y(Index row) const;

 private:
  std::vector<Kernel> cells_;
  double reference_defocus_;
  View view_;
  Index coverage_rows_, coverage_cols_;
};

// Per-view vignetting gains; strictly positive so division is safe.
struct VignettingField {
  Image left;
  Image right;
};

// Synthetic calibration pattern: circular discs on a dark background.
struct CalibTarget {
  std::vector<Eigen::Vector2d> disc_centers;  // (x, y) pixel coordinates
  double disc_radius = 0.0;
  Index rows = 0, cols = 0;
};

// Regular grid of discs, discs_per_cell_side^2 per kernel-grid cell;
// margin is validated against the target extents.
CalibTarget make_calib_target(Index rows, Index cols, double disc_radius,
                              double margin, int discs_per_cell_side = 1);

// Resizes a kernel's support by d_to/d_from about its center via
// bilinear box-overlap weights (zero outside the source support),
// re-centers to an odd extent and renormalizes. Collapses to the 1x1
// identity when the scaled support drops below one pixel.
Kernel scale_kernel(const Kernel& k, double d_from, double d_to);

// Kernel at a continuous position: bilinear blend of the four
// surrounding cell kernels (tap-wise, common extent), scaled to defocus
// d. Positions outside the cell-center hull clamp to the nearest cell.
Kernel kernel_at(const KernelGrid& grid, double x, double y, double d);

Image correct_vignetting(const Image& img, const Image& field);

// Pixel-wise mean of the captures, normalized to maximum one.
Image estimate_vignetting(const std::vector<Image>& captures);

// Radiometrically corrected latent image: disc mask composited between
// the white and black captures.
Image render_latent_target(const CalibTarget& target, const Image& white,
                           const Image& black);
Image rasterize_target_mask(const CalibTarget& target);

// Spatially-varying convolution, tiled path: per grid cell, one
// convolution with that cell's kernel scaled to d, blended with
// bilinear partition-of-unity weights. Restricted to each weight's
// support box.
struct TiledNode {
  Index row0 = 0, col0 = 0, rows = 0, cols = 0;  // weight support box
  std::shared_ptr<const Image> weight;           // rows x cols
  Index radius = 0;
  ConvPlan conv;  // planned for the box grown by radius on each side
};

struct TiledConvPlan {
  Index img_rows = 0, img_cols = 0;
  double defocus = 0.0;
  std::vector<TiledNode> nodes;
};

TiledConvPlan plan_tiled_conv(const KernelGrid& grid, double d, Index rows,
                              Index cols);
Image apply_tiled_conv(const TiledConvPlan& plan, const Image& img);

// Exact per-pixel reference path: interpolates the kernel at every
// pixel via kernel_at. O(H*W*k^2) plus a resample per pixel; the tiled
// path must stay within 2e-3 of this.
Image convolve_spatially_varying_exact(const KernelGrid& grid, double d,
                                       const Image& img);

// Per-cell non-blind kernel estimation: minimizes
//   |K (*) latent - captured|^2 + reg * |grad K|^2
// over the simplex (K >= 0, sum K = 1) with Nesterov-accelerated
// projected gradient descent, 2000 iterations, step 1/L from a power
// iteration. Cells without texture are flagged and filled by averaging
// solved neighbors. Inputs are standardized by the captured cell's
// mean/std first, which makes the solve invariant to global affine
// intensity changes.
KernelGrid calibrate_kernels(const Image& captured, const Image& latent,
                             Index kernel_extent, double reg_weight,
                             View view);

// KGRID1 container: magic "MPIDKGD1", u32 view tag (0=left, 1=right),
// f64 reference defocus, u32 grid rows, u32 grid cols, u32 coverage
// rows, u32 coverage cols, then row-major kernels as (u32 k, k*k f64).
void save_kernel_grid(const std::filesystem::path& path,
                      const KernelGrid& grid);
KernelGrid load_kernel_grid(const std::filesystem::path& path);

}  // namespace mpid
