#include "mpid/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>

namespace mpid {

KernelGrid::KernelGrid(std::vector<Kernel> cells_row_major,
                       double reference_defocus, View view,
                       Index coverage_rows, Index coverage_cols)
    : cells_(std::move(cells_row_major)),
      reference_defocus_(reference_defocus),
      view_(view),
      coverage_rows_(coverage_rows),
      coverage_cols_(coverage_cols) {
  require(static_cast<Index>(cells_.size()) == kGridRows * kGridCols,
          "KernelGrid: expected exactly 8x6 cells");
  require(reference_defocus_ > 0.0, "KernelGrid: reference defocus must be > 0");
  require(coverage_rows_ >= kGridRows && coverage_cols_ >= kGridCols,
          "KernelGrid: coverage smaller than the grid");
}

const Kernel& KernelGrid::cell(Index row, Index col) const {
  require(row >= 0 && row < kGridRows && col >= 0 && col < kGridCols,
          "KernelGrid::cell: index out of range");
  return cells_[static_cast<std::size_t>(row * kGridCols + col)];
}

double KernelGrid::cell_center_x(Index col) const {
  return (static_cast<double>(col) + 0.5) * static_cast<double>(coverage_cols_) /
         static_cast<double>(kGridCols);
}

double KernelGrid::cell_center_y(Index row) const {
  return (static_cast<double>(row) + 0.5) * static_cast<double>(coverage_rows_) /
         static_cast<double>(kGridRows);
}

CalibTarget make_calib_target(Index rows, Index cols, double disc_radius,
                              double margin, int discs_per_cell_side) {
  require(rows >= 1 && cols >= 1, "make_calib_target: empty extents");
  require(disc_radius > 0.0, "make_calib_target: radius must be > 0");
  require(discs_per_cell_side >= 1, "make_calib_target: need >= 1 disc/cell");
  CalibTarget t;
  t.rows = rows;
  t.cols = cols;
  t.disc_radius = disc_radius;
  const double per = discs_per_cell_side;
  for (Index r = 0; r < KernelGrid::kGridRows; ++r) {
    for (Index c = 0; c < KernelGrid::kGridCols; ++c) {
      for (int a = 0; a < discs_per_cell_side; ++a) {
        for (int b = 0; b < discs_per_cell_side; ++b) {
          const double cx = (static_cast<double>(c) + (b + 0.5) / per) *
                            static_cast<double>(cols) / KernelGrid::kGridCols;
          const double cy = (static_cast<double>(r) + (a + 0.5) / per) *
                            static_cast<double>(rows) / KernelGrid::kGridRows;
          t.disc_centers.emplace_back(cx, cy);
        }
      }
    }
  }
  const double need = disc_radius + margin - 1e-9;
  for (const auto& c : t.disc_centers) {
    require(c.x() >= need && c.x() <= cols - need && c.y() >= need &&
                c.y() <= rows - need,
            "make_calib_target: disc too close to the border for this margin");
  }
  return t;
}

namespace {

// 1-D overlap weights between destination pixel footprints mapped into
// source coordinates and the unit source pixels. Piecewise-linear in
// the offset, so tap-wise blending commutes with scaling; preserves
// kernel moments exactly (centroids scale by exactly d_to/d_from).
Eigen::MatrixXd box_overlap_weights(Index m, Index k, double f) {
  const Index dc = m / 2, sc = k / 2;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, k);
  for (Index i = 0; i < m; ++i) {
    const double lo = (static_cast<double>(i - dc) - 0.5) / f;
    const double hi = (static_cast<double>(i - dc) + 0.5) / f;
    for (Index s = 0; s < k; ++s) {
      const double slo = static_cast<double>(s - sc) - 0.5;
      const double shi = static_cast<double>(s - sc) + 0.5;
      w(i, s) = std::max(0.0, std::min(hi, shi) - std::max(lo, slo));
    }
  }
  return w;
}

}  // namespace

Kernel scale_kernel(const Kernel& k, double d_from, double d_to) {
  require(d_from > 0.0 && d_to > 0.0,
          "scale_kernel: defocus sizes must be positive");
  const double f = d_to / d_from;
  const Index ksz = k.extent();
  if (f == 1.0) return k;
  if (ksz == 1) return k;  // a delta stays a delta at any size
  const double target = f * static_cast<double>(ksz);
  Index m = 2 * static_cast<Index>(std::ceil((target - 1.0) / 2.0)) + 1;
  if (m <= 1) return Kernel::identity();

  Eigen::MatrixXd wr = box_overlap_weights(m, ksz, f);
  Image out = (wr * k.taps().matrix() * wr.transpose()).array();
  if (out.sum() <= 0.0) return Kernel::identity();
  return Kernel(std::move(out));
}

namespace {

struct GridWeights {
  Index r0, r1, c0, c1;      // the four surrounding cells (r0==r1 allowed)
  double fr, fc;             // blend fractions toward r1/c1
};

GridWeights locate(const KernelGrid& grid, double x, double y) {
  const double sx = x * KernelGrid::kGridCols /
                        static_cast<double>(grid.coverage_cols()) -
                    0.5;
  const double sy = y * KernelGrid::kGridRows /
                        static_cast<double>(grid.coverage_rows()) -
                    0.5;
  const double cx = std::clamp(sx, 0.0, KernelGrid::kGridCols - 1.0);
  const double cy = std::clamp(sy, 0.0, KernelGrid::kGridRows - 1.0);
  GridWeights w;
  w.c0 = std::min<Index>(static_cast<Index>(cx), KernelGrid::kGridCols - 1);
  w.r0 = std::min<Index>(static_cast<Index>(cy), KernelGrid::kGridRows - 1);
  w.c1 = std::min<Index>(w.c0 + 1, KernelGrid::kGridCols - 1);
  w.r1 = std::min<Index>(w.r0 + 1, KernelGrid::kGridRows - 1);
  w.fc = cx - static_cast<double>(w.c0);
  w.fr = cy - static_cast<double>(w.r0);
  return w;
}

Image pad_to_extent(const Image& taps, Index m) {
  if (taps.rows() == m) return taps;
  Image out = Image::Zero(m, m);
  const Index off = (m - taps.rows()) / 2;
  out.block(off, off, taps.rows(), taps.cols()) = taps;
  return out;
}

}  // namespace

Kernel kernel_at(const KernelGrid& grid, double x, double y, double d) {
  require(x >= 0.0 && x <= static_cast<double>(grid.coverage_cols()) &&
              y >= 0.0 && y <= static_cast<double>(grid.coverage_rows()),
          "kernel_at: position outside coverage");
  const GridWeights w = locate(grid, x, y);
  const Kernel& k00 = grid.cell(w.r0, w.c0);
  const Kernel& k01 = grid.cell(w.r0, w.c1);
  const Kernel& k10 = grid.cell(w.r1, w.c0);
  const Kernel& k11 = grid.cell(w.r1, w.c1);
  const Index m = std::max({k00.extent(), k01.extent(), k10.extent(),
                            k11.extent()});
  Image blend = (1.0 - w.fr) * ((1.0 - w.fc) * pad_to_extent(k00.taps(), m) +
                                w.fc * pad_to_extent(k01.taps(), m)) +
                w.fr * ((1.0 - w.fc) * pad_to_extent(k10.taps(), m) +
                        w.fc * pad_to_extent(k11.taps(), m));
  return scale_kernel(Kernel(std::move(blend)), grid.reference_defocus(), d);
}

Image correct_vignetting(const Image& img, const Image& field) {
  require(same_extents(img, field), "correct_vignetting: extents differ");
  require((field > 0.0).all(), "correct_vignetting: non-positive field value");
  Image out = img / field;
  ensure_finite(out, "correct_vignetting");
  return out;
}

Image estimate_vignetting(const std::vector<Image>& captures) {
  require(!captures.empty(), "estimate_vignetting: no captures");
  Image mean = captures.front();
  for (std::size_t i = 1; i < captures.size(); ++i) {
    require(same_extents(mean, captures[i]),
            "estimate_vignetting: capture extents differ");
    mean += captures[i];
  }
  mean /= static_cast<double>(captures.size());
  const double peak = mean.maxCoeff();
  require(peak > 0.0, "estimate_vignetting: all-zero captures");
  return mean / peak;
}

Image rasterize_target_mask(const CalibTarget& target) {
  Image mask = Image::Zero(target.rows, target.cols);
  const double r2 = target.disc_radius * target.disc_radius;
  for (const auto& c : target.disc_centers) {
    const Index y_lo = std::max<Index>(
        0, static_cast<Index>(std::floor(c.y() - target.disc_radius - 1)));
    const Index y_hi = std::min<Index>(
        target.rows - 1,
        static_cast<Index>(std::ceil(c.y() + target.disc_radius + 1)));
    const Index x_lo = std::max<Index>(
        0, static_cast<Index>(std::floor(c.x() - target.disc_radius - 1)));
    const Index x_hi = std::min<Index>(
        target.cols - 1,
        static_cast<Index>(std::ceil(c.x() + target.disc_radius + 1)));
    for (Index y = y_lo; y <= y_hi; ++y) {
      for (Index x = x_lo; x <= x_hi; ++x) {
        const double dy = static_cast<double>(y) + 0.5 - c.y();
        const double dx = static_cast<double>(x) + 0.5 - c.x();
        if (dy * dy + dx * dx <= r2) mask(y, x) = 1.0;
      }
    }
  }
  return mask;
}

Image render_latent_target(const CalibTarget& target, const Image& white,
                           const Image& black) {
  require(white.rows() == target.rows && white.cols() == target.cols &&
              same_extents(white, black),
          "render_latent_target: extents differ");
  Image mask = rasterize_target_mask(target);
  return mask * white + (1.0 - mask) * black;
}

namespace {

// 1-D hat weights of a cell index over pixel centers, with clamping to
// the nearest cell outside the center hull. Returns the nonzero span.
struct HatSpan {
  Index lo = 0, hi = -1;  // inclusive pixel range
  std::vector<double> w;
};

HatSpan hat_span(Index cell, Index n_cells, Index n_pix, Index coverage) {
  HatSpan span;
  std::vector<double> full(static_cast<std::size_t>(n_pix), 0.0);
  for (Index p = 0; p < n_pix; ++p) {
    const double s = (static_cast<double>(p) + 0.5) *
                         static_cast<double>(n_cells) /
                         static_cast<double>(coverage) -
                     0.5;
    const double sc = std::clamp(s, 0.0, static_cast<double>(n_cells - 1));
    const double w = std::max(0.0, 1.0 - std::abs(sc - static_cast<double>(cell)));
    full[static_cast<std::size_t>(p)] = w;
  }
  Index lo = 0;
  while (lo < n_pix && full[static_cast<std::size_t>(lo)] == 0.0) ++lo;
  Index hi = n_pix - 1;
  while (hi >= 0 && full[static_cast<std::size_t>(hi)] == 0.0) --hi;
  span.lo = lo;
  span.hi = hi;
  if (lo <= hi)
    span.w.assign(full.begin() + lo, full.begin() + hi + 1);
  return span;
}

}  // namespace

TiledConvPlan plan_tiled_conv(const KernelGrid& grid, double d, Index rows,
                              Index cols) {
  require(rows >= 1 && cols >= 1, "plan_tiled_conv: empty image extents");
  require(grid.coverage_rows() >= rows && grid.coverage_cols() >= cols,
          "plan_tiled_conv: grid coverage smaller than image");
  TiledConvPlan plan;
  plan.img_rows = rows;
  plan.img_cols = cols;
  plan.defocus = d;
  for (Index r = 0; r < KernelGrid::kGridRows; ++r) {
    HatSpan sy = hat_span(r, KernelGrid::kGridRows, rows, grid.coverage_rows());
    if (sy.lo > sy.hi) continue;
    for (Index c = 0; c < KernelGrid::kGridCols; ++c) {
      HatSpan sx =
          hat_span(c, KernelGrid::kGridCols, cols, grid.coverage_cols());
      if (sx.lo > sx.hi) continue;
      TiledNode node;
      node.row0 = sy.lo;
      node.col0 = sx.lo;
      node.rows = sy.hi - sy.lo + 1;
      node.cols = sx.hi - sx.lo + 1;
      Image weight(node.rows, node.cols);
      for (Index i = 0; i < node.rows; ++i)
        for (Index j = 0; j < node.cols; ++j)
          weight(i, j) = sy.w[static_cast<std::size_t>(i)] *
                         sx.w[static_cast<std::size_t>(j)];
      node.weight = std::make_shared<Image>(std::move(weight));
      Kernel scaled = scale_kernel(grid.cell(r, c), grid.reference_defocus(), d);
      node.radius = scaled.radius();
      node.conv = plan_conv(scaled.taps(), node.rows + 2 * node.radius,
                            node.cols + 2 * node.radius);
      plan.nodes.push_back(std::move(node));
    }
  }
  return plan;
}

Image apply_tiled_conv(const TiledConvPlan& plan, const Image& img) {
  require(img.rows() == plan.img_rows && img.cols() == plan.img_cols,
          "apply_tiled_conv: image extents differ from plan");
  Image out = Image::Zero(plan.img_rows, plan.img_cols);
  for (const TiledNode& node : plan.nodes) {
    Image patch = gather_replicate(img, node.row0 - node.radius,
                                   node.col0 - node.radius,
                                   node.rows + 2 * node.radius,
                                   node.cols + 2 * node.radius);
    Image box = conv_valid(patch, node.conv);
    out.block(node.row0, node.col0, node.rows, node.cols) +=
        (*node.weight) * box;
  }
  return out;
}

Image convolve_spatially_varying_exact(const KernelGrid& grid, double d,
                                       const Image& img) {
  const Index h = img.rows(), w = img.cols();
  Image out(h, w);
  parallel_for(h, [&](Index y) {
    for (Index x = 0; x < w; ++x) {
      Kernel k = kernel_at(grid, static_cast<double>(x) + 0.5,
                           static_cast<double>(y) + 0.5, d);
      const Image& taps = k.taps();
      const Index ksz = k.extent(), r = k.radius();
      double acc = 0.0;
      for (Index i = 0; i < ksz; ++i) {
        const Index sy = std::clamp<Index>(y - (i - r), 0, h - 1);
        for (Index j = 0; j < ksz; ++j) {
          const Index sx = std::clamp<Index>(x - (j - r), 0, w - 1);
          acc += taps(i, j) * img(sy, sx);
        }
      }
      out(y, x) = acc;
    }
  });
  return out;
}

namespace {

// Euclidean projection onto {K >= 0, sum K = 1}.
void project_simplex(Image& k) {
  std::vector<double> v(k.data(), k.data() + k.size());
  std::sort(v.begin(), v.end(), std::greater<double>());
  double cumsum = 0.0, theta = 0.0;
  Index support = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    cumsum += v[i];
    const double t = (cumsum - 1.0) / static_cast<double>(i + 1);
    if (v[i] - t > 0.0) {
      theta = t;
      support = static_cast<Index>(i + 1);
    }
  }
  (void)support;
  k = (k - theta).max(0.0);
}

// (A^T r)(i,j) = sum_{y,x} r(y,x) * latent(y + k-1-i, x + k-1-j)
Image conv_transpose_apply(const Image& latent_patch, const Image& residual,
                           Index ksz) {
  Image g(ksz, ksz);
  const Index oh = residual.rows(), ow = residual.cols();
  for (Index i = 0; i < ksz; ++i) {
    for (Index j = 0; j < ksz; ++j) {
      g(i, j) =
          (residual * latent_patch.block(ksz - 1 - i, ksz - 1 - j, oh, ow))
              .sum();
    }
  }
  return g;
}

// Gradient of |grad K|^2 (forward differences): 2 * graph Laplacian.
Image smoothness_grad(const Image& k) {
  const Index n = k.rows();
  Image g = Image::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      if (i + 1 < n) {
        const double d = k(i + 1, j) - k(i, j);
        g(i, j) -= 2.0 * d;
        g(i + 1, j) += 2.0 * d;
      }
      if (j + 1 < n) {
        const double d = k(i, j + 1) - k(i, j);
        g(i, j) -= 2.0 * d;
        g(i, j + 1) += 2.0 * d;
      }
    }
  }
  return g;
}

struct CellResult {
  Kernel kernel;
  bool flagged = false;
};

CellResult solve_cell(const Image& captured_cell, const Image& latent_patch,
                      Index ksz, double reg_weight) {
  CellResult res;
  const double mu = captured_cell.mean();
  const double sd = std::sqrt((captured_cell - mu).square().mean());
  const double lat_sd = std::sqrt(
      (latent_patch - latent_patch.mean()).square().mean());
  if (sd < 1e-9 || lat_sd < 1e-9) {
    res.flagged = true;
    return res;
  }
  const Image b = (captured_cell - mu) / sd;
  const Image lat = (latent_patch - mu) / sd;

  auto apply_a = [&](const Image& k) { return conv_valid(lat, k); };
  auto apply_at = [&](const Image& r) {
    return conv_transpose_apply(lat, r, ksz);
  };

  // Lipschitz estimate of A^T A by power iteration.
  Image v = Image::Constant(ksz, ksz, 1.0 / static_cast<double>(ksz * ksz));
  double lip = 1.0;
  for (int it = 0; it < 20; ++it) {
    Image av = apply_at(apply_a(v));
    const double n = std::sqrt(av.square().sum());
    if (n <= 0.0) break;
    lip = n / std::sqrt(v.square().sum());
    v = av / n;
  }
  // reg_weight is relative to the data curvature at the kernel's
  // natural 1/k^2 tap scale.
  const double n_taps = static_cast<double>(ksz * ksz);
  const double reg = reg_weight * lip / (n_taps * n_taps);
  // Hessian is 2 A^T A + 2 reg L with |L| <= 8 for the 4-neighbor grid.
  const double step = 1.0 / (1.05 * (2.0 * lip + 16.0 * reg));

  Image k = Image::Constant(ksz, ksz, 1.0 / static_cast<double>(ksz * ksz));
  Image k_prev = k;
  for (int t = 0; t < 2000; ++t) {
    const double momentum = static_cast<double>(t) / static_cast<double>(t + 3);
    Image y = k + momentum * (k - k_prev);
    Image grad = 2.0 * apply_at(apply_a(y) - b) + reg * smoothness_grad(y);
    k_prev = k;
    k = y - step * grad;
    project_simplex(k);
  }
  res.kernel = Kernel(k.max(0.0));
  return res;
}

}  // namespace

KernelGrid calibrate_kernels(const Image& captured, const Image& latent,
                             Index kernel_extent, double reg_weight,
                             View view) {
  require(same_extents(captured, latent),
          "calibrate_kernels: captured and latent extents differ");
  require(kernel_extent >= 1 && kernel_extent % 2 == 1,
          "calibrate_kernels: kernel extent must be odd and positive");
  const Index h = captured.rows(), w = captured.cols();
  const Index rad = kernel_extent / 2;
  require(h / KernelGrid::kGridRows > 2 * rad &&
              w / KernelGrid::kGridCols > 2 * rad,
          "calibrate_kernels: cells too small for this kernel extent");

  const Index n_cells = KernelGrid::kGridRows * KernelGrid::kGridCols;
  std::vector<CellResult> results(static_cast<std::size_t>(n_cells));
  parallel_for(n_cells, [&](Index idx) {
    const Index r = idx / KernelGrid::kGridCols;
    const Index c = idx % KernelGrid::kGridCols;
    const Index r0 = r * h / KernelGrid::kGridRows;
    const Index r1 = (r + 1) * h / KernelGrid::kGridRows;
    const Index c0 = c * w / KernelGrid::kGridCols;
    const Index c1 = (c + 1) * w / KernelGrid::kGridCols;
    Image cap = captured.block(r0, c0, r1 - r0, c1 - c0);
    Image lat = gather_replicate(latent, r0 - rad, c0 - rad,
                                 (r1 - r0) + 2 * rad, (c1 - c0) + 2 * rad);
    results[static_cast<std::size_t>(idx)] =
        solve_cell(cap, lat, kernel_extent, reg_weight);
  });

  // Fill flagged cells from solved 4-neighbors, spreading until done.
  auto flagged_count = [&] {
    return std::count_if(results.begin(), results.end(),
                         [](const CellResult& r) { return r.flagged; });
  };
  require(flagged_count() < n_cells, "calibrate_kernels: no textured cells");
  while (flagged_count() > 0) {
    bool progress = false;
    for (Index r = 0; r < KernelGrid::kGridRows; ++r) {
      for (Index c = 0; c < KernelGrid::kGridCols; ++c) {
        auto& cell = results[static_cast<std::size_t>(
            r * KernelGrid::kGridCols + c)];
        if (!cell.flagged) continue;
        Image acc;
        int n = 0;
        auto add = [&](Index rr, Index cc) {
          if (rr < 0 || rr >= KernelGrid::kGridRows || cc < 0 ||
              cc >= KernelGrid::kGridCols)
            return;
          const auto& nb = results[static_cast<std::size_t>(
              rr * KernelGrid::kGridCols + cc)];
          if (nb.flagged) return;
          Image taps = pad_to_extent(nb.kernel.taps(), kernel_extent);
          if (n == 0)
            acc = taps;
          else
            acc += taps;
          ++n;
        };
        add(r - 1, c);
        add(r + 1, c);
        add(r, c - 1);
        add(r, c + 1);
        if (n > 0) {
          cell.kernel = Kernel(acc / static_cast<double>(n));
          cell.flagged = false;
          progress = true;
        }
      }
    }
    require(progress, "calibrate_kernels: could not fill flagged cells");
  }

  std::vector<Kernel> cells;
  cells.reserve(static_cast<std::size_t>(n_cells));
  for (auto& r : results) cells.push_back(std::move(r.kernel));
  return KernelGrid(std::move(cells), static_cast<double>(kernel_extent), view,
                    h, w);
}

namespace {

constexpr char kGridMagic[8] = {'M', 'P', 'I', 'D', 'K', 'G', 'D', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
double read_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace

void save_kernel_grid(const std::filesystem::path& path,
                      const KernelGrid& grid) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw std::runtime_error("save_kernel_grid: cannot open " + path.string());
  os.write(kGridMagic, sizeof kGridMagic);
  write_u32(os, grid.view() == View::left ? 0u : 1u);
  write_f64(os, grid.reference_defocus());
  write_u32(os, static_cast<std::uint32_t>(KernelGrid::kGridRows));
  write_u32(os, static_cast<std::uint32_t>(KernelGrid::kGridCols));
  write_u32(os, static_cast<std::uint32_t>(grid.coverage_rows()));
  write_u32(os, static_cast<std::uint32_t>(grid.coverage_cols()));
  for (Index r = 0; r < KernelGrid::kGridRows; ++r) {
    for (Index c = 0; c < KernelGrid::kGridCols; ++c) {
      const Image& taps = grid.cell(r, c).taps();
      write_u32(os, static_cast<std::uint32_t>(taps.rows()));
      for (Index i = 0; i < taps.rows(); ++i)
        for (Index j = 0; j < taps.cols(); ++j) write_f64(os, taps(i, j));
    }
  }
  if (!os)
    throw std::runtime_error("save_kernel_grid: write failed " + path.string());
}

KernelGrid load_kernel_grid(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw std::runtime_error("load_kernel_grid: cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kGridMagic, sizeof magic) != 0)
    throw std::runtime_error("load_kernel_grid: bad magic in " + path.string());
  const std::uint32_t view_tag = read_u32(is);
  const double ref = read_f64(is);
  const std::uint32_t grows = read_u32(is);
  const std::uint32_t gcols = read_u32(is);
  const std::uint32_t crows = read_u32(is);
  const std::uint32_t ccols = read_u32(is);
  if (!is || grows != KernelGrid::kGridRows || gcols != KernelGrid::kGridCols ||
      view_tag > 1)
    throw std::runtime_error("load_kernel_grid: bad header in " + path.string());
  std::vector<Kernel> cells;
  for (Index i = 0; i < KernelGrid::kGridRows * KernelGrid::kGridCols; ++i) {
    const std::uint32_t k = read_u32(is);
    if (!is || k == 0 || k % 2 == 0 || k > 4096)
      throw std::runtime_error("load_kernel_grid: bad kernel extent");
    Image taps(static_cast<Index>(k), static_cast<Index>(k));
    for (Index y = 0; y < taps.rows(); ++y)
      for (Index x = 0; x < taps.cols(); ++x) taps(y, x) = read_f64(is);
    if (!is)
      throw std::runtime_error("load_kernel_grid: truncated " + path.string());
    cells.emplace_back(std::move(taps));
  }
  return KernelGrid(std::move(cells), ref,
                    view_tag == 0 ? View::left : View::right,
                    static_cast<Index>(crows), static_cast<Index>(ccols));
}

}  // namespace mpid
