#include "mpid/synth.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace mpid {

std::uint64_t Rand::next_u64() {
  std::uint64_t x = state_;
  x ^= x >> 12;
  x ^= x << 25;
  x ^= x >> 27;
  state_ = x;
  return x * 0x2545f4914f6cdd1dull;
}

double Rand::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rand::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double Rand::normal() {
  double u1 = 0.0;
  while (u1 <= 1e-300) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

Image raster_disc(Index extent, double radius, int side) {
  require(extent >= 1 && extent % 2 == 1, "raster_disc: extent must be odd");
  const Index r = extent / 2;
  Image out = Image::Zero(extent, extent);
  const int ss = 16;
  for (Index i = 0; i < extent; ++i) {
    for (Index j = 0; j < extent; ++j) {
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

namespace {

Kernel disc_kernel(double radius, int side) {
  if (radius < 0.5) return Kernel::identity();
  const Index extent = 2 * static_cast<Index>(std::ceil(radius)) + 1;
  return Kernel(raster_disc(extent, radius, side));
}

KernelGrid disc_grid(double radius_ref, int side, View view,
                     Index coverage_rows, Index coverage_cols, double perturb,
                     std::uint64_t seed) {
  require(radius_ref >= 0.0, "make_disc_kernels: negative radius");
  const double d_ref =
      radius_ref < 0.5
          ? 1.0
          : static_cast<double>(2 * static_cast<Index>(std::ceil(radius_ref)) +
                                1);
  Rand rng(seed ^ 0xd15c0000u);
  std::vector<Kernel> cells;
  cells.reserve(48);
  for (int i = 0; i < 48; ++i) {
    double r = radius_ref;
    if (perturb > 0.0) r *= 1.0 + perturb * rng.uniform(-1.0, 1.0);
    cells.push_back(disc_kernel(r, side));
  }
  return KernelGrid(std::move(cells), d_ref, view, coverage_rows,
                    coverage_cols);
}

}  // namespace

KernelGrid make_disc_kernels(double radius_ref, View half, Index coverage_rows,
                             Index coverage_cols, double perturb,
                             std::uint64_t seed) {
  return disc_grid(radius_ref, half == View::left ? -1 : 1, half,
                   coverage_rows, coverage_cols, perturb, seed);
}

KernelGrid make_full_disc_kernels(double radius_ref, Index coverage_rows,
                                  Index coverage_cols) {
  return disc_grid(radius_ref, 0, View::left, coverage_rows, coverage_cols,
                   0.0, 0);
}

namespace {

Image layer_alpha_mask(const SceneLayerSpec& spec, Index rows, Index cols) {
  if (spec.shape == SceneLayerSpec::Shape::full)
    return Image::Constant(rows, cols, spec.alpha);
  Image out = Image::Zero(rows, cols);
  for (Index y = 0; y < rows; ++y) {
    for (Index x = 0; x < cols; ++x) {
      const double ux = (static_cast<double>(x) + 0.5) / cols;
      const double uy = (static_cast<double>(y) + 0.5) / rows;
      bool inside = false;
      if (spec.shape == SceneLayerSpec::Shape::rect) {
        inside = std::abs(ux - spec.center_x) <= spec.half_width &&
                 std::abs(uy - spec.center_y) <= spec.half_height;
      } else {
        const double dx = ux - spec.center_x, dy = uy - spec.center_y;
        inside = dx * dx + dy * dy <= spec.radius * spec.radius;
      }
      if (inside) out(y, x) = spec.alpha;
    }
  }
  return out;
}

Image layer_texture(const SceneLayerSpec& spec, Index rows, Index cols,
                    Rand& rng) {
  Image out(rows, cols);
  switch (spec.texture) {
    case SceneLayerSpec::Texture::flat:
      out.setConstant(spec.base);
      break;
    case SceneLayerSpec::Texture::noise:
      for (Index y = 0; y < rows; ++y)
        for (Index x = 0; x < cols; ++x)
          out(y, x) = spec.base + spec.amplitude * rng.uniform(-1.0, 1.0);
      break;
    case SceneLayerSpec::Texture::checker: {
      const Index p = std::max<Index>(1, spec.checker_period);
      for (Index y = 0; y < rows; ++y)
        for (Index x = 0; x < cols; ++x)
          out(y, x) = spec.base +
                      (((x / p) + (y / p)) % 2 == 0 ? spec.amplitude
                                                    : -spec.amplitude);
      break;
    }
  }
  return out.max(0.0);
}

}  // namespace

Mpi build_scene_mpi(const SceneSpec& spec) {
  require(!spec.layers.empty(), "build_scene_mpi: no layers");
  require(spec.rows >= 8 && spec.cols >= 8, "build_scene_mpi: extents too small");
  Rand rng(spec.seed);
  std::vector<MpiLayer> layers;
  std::vector<double> sizes;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const SceneLayerSpec& ls = spec.layers[i];
    MpiLayer layer;
    layer.intensity = layer_texture(ls, spec.rows, spec.cols, rng);
    layer.alpha = i == 0 ? Image::Ones(spec.rows, spec.cols)
                         : layer_alpha_mask(ls, spec.rows, spec.cols);
    layers.push_back(std::move(layer));
    sizes.push_back(ls.defocus);
  }
  return Mpi(std::move(layers), std::move(sizes));
}

SyntheticScene make_scene(const SceneSpec& spec, KernelGrid left,
                          KernelGrid right) {
  require(left.coverage_rows() >= spec.rows &&
              left.coverage_cols() >= spec.cols &&
              right.coverage_rows() >= spec.rows &&
              right.coverage_cols() >= spec.cols,
          "make_scene: kernel grids do not cover the scene extents");
  require(spec.sigma2 >= 0.0, "make_scene: negative noise variance");
  return SyntheticScene{build_scene_mpi(spec), std::move(left),
                        std::move(right), spec.sigma2, spec.seed};
}

DpSample observe(const SyntheticScene& scene) {
  DpSample sample;
  auto [l, r] = render_pair(scene.mpi, scene.left, scene.right);
  sample.gt_sharp = composite_sharp(scene.mpi);
  sample.gt_defocus = composite_defocus_map(scene.mpi);
  const double sigma = std::sqrt(scene.sigma2);
  Rand rng(scene.seed ^ 0x0b5e7eull);
  if (sigma > 0.0) {
    for (Index y = 0; y < l.rows(); ++y)
      for (Index x = 0; x < l.cols(); ++x) l(y, x) += sigma * rng.normal();
    for (Index y = 0; y < r.rows(); ++y)
      for (Index x = 0; x < r.cols(); ++x) r(y, x) += sigma * rng.normal();
  }
  sample.left = std::move(l);
  sample.right = std::move(r);
  return sample;
}

std::string scene_meta_text(const SceneSpec& spec) {
  std::ostringstream os;
  os << "rows=" << spec.rows << "\n";
  os << "cols=" << spec.cols << "\n";
  os << "sigma2=" << spec.sigma2 << "\n";
  os << "seed=" << spec.seed << "\n";
  os << "layers=" << spec.layers.size() << "\n";
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const SceneLayerSpec& l = spec.layers[i];
    os << "layer" << i << ".defocus=" << l.defocus << "\n";
    os << "layer" << i << ".shape="
       << (l.shape == SceneLayerSpec::Shape::full
               ? "full"
               : l.shape == SceneLayerSpec::Shape::rect ? "rect" : "disc")
       << "\n";
    os << "layer" << i << ".texture="
       << (l.texture == SceneLayerSpec::Texture::flat
               ? "flat"
               : l.texture == SceneLayerSpec::Texture::noise ? "noise"
                                                             : "checker")
       << "\n";
    os << "layer" << i << ".base=" << l.base << "\n";
    os << "layer" << i << ".amplitude=" << l.amplitude << "\n";
  }
  return os.str();
}

}  // namespace mpid
