#pragma once

#include "mpid/mpi.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace mpid {

// Deterministic generator (xorshift + Box-Muller); identical streams on
// every platform for a given seed.
class Rand {
 public:
  explicit Rand(std::uint64_t seed)
      : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  std::uint64_t next_u64();
  double uniform();                       // [0,1)
  double uniform(double lo, double hi);
  double normal();

 private:
  std::uint64_t state_;
};

struct SceneLayerSpec {
  enum class Shape { full, rect, disc };
  enum class Texture { flat, noise, checker };

  double defocus = 1.0;
  Shape shape = Shape::full;
  // Region in unit coordinates (ignored for Shape::full).
  double center_x = 0.5, center_y = 0.5;
  double half_width = 0.25, half_height = 0.25;  // rect
  double radius = 0.25;                          // disc
  double alpha = 1.0;                            // opacity inside the region
  Texture texture = Texture::flat;
  double base = 0.5;
  double amplitude = 0.2;
  Index checker_period = 4;
};

struct SceneSpec {
  Index rows = 64, cols = 64;
  std::vector<SceneLayerSpec> layers;  // back to front, defocus decreasing
  double sigma2 = 0.0;
  std::uint64_t seed = 1;
};

struct SyntheticScene {
  Mpi mpi;
  KernelGrid left;
  KernelGrid right;
  double sigma2 = 0.0;
  std::uint64_t seed = 1;
};

struct DpSample {
  Image left, right;          // noisy observations
  Image gt_sharp, gt_defocus; // exact composites of the ground-truth MPI
  SceneSpec meta;
};

// 8x6 grid of identical anti-aliased half-disc kernels (full disc when
// half is not applicable is available via make_full_disc_kernels).
// reference_defocus is the kernel extent 2*ceil(radius)+1. perturb > 0
// varies each cell's radius by up to that fraction (seeded).
KernelGrid make_disc_kernels(double radius_ref, View half, Index coverage_rows,
                             Index coverage_cols, double perturb = 0.0,
                             std::uint64_t seed = 0);
KernelGrid make_full_disc_kernels(double radius_ref, Index coverage_rows,
                                  Index coverage_cols);

// Anti-aliased disc tap raster; side -1 keeps x <= 0, +1 keeps x >= 0.
Image raster_disc(Index extent, double radius, int side = 0);

Mpi build_scene_mpi(const SceneSpec& spec);
SyntheticScene make_scene(const SceneSpec& spec, KernelGrid left,
                          KernelGrid right);

// Renders the pair and adds independent N(0, sigma2) noise per view.
DpSample observe(const SyntheticScene& scene);

// Text round-trip of the scene parameters (the synth CLI's meta file).
std::string scene_meta_text(const SceneSpec& spec);

}  // namespace mpid
