#include "doctest.h"

#include "mpid/mpi.hpp"
#include "support.hpp"

#include <filesystem>

using namespace mpid;
using testsupport::Rng;

namespace {

Mpi random_mpi(Rng& rng, Index n, Index h, Index w,
               std::vector<double> d = {}) {
  std::vector<MpiLayer> layers;
  for (Index i = 0; i < n; ++i) {
    MpiLayer l;
    l.intensity = testsupport::random_image(rng, h, w, 0.0, 1.0);
    l.alpha = i == 0 ? Image::Ones(h, w)
                     : testsupport::random_image(rng, h, w, 0.0, 1.0);
    layers.push_back(std::move(l));
  }
  if (d.empty())
    for (Index i = 0; i < n; ++i)
      d.push_back(static_cast<double>(2 * (n - i)) + 1.0);
  return Mpi(std::move(layers), std::move(d));
}

KernelGrid uniform_grid(const Kernel& k, double ref, Index rows, Index cols) {
  std::vector<Kernel> cells(48, k);
  return KernelGrid(std::move(cells), ref, View::left, rows, cols);
}

// Straight-line Eq.-style renderer using the exact per-pixel kernel
// interpolation path; independent of the tiled implementation.
Image render_oracle(const Mpi& mpi, const KernelGrid& grid) {
  const Index n = mpi.layer_count();
  Image out = Image::Zero(mpi.rows(), mpi.cols());
  Image occ = Image::Ones(mpi.rows(), mpi.cols());
  for (Index i = n - 1; i >= 0; --i) {
    const double d = mpi.defocus_sizes()[static_cast<std::size_t>(i)];
    Image ca = mpi.layer(i).intensity * mpi.layer(i).alpha;
    out += convolve_spatially_varying_exact(grid, d, ca) * occ;
    occ *= 1.0 - convolve_spatially_varying_exact(grid, d, mpi.layer(i).alpha);
  }
  return out;
}

}  // namespace

TEST_CASE("Mpi validates its invariants") {
  Rng rng(41);
  std::vector<MpiLayer> layers(2);
  layers[0] = {Image::Constant(4, 4, 0.5), Image::Ones(4, 4)};
  layers[1] = {Image::Constant(4, 4, 0.5), Image::Constant(4, 4, 0.5)};
  CHECK_NOTHROW(Mpi(layers, {5.0, 2.0}));
  CHECK_THROWS(Mpi(layers, {2.0, 5.0}));  // not decreasing
  layers[0].alpha(1, 1) = 0.9;
  CHECK_THROWS(Mpi(layers, {5.0, 2.0}));  // back layer not opaque
  layers[0].alpha(1, 1) = 1.0;
  layers[1].intensity(0, 0) = -0.1;
  CHECK_THROWS(Mpi(layers, {5.0, 2.0}));  // negative intensity
}

TEST_CASE("layer_defocus_sizes spaces sizes linearly back to front") {
  auto d = layer_defocus_sizes(4, 1.0, 10.0);
  CHECK(d[0] == 10.0);
  CHECK(d[3] == 1.0);
  CHECK(d[1] == doctest::Approx(7.0));
  CHECK_THROWS(layer_defocus_sizes(3, 5.0, 2.0));
}

TEST_CASE("transmittances of a single opaque layer are one") {
  Rng rng(42);
  Mpi mpi = random_mpi(rng, 1, 6, 7);
  Transmittance t = transmittances(mpi);
  CHECK(testsupport::max_abs_diff(t.per_layer[0], Image::Ones(6, 7)) == 0.0);
}

TEST_CASE("an opaque front layer fully occludes the back") {
  std::vector<MpiLayer> layers(2);
  layers[0] = {Image::Constant(5, 5, 0.4), Image::Ones(5, 5)};
  layers[1] = {Image::Constant(5, 5, 0.8), Image::Ones(5, 5)};
  Mpi mpi(layers, {3.0, 1.0});
  Transmittance t = transmittances(mpi);
  CHECK(testsupport::max_abs_diff(t.per_layer[1], Image::Ones(5, 5)) == 0.0);
  CHECK(testsupport::max_abs_diff(t.per_layer[0], Image::Zero(5, 5)) == 0.0);
}

TEST_CASE("transmittances match the per-pixel product formula and sum to one") {
  Rng rng(43);
  Mpi mpi = random_mpi(rng, 3, 9, 8);
  Transmittance t = transmittances(mpi);
  Image sum = Image::Zero(9, 8);
  for (Index i = 0; i < 3; ++i) {
    Image expect(9, 8);
    for (Index y = 0; y < 9; ++y) {
      for (Index x = 0; x < 8; ++x) {
        double v = mpi.layer(i).alpha(y, x);
        for (Index j = i + 1; j < 3; ++j) v *= 1.0 - mpi.layer(j).alpha(y, x);
        expect(y, x) = v;
      }
    }
    CHECK(testsupport::max_abs_diff(t.per_layer[static_cast<std::size_t>(i)],
                                    expect) < 1e-12);
    sum += t.per_layer[static_cast<std::size_t>(i)];
  }
  CHECK(testsupport::max_abs_diff(sum, Image::Ones(9, 8)) < 1e-9);
}

TEST_CASE("composite_sharp basics") {
  Rng rng(44);
  SUBCASE("single opaque layer returns its intensity") {
    Mpi mpi = random_mpi(rng, 1, 7, 6);
    CHECK(testsupport::max_abs_diff(composite_sharp(mpi),
                                    mpi.layer(0).intensity) == 0.0);
  }
  SUBCASE("an opaque constant front layer wins") {
    std::vector<MpiLayer> layers(2);
    layers[0] = {testsupport::random_image(rng, 5, 5), Image::Ones(5, 5)};
    layers[1] = {Image::Constant(5, 5, 0.3), Image::Ones(5, 5)};
    Mpi mpi(layers, {4.0, 2.0});
    CHECK(testsupport::max_abs_diff(composite_sharp(mpi),
                                    Image::Constant(5, 5, 0.3)) < 1e-15);
  }
  SUBCASE("three random layers match the transmittance sum") {
    Mpi mpi = random_mpi(rng, 3, 8, 8);
    Transmittance t = transmittances(mpi);
    Image expect = Image::Zero(8, 8);
    for (Index i = 0; i < 3; ++i)
      expect += t.per_layer[static_cast<std::size_t>(i)] * mpi.layer(i).intensity;
    CHECK(testsupport::max_abs_diff(composite_sharp(mpi), expect) < 1e-12);
  }
}

TEST_CASE("composite_defocus_map blends layer sizes") {
  Rng rng(45);
  SUBCASE("single opaque layer at d=4") {
    Mpi mpi = random_mpi(rng, 1, 6, 6, {4.0});
    CHECK(testsupport::max_abs_diff(composite_defocus_map(mpi),
                                    Image::Constant(6, 6, 4.0)) == 0.0);
  }
  SUBCASE("half-transparent front layer averages sizes") {
    std::vector<MpiLayer> layers(2);
    layers[0] = {Image::Constant(5, 5, 0.2), Image::Ones(5, 5)};
    layers[1] = {Image::Constant(5, 5, 0.6), Image::Constant(5, 5, 0.5)};
    Mpi mpi(layers, {6.0, 2.0});
    CHECK(testsupport::max_abs_diff(composite_defocus_map(mpi),
                                    Image::Constant(5, 5, 4.0)) < 1e-12);
  }
  SUBCASE("random MPI matches the per-pixel oracle") {
    Mpi mpi = random_mpi(rng, 4, 8, 9);
    Transmittance t = transmittances(mpi);
    Image expect = Image::Zero(8, 9);
    for (Index i = 0; i < 4; ++i)
      expect += t.per_layer[static_cast<std::size_t>(i)] *
                mpi.defocus_sizes()[static_cast<std::size_t>(i)];
    CHECK(testsupport::max_abs_diff(composite_defocus_map(mpi), expect) < 1e-12);
  }
}

TEST_CASE("render_defocused with identity kernels equals composite_sharp") {
  Rng rng(46);
  Mpi mpi = random_mpi(rng, 3, 24, 32, {3.0, 2.0, 1.0});
  // 1x1 identity cells: a delta scales to a delta at every layer size.
  KernelGrid grid = uniform_grid(Kernel::identity(), 1.0, 24, 32);
  Image rendered = render_defocused(mpi, grid);
  CHECK(testsupport::max_abs_diff(rendered, composite_sharp(mpi)) < 1e-12);
}

TEST_CASE("render_defocused of one opaque layer is a plain convolution") {
  Rng rng(47);
  Mpi mpi = random_mpi(rng, 1, 32, 32, {5.0});
  Kernel k = Kernel(testsupport::raster_disc_oracle(5, 2.2));
  KernelGrid grid = uniform_grid(k, 5.0, 32, 32);
  Image rendered = render_defocused(mpi, grid);
  Image expect = convolve_same(mpi.layer(0).intensity, k);
  CHECK(testsupport::max_abs_diff(rendered, expect) < 1e-12);
}

TEST_CASE("render_defocused matches the exact spatially-varying oracle") {
  Rng rng(48);
  Mpi mpi = random_mpi(rng, 2, 48, 48, {5.0, 3.0});
  std::vector<Kernel> cells;
  for (int i = 0; i < 48; ++i) {
    Image taps = testsupport::random_image(rng, 5, 5, 0.05, 1.0);
    cells.emplace_back(taps);
  }
  KernelGrid grid(std::move(cells), 5.0, View::left, 48, 48);
  Image fast = render_defocused(mpi, grid);
  Image slow = render_oracle(mpi, grid);
  CHECK(testsupport::max_abs_diff(fast, slow) < 2e-3);
}

TEST_CASE("render_pair with identical grids renders identical views") {
  Rng rng(49);
  Mpi mpi = random_mpi(rng, 2, 24, 24, {4.0, 2.0});
  Kernel k = Kernel(testsupport::raster_disc_oracle(5, 2.0, -1));
  KernelGrid grid = uniform_grid(k, 5.0, 24, 24);
  auto [l, r] = render_pair(mpi, grid, grid);
  CHECK(testsupport::max_abs_diff(l, r) == 0.0);
}

TEST_CASE("mirrored kernels on a mirrored scene render mirrored views") {
  Rng rng(50);
  const Index h = 24, w = 24;
  Image ca = testsupport::random_image(rng, h, w);
  Image a2 = testsupport::random_image(rng, h, w);
  // symmetrize the scene
  Image cs = 0.5 * (ca + flip_cols(ca));
  Image as = 0.5 * (a2 + flip_cols(a2));
  std::vector<MpiLayer> layers(2);
  layers[0] = {cs, Image::Ones(h, w)};
  layers[1] = {cs, as};
  Mpi mpi(layers, {5.0, 3.0});

  Image right_taps = testsupport::raster_disc_oracle(5, 2.2, 1);
  Kernel right(right_taps);
  Kernel left(flip_cols(right_taps));
  KernelGrid grid_r = uniform_grid(right, 5.0, h, w);
  KernelGrid grid_l = uniform_grid(left, 5.0, h, w);
  auto [img_l, img_r] = render_pair(mpi, grid_l, grid_r);
  CHECK(testsupport::max_abs_diff(img_l, flip_cols(img_r)) < 1e-12);
}

TEST_CASE("half-disc views average to the full-disc view") {
  Rng rng(51);
  Mpi mpi = random_mpi(rng, 1, 32, 32, {7.0});
  Image lt = testsupport::raster_disc_oracle(7, 3.0, -1);
  Image rt = testsupport::raster_disc_oracle(7, 3.0, 1);
  Image ft = testsupport::raster_disc_oracle(7, 3.0, 0);
  KernelGrid gl = uniform_grid(Kernel(lt), 7.0, 32, 32);
  KernelGrid gr = uniform_grid(Kernel(rt), 7.0, 32, 32);
  KernelGrid gf = uniform_grid(Kernel(ft), 7.0, 32, 32);
  auto [l, r] = render_pair(mpi, gl, gr);
  Image full = render_defocused(mpi, gf);
  CHECK(testsupport::max_abs_diff(((l + r) * 0.5).eval(), full) < 2e-3);
}

TEST_CASE("rendering is linear in the intensity channels") {
  Rng rng(52);
  Mpi a = random_mpi(rng, 2, 24, 24, {5.0, 2.5});
  std::vector<MpiLayer> layers_b, layers_sum;
  std::vector<MpiLayer> la, lb;
  for (Index i = 0; i < 2; ++i) {
    MpiLayer l = a.layer(i);
    MpiLayer m = l;
    m.intensity = testsupport::random_image(rng, 24, 24);
    lb.push_back(m);
    MpiLayer sum = l;
    sum.intensity = 0.5 * l.intensity + 0.5 * m.intensity;
    layers_sum.push_back(sum);
  }
  Mpi b(lb, a.defocus_sizes());
  Mpi half(layers_sum, a.defocus_sizes());
  Kernel k = Kernel(testsupport::raster_disc_oracle(5, 2.0, 1));
  KernelGrid grid = uniform_grid(k, 5.0, 24, 24);
  Image expect = 0.5 * render_defocused(a, grid) + 0.5 * render_defocused(b, grid);
  CHECK(testsupport::max_abs_diff(render_defocused(half, grid), expect) < 1e-12);
}

TEST_CASE("constant intensities render to the same constant") {
  Rng rng(53);
  const double v = 0.37;
  std::vector<MpiLayer> layers(3);
  layers[0] = {Image::Constant(24, 24, v), Image::Ones(24, 24)};
  layers[1] = {Image::Constant(24, 24, v),
               testsupport::random_image(rng, 24, 24)};
  layers[2] = {Image::Constant(24, 24, v),
               testsupport::random_image(rng, 24, 24)};
  Mpi mpi(layers, {6.0, 4.0, 2.0});
  Kernel k = Kernel(testsupport::raster_disc_oracle(5, 2.2));
  KernelGrid grid = uniform_grid(k, 5.0, 24, 24);
  Image out = render_defocused(mpi, grid);
  CHECK(testsupport::max_abs_diff(out, Image::Constant(24, 24, v)) < 2e-3);
}

TEST_CASE("raising a front alpha never increases back-layer transmittance") {
  Rng rng(54);
  Mpi mpi = random_mpi(rng, 3, 12, 12);
  Transmittance t0 = transmittances(mpi);
  std::vector<MpiLayer> layers;
  for (Index i = 0; i < 3; ++i) layers.push_back(mpi.layer(i));
  layers[2].alpha = (layers[2].alpha + 0.2).min(1.0);
  Mpi bumped(layers, mpi.defocus_sizes());
  Transmittance t1 = transmittances(bumped);
  for (Index i = 0; i < 2; ++i) {
    CHECK(((t1.per_layer[static_cast<std::size_t>(i)] -
            t0.per_layer[static_cast<std::size_t>(i)]) <= 1e-15)
              .all());
  }
}

TEST_CASE("MPIS1 checkpoints round-trip") {
  Rng rng(55);
  Mpi mpi = random_mpi(rng, 3, 9, 7);
  auto path = std::filesystem::temp_directory_path() / "mpid_mpi_test.mpis";
  save_mpi(path, mpi);
  Mpi back = load_mpi(path);
  CHECK(back.layer_count() == 3);
  for (Index i = 0; i < 3; ++i) {
    CHECK(back.defocus_sizes()[static_cast<std::size_t>(i)] ==
          mpi.defocus_sizes()[static_cast<std::size_t>(i)]);
    CHECK((back.layer(i).intensity == mpi.layer(i).intensity).all());
    CHECK((back.layer(i).alpha == mpi.layer(i).alpha).all());
  }
  std::filesystem::remove(path);
}
