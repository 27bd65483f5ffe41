#include "doctest.h"

#include "mpid/losses.hpp"
#include "support.hpp"

#include <cmath>
#include <functional>
#include <numbers>

using namespace mpid;
using testsupport::Rng;

namespace {

Mpi random_mpi(Rng& rng, Index n, Index h, Index w, std::vector<double> d) {
  std::vector<MpiLayer> layers;
  for (Index i = 0; i < n; ++i) {
    MpiLayer l;
    l.intensity = testsupport::random_image(rng, h, w, 0.0, 1.0);
    l.alpha = i == 0 ? Image::Ones(h, w)
                     : testsupport::random_image(rng, h, w, 0.05, 0.95);
    layers.push_back(std::move(l));
  }
  return Mpi(std::move(layers), std::move(d));
}

KernelGrid uniform_grid(const Kernel& k, double ref, Index rows, Index cols,
                        View v = View::left) {
  std::vector<Kernel> cells(48, k);
  return KernelGrid(std::move(cells), ref, v, rows, cols);
}

KernelGrid random_grid(Rng& rng, Index extent, double ref, Index rows,
                       Index cols) {
  std::vector<Kernel> cells;
  for (int i = 0; i < 48; ++i)
    cells.emplace_back(testsupport::random_image(rng, extent, extent, 0.05, 1.0));
  return KernelGrid(std::move(cells), ref, View::left, rows, cols);
}

// 3x3 Gaussian-weighted mean with replicate boundary, direct loops.
double window_mean(const Image& img, Index y, Index x) {
  static const double g[3][3] = {{1.0 / 16, 1.0 / 8, 1.0 / 16},
                                 {1.0 / 8, 1.0 / 4, 1.0 / 8},
                                 {1.0 / 16, 1.0 / 8, 1.0 / 16}};
  double acc = 0.0;
  for (int i = -1; i <= 1; ++i) {
    for (int j = -1; j <= 1; ++j) {
      const Index sy = std::clamp<Index>(y + i, 0, img.rows() - 1);
      const Index sx = std::clamp<Index>(x + j, 0, img.cols() - 1);
      acc += g[i + 1][j + 1] * img(sy, sx);
    }
  }
  return acc;
}

Image tv_oracle(const Image& img) {
  Image out(img.rows(), img.cols());
  Image sq = img.square();
  for (Index y = 0; y < img.rows(); ++y) {
    for (Index x = 0; x < img.cols(); ++x) {
      const double m = window_mean(img, y, x);
      const double ms = window_mean(sq, y, x);
      out(y, x) = std::sqrt(std::max(ms - m * m, 0.0));
    }
  }
  return out;
}

}  // namespace

TEST_CASE("charbonnier closed forms") {
  CHECK(charbonnier(0.0) == 1.0);
  CHECK(charbonnier(0.1) == doctest::Approx(std::numbers::sqrt2).epsilon(1e-12));
  const double x = 100.0 * kCharbonnierScale;
  CHECK(std::abs(charbonnier(x) - x / kCharbonnierScale) /
            (x / kCharbonnierScale) <
        1e-4);
}

TEST_CASE("charbonnier_bias closed forms and clamp") {
  Rng rng(91);
  Image x = testsupport::random_image(rng, 5, 5, -1.0, 1.0);
  CHECK(testsupport::max_abs_diff(charbonnier_bias(x, 0.0), charbonnier(x)) ==
        0.0);
  CHECK(charbonnier_bias(0.3, 0.09) == 1.0);  // x^2 == b
  // x=0, b=0.02, gamma=0.1: inner 1 - 2 = -1, clamped to the floor.
  CHECK(charbonnier_bias(0.0, 0.02) ==
        doctest::Approx(std::sqrt(kCharbonnierFloor)).epsilon(1e-12));
}

TEST_CASE("tv of a constant image is zero") {
  CHECK(tv(Image::Constant(7, 9, 0.42)).abs().maxCoeff() == 0.0);
}

TEST_CASE("tv of a unit checkerboard is one in the interior") {
  Image board(8, 8);
  for (Index y = 0; y < 8; ++y)
    for (Index x = 0; x < 8; ++x) board(y, x) = ((x + y) % 2 == 0) ? 1.0 : -1.0;
  Image t = tv(board);
  for (Index y = 1; y < 7; ++y)
    for (Index x = 1; x < 7; ++x)
      CHECK(t(y, x) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("tv matches the windowed weighted-std oracle") {
  Rng rng(92);
  Image img = testsupport::random_image(rng, 12, 10, -1.0, 2.0);
  CHECK(testsupport::max_abs_diff(tv(img), tv_oracle(img)) < 1e-10);
}

TEST_CASE("edge_mask closed forms") {
  CHECK(edge_mask(Image::Constant(6, 6, 0.3)).abs().maxCoeff() < 1e-12);

  // A +-c checkerboard has windowed variance c^2; at c^2 = 2 beta^2 the
  // mask reads 1 - 1/e in the interior.
  const double c = std::sqrt(2.0) * kEdgeBeta;
  Image board(8, 8);
  for (Index y = 0; y < 8; ++y)
    for (Index x = 0; x < 8; ++x) board(y, x) = ((x + y) % 2 == 0) ? c : -c;
  Image mask = edge_mask(board);
  CHECK(mask(4, 4) ==
        doctest::Approx(1.0 - std::exp(-1.0)).epsilon(1e-12));

  // Strong edges saturate toward one.
  Image step = Image::Zero(8, 8);
  step.rightCols(4).setConstant(10.0);
  CHECK(edge_mask(step)(4, 4) > 0.999);
  CHECK((edge_mask(step) <= 1.0).all());
}

TEST_CASE("tv_edge masks scale between one and two rho sums") {
  Rng rng(93);
  Image img = testsupport::random_image(rng, 9, 9);
  const double with_ones = tv_edge(img, Image::Ones(9, 9));
  const double with_zeros = tv_edge(img, Image::Zero(9, 9));
  CHECK(with_zeros == doctest::Approx(2.0 * with_ones).epsilon(1e-12));
  CHECK(tv_edge(Image::Constant(9, 9, 0.5), Image::Zero(9, 9)) ==
        doctest::Approx(2.0 * 81.0).epsilon(1e-12));
  CHECK(with_ones >= 81.0);  // rho >= 1 floor
}

TEST_CASE("collision_entropy closed forms") {
  const Index h = 4, w = 4;
  SUBCASE("one-hot stacks have zero entropy") {
    std::vector<Image> stack{Image::Zero(h, w), Image::Constant(h, w, 0.7),
                             Image::Zero(h, w)};
    CHECK(collision_entropy(stack).abs().maxCoeff() == 0.0);
  }
  SUBCASE("uniform stacks reach log N") {
    std::vector<Image> stack(5, Image::Constant(h, w, 0.25));
    Image s = collision_entropy(stack);
    CHECK(testsupport::max_abs_diff(s, Image::Constant(h, w, std::log(5.0))) <
          1e-12);
  }
  SUBCASE("scale invariance and permutation invariance") {
    Rng rng(94);
    std::vector<Image> stack;
    for (int i = 0; i < 4; ++i)
      stack.push_back(testsupport::random_image(rng, h, w, 0.0, 1.0));
    Image base = collision_entropy(stack);
    std::vector<Image> scaled;
    for (const Image& v : stack) scaled.push_back((3.7 * v).eval());
    CHECK(testsupport::max_abs_diff(collision_entropy(scaled), base) < 1e-12);
    std::vector<Image> perm{stack[2], stack[0], stack[3], stack[1]};
    CHECK(testsupport::max_abs_diff(collision_entropy(perm), base) < 1e-14);
  }
  SUBCASE("all-zero pixels contribute zero") {
    std::vector<Image> stack{Image::Zero(h, w), Image::Zero(h, w)};
    CHECK(collision_entropy(stack).abs().maxCoeff() == 0.0);
  }
  SUBCASE("negative entries are rejected") {
    std::vector<Image> stack{Image::Constant(h, w, -0.1)};
    CHECK_THROWS(collision_entropy(stack));
  }
}

namespace {

struct Setup {
  Mpi mpi;
  KernelGrid left, right;
  Image obs_l, obs_r;
  BiasTable bias;
};

Setup random_setup(Rng& rng, Index h = 16, Index w = 16) {
  Setup s{random_mpi(rng, 2, h, w, {4.0, 2.0}),
          random_grid(rng, 3, 3.0, h, w), random_grid(rng, 3, 3.0, h, w),
          testsupport::random_image(rng, h, w),
          testsupport::random_image(rng, h, w),
          BiasTable{{2e-3, 1e-3}}};
  return s;
}

double rho_b_scalar(double x, double b) {
  return std::sqrt(std::max(
      (x * x - b) / (kCharbonnierScale * kCharbonnierScale) + 1.0,
      kCharbonnierFloor));
}

// Straight-line data/aux losses over the plain tiled-convolution path.
std::pair<double, double> data_aux_oracle(const Setup& s) {
  const Index n = s.mpi.layer_count(), h = s.mpi.rows(), w = s.mpi.cols();
  double data = 0.0, aux = 0.0;
  for (int side = 0; side < 2; ++side) {
    const KernelGrid& grid = side == 0 ? s.left : s.right;
    const Image& obs = side == 0 ? s.obs_l : s.obs_r;
    std::vector<TiledConvPlan> plans;
    for (double d : s.mpi.defocus_sizes())
      plans.push_back(plan_tiled_conv(grid, d, h, w));
    Image occ = Image::Ones(h, w), rendered = Image::Zero(h, w),
          ball = Image::Zero(h, w);
    for (Index i = n - 1; i >= 0; --i) {
      const auto idx = static_cast<std::size_t>(i);
      Image bf = apply_tiled_conv(
          plans[idx], (s.mpi.layer(i).intensity * s.mpi.layer(i).alpha).eval());
      Image ba = apply_tiled_conv(plans[idx], s.mpi.layer(i).alpha);
      rendered += bf * occ;
      ball += s.bias.values[idx] * ba * occ;
      if (i > 0) occ *= 1.0 - ba;
    }
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        data += rho_b_scalar(rendered(y, x) - obs(y, x), ball(y, x));

    Transmittance t = transmittances(s.mpi);
    for (Index i = 0; i < n; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      Image weight = apply_tiled_conv(plans[idx], t.per_layer[idx]);
      Image blurred_c = apply_tiled_conv(plans[idx], s.mpi.layer(i).intensity);
      for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x)
          aux += weight(y, x) *
                 rho_b_scalar(blurred_c(y, x) - obs(y, x), s.bias.values[idx]);
    }
  }
  return {data, aux};
}

}  // namespace

TEST_CASE("loss_data reaches its floor when rendering matches the input") {
  const Index h = 8, w = 10;
  std::vector<MpiLayer> layers(1);
  Rng rng(95);
  layers[0] = {testsupport::random_image(rng, h, w), Image::Ones(h, w)};
  Mpi mpi(layers, {1.0});
  KernelGrid grid = uniform_grid(Kernel::identity(), 1.0, h, w);
  const Image& obs = mpi.layer(0).intensity;
  const double got = loss_data(mpi, grid, grid, obs, obs, BiasTable{{0.0}});
  CHECK(got == doctest::Approx(2.0 * h * w).epsilon(1e-12));
}

TEST_CASE("loss_data collapses the bias composite for one opaque layer") {
  const Index h = 8, w = 8;
  Rng rng(96);
  std::vector<MpiLayer> layers(1);
  layers[0] = {testsupport::random_image(rng, h, w), Image::Ones(h, w)};
  Mpi mpi(layers, {1.0});
  KernelGrid grid = uniform_grid(Kernel::identity(), 1.0, h, w);
  const double b = 3.2e-3;
  const double got = loss_data(mpi, grid, grid, mpi.layer(0).intensity,
                               mpi.layer(0).intensity, BiasTable{{b}});
  CHECK(got == doctest::Approx(2.0 * h * w * rho_b_scalar(0.0, b))
                   .epsilon(1e-12));
}

TEST_CASE("loss_data matches the straight-line oracle") {
  Rng rng(97);
  Setup s = random_setup(rng);
  auto [data, aux] = data_aux_oracle(s);
  CHECK(loss_data(s.mpi, s.left, s.right, s.obs_l, s.obs_r, s.bias) ==
        doctest::Approx(data).epsilon(1e-9));
  CHECK(loss_aux(s.mpi, s.left, s.right, s.obs_l, s.obs_r, s.bias) ==
        doctest::Approx(aux).epsilon(1e-9));
}

TEST_CASE("loss_aux weights vanish for fully occluded layers") {
  const Index h = 8, w = 8;
  Rng rng(98);
  std::vector<MpiLayer> layers(2);
  layers[0] = {testsupport::random_image(rng, h, w), Image::Ones(h, w)};
  layers[1] = {testsupport::random_image(rng, h, w), Image::Ones(h, w)};
  Mpi mpi(layers, {2.0, 1.0});
  KernelGrid grid = uniform_grid(Kernel::identity(), 1.0, h, w);
  Image obs = testsupport::random_image(rng, h, w);
  const double both = loss_aux(mpi, grid, grid, obs, obs, BiasTable{{0.0, 0.0}});
  // Only the (opaque) front layer contributes: T_back == 0.
  double expect = 0.0;
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x)
      expect += 2.0 * rho_b_scalar(mpi.layer(1).intensity(y, x) - obs(y, x), 0.0);
  CHECK(both == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("loss_intensity of a constant MPI hits the closed form") {
  const Index h = 9, w = 7, n = 3;
  std::vector<MpiLayer> layers;
  for (Index i = 0; i < n; ++i)
    layers.push_back({Image::Constant(h, w, 0.4),
                      i == 0 ? Image::Ones(h, w) : Image::Constant(h, w, 0.5)});
  Mpi mpi(layers, {3.0, 2.0, 1.0});
  CHECK(loss_intensity(mpi) ==
        doctest::Approx(2.0 * h * w * (n + 1)).epsilon(1e-12));

  std::vector<MpiLayer> dark;
  for (Index i = 0; i < n; ++i)
    dark.push_back({Image::Zero(h, w),
                    i == 0 ? Image::Ones(h, w) : Image::Constant(h, w, 0.5)});
  Mpi zero_mpi(dark, {3.0, 2.0, 1.0});
  CHECK(loss_intensity(zero_mpi) ==
        doctest::Approx(2.0 * h * w * (n + 1)).epsilon(1e-12));
}

TEST_CASE("loss_intensity matches composition of the primitives") {
  Rng rng(99);
  Mpi mpi = random_mpi(rng, 3, 10, 10, {3.0, 2.0, 1.0});
  Transmittance t = transmittances(mpi);
  Image sharp = composite_sharp(mpi);
  double expect = tv_edge(sharp, edge_mask(sharp));
  for (Index i = 0; i < 3; ++i) {
    Image weighted =
        t.per_layer[static_cast<std::size_t>(i)] * mpi.layer(i).intensity;
    expect += tv_edge(weighted, edge_mask(weighted));
  }
  CHECK(loss_intensity(mpi) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("loss_alpha closed form for constant channels") {
  const Index h = 8, w = 8, n = 3;
  std::vector<MpiLayer> layers;
  for (Index i = 0; i < n; ++i)
    layers.push_back({Image::Constant(h, w, 0.3),
                      i == 0 ? Image::Ones(h, w) : Image::Constant(h, w, 0.6)});
  Mpi mpi(layers, {3.0, 2.0, 1.0});
  // Constant alphas and transmittances: tv = 0, sharp is constant so the
  // mask is zero; every layer contributes 2 * 2HW.
  CHECK(loss_alpha(mpi) == doctest::Approx(4.0 * n * h * w).epsilon(1e-12));
}

TEST_CASE("loss_alpha matches composition of the primitives") {
  Rng rng(100);
  Mpi mpi = random_mpi(rng, 3, 10, 10, {3.0, 2.0, 1.0});
  Transmittance t = transmittances(mpi);
  Image mask = edge_mask(composite_sharp(mpi));
  double expect = 0.0;
  for (Index i = 0; i < 3; ++i) {
    expect += tv_edge((mpi.layer(i).alpha + kSharpenEps).sqrt().eval(), mask);
    expect += tv_edge(
        (t.per_layer[static_cast<std::size_t>(i)] + kSharpenEps).sqrt().eval(),
        mask);
  }
  CHECK(loss_alpha(mpi) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("loss_entropy on a one-layer-dominant MPI is near zero") {
  const Index h = 6, w = 6;
  std::vector<MpiLayer> layers(3);
  layers[0] = {Image::Constant(h, w, 0.2), Image::Ones(h, w)};
  layers[1] = {Image::Constant(h, w, 0.5), Image::Zero(h, w)};
  layers[2] = {Image::Constant(h, w, 0.7), Image::Ones(h, w)};
  Mpi mpi(layers, {3.0, 2.0, 1.0});
  // Exactly one nonzero alpha (front) and a one-hot transmittance; only
  // the 1e-12 sharpening offset keeps this away from exactly zero.
  CHECK(loss_entropy(mpi) >= 0.0);
  CHECK(loss_entropy(mpi) < 1e-4);
}

TEST_CASE("loss_entropy of uniform alphas includes log(N-1)") {
  Rng rng(101);
  const Index h = 6, w = 6, n = 4;
  std::vector<MpiLayer> layers;
  for (Index i = 0; i < n; ++i)
    layers.push_back({testsupport::random_image(rng, h, w),
                      i == 0 ? Image::Ones(h, w) : Image::Constant(h, w, 0.37)});
  Mpi mpi(layers, {4.0, 3.0, 2.0, 1.0});
  Transmittance t = transmittances(mpi);
  std::vector<Image> tstack;
  for (const Image& ti : t.per_layer)
    tstack.push_back((ti + kSharpenEps).sqrt().eval());
  const double expect =
      std::log(static_cast<double>(n - 1)) + collision_entropy(tstack).mean();
  CHECK(loss_entropy(mpi) == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("loss_total composes the weighted breakdown exactly") {
  Rng rng(102);
  Setup s = random_setup(rng, 12, 12);

  SUBCASE("all-zero weights give zero total") {
    LossWeights w{0, 0, 0, 0, 0};
    LossBreakdown b =
        loss_total(s.mpi, s.left, s.right, s.obs_l, s.obs_r, s.bias, w);
    CHECK(b.total == 0.0);
  }
  SUBCASE("a single active weight scales its term") {
    LossWeights w{0, 0, 7.5, 0, 0};
    LossBreakdown b =
        loss_total(s.mpi, s.left, s.right, s.obs_l, s.obs_r, s.bias, w);
    CHECK(b.total == doctest::Approx(7.5 * b.intensity).epsilon(1e-12));
  }
  SUBCASE("defaults produce the exact weighted sum") {
    LossWeights w;
    LossBreakdown b =
        loss_total(s.mpi, s.left, s.right, s.obs_l, s.obs_r, s.bias, w);
    const double expect = w.data * b.data + w.aux * b.aux +
                          w.intensity * b.intensity + w.alpha * b.alpha +
                          w.entropy * b.entropy;
    CHECK(std::abs(b.total - expect) <= 1e-10 * std::abs(expect));
    CHECK(b.entropy >= 0.0);
    CHECK(b.intensity >= 2.0 * 12 * 12);  // rho floor per image term
  }
}

TEST_CASE("loss_data with a zero bias table equals the plain Charbonnier sum") {
  Rng rng(103);
  Setup s = random_setup(rng, 12, 12);
  s.bias.values = {0.0, 0.0};
  auto [data, aux] = data_aux_oracle(s);
  (void)aux;
  CHECK(loss_data(s.mpi, s.left, s.right, s.obs_l, s.obs_r, s.bias) ==
        doctest::Approx(data).epsilon(1e-12));
}

namespace {

// Finite-difference harness over raw layer images (c and alpha inputs).
struct TermPick {
  int which;  // 0 data, 1 aux, 2 intensity, 3 alpha, 4 entropy, 5 total
};

double eval_term(const Setup& s, const std::vector<Image>& c_imgs,
                 const std::vector<Image>& a_imgs, TermPick pick,
                 Image* grads_out_c, Image* grads_out_a, Index grad_layer,
                 bool want_grad) {
  Tape tape;
  MpiVars vars;
  const Index n = static_cast<Index>(c_imgs.size());
  for (Index i = 0; i < n; ++i) {
    vars.intensity.push_back(tape.input(c_imgs[static_cast<std::size_t>(i)]));
    vars.alpha.push_back(
        i == 0 ? tape.constant(Image::Ones(c_imgs[0].rows(), c_imgs[0].cols()))
               : tape.input(a_imgs[static_cast<std::size_t>(i)]));
  }
  RenderPlans plans = RenderPlans::build(s.left, s.right,
                                         s.mpi.defocus_sizes(),
                                         c_imgs[0].rows(), c_imgs[0].cols());
  LossTermVars t = build_loss(tape, vars, plans, s.obs_l, s.obs_r, s.bias,
                              LossWeights{});
  Var out = pick.which == 0   ? t.data
            : pick.which == 1 ? t.aux
            : pick.which == 2 ? t.intensity
            : pick.which == 3 ? t.alpha
            : pick.which == 4 ? t.entropy
                              : t.total;
  const double val = out.value()(0, 0);
  if (want_grad) {
    tape.backward(out);
    *grads_out_c = tape.grad(vars.intensity[static_cast<std::size_t>(grad_layer)]);
    if (grad_layer > 0)
      *grads_out_a = tape.grad(vars.alpha[static_cast<std::size_t>(grad_layer)]);
  }
  return val;
}

}  // namespace

TEST_CASE("every loss term's gradient matches central finite differences") {
  Rng rng(104);
  const Index h = 8, w = 8, n = 3;
  Setup s = random_setup(rng, h, w);
  s.mpi = random_mpi(rng, n, h, w, {4.0, 2.5, 1.0});
  s.bias.values = {2e-3, 1e-3, 5e-4};
  std::vector<Image> c_imgs, a_imgs;
  for (Index i = 0; i < n; ++i) {
    c_imgs.push_back(testsupport::random_image(rng, h, w, 0.1, 1.0));
    a_imgs.push_back(i == 0 ? Image::Ones(h, w)
                            : testsupport::random_image(rng, h, w, 0.1, 0.9));
  }
  // Entries far below the gradient image's own scale only get an
  // absolute check; central differences bottom out in roundoff there.
  const double fd_step = 1e-6;
  auto check_entry = [](double fd, double g, double gmax) {
    const double floor = 1e-4 * std::max(1.0, gmax);
    const double tol =
        std::max(floor, 1e-4 * std::max(std::abs(fd), std::abs(g)));
    CHECK(std::abs(fd - g) <= tol);
  };
  for (int which = 0; which < 6; ++which) {
    for (Index layer : {Index(0), Index(2)}) {
      Image gc, ga;
      eval_term(s, c_imgs, a_imgs, {which}, &gc, &ga, layer, true);
      const double gc_max = gc.abs().maxCoeff();
      const double ga_max = layer > 0 ? ga.abs().maxCoeff() : 0.0;
      // Probe a handful of pixels per term.
      for (int probe = 0; probe < 6; ++probe) {
        const Index y = static_cast<Index>(rng.next_u64() % h);
        const Index x = static_cast<Index>(rng.next_u64() % w);
        {
          auto cp = c_imgs, cm = c_imgs;
          cp[static_cast<std::size_t>(layer)](y, x) += fd_step;
          cm[static_cast<std::size_t>(layer)](y, x) -= fd_step;
          const double fd = (eval_term(s, cp, a_imgs, {which}, nullptr, nullptr,
                                       0, false) -
                             eval_term(s, cm, a_imgs, {which}, nullptr, nullptr,
                                       0, false)) /
                            (2.0 * fd_step);
          check_entry(fd, gc(y, x), gc_max);
        }
        if (layer > 0) {
          auto ap = a_imgs, am = a_imgs;
          ap[static_cast<std::size_t>(layer)](y, x) += fd_step;
          am[static_cast<std::size_t>(layer)](y, x) -= fd_step;
          const double fd = (eval_term(s, c_imgs, ap, {which}, nullptr, nullptr,
                                       0, false) -
                             eval_term(s, c_imgs, am, {which}, nullptr, nullptr,
                                       0, false)) /
                            (2.0 * fd_step);
          check_entry(fd, ga(y, x), ga_max);
        }
      }
    }
  }
}
