#include "mpid/numerics.hpp"

#include <unsupported/Eigen/FFT>

#include <atomic>
#include <bit>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <thread>
#include <vector>

namespace mpid {

namespace {

int read_thread_cap() {
  unsigned hw = std::thread::hardware_concurrency();
  int cap = hw > 0 ? static_cast<int>(hw) : 1;
  if (const char* env = std::getenv("MPIDEFOCUS_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) cap = std::min<long>(v, 256);
  }
  return cap;
}

thread_local bool in_worker = false;

}  // namespace

int thread_cap() {
  static int cap = read_thread_cap();
  return cap;
}

void parallel_for(Index n, const std::function<void(Index)>& fn) {
  const int workers = thread_cap();
  if (n <= 1 || workers <= 1 || in_worker) {
    for (Index i = 0; i < n; ++i) fn(i);
    return;
  }
  const int used = static_cast<int>(std::min<Index>(workers, n));
  std::atomic<Index> next{0};
  auto body = [&] {
    in_worker = true;
    for (;;) {
      Index i = next.fetch_add(1, std::memory_order_relaxed);
      if (i >= n) break;
      fn(i);
    }
    in_worker = false;
  };
  std::vector<std::thread> threads;
  threads.reserve(used - 1);
  for (int t = 1; t < used; ++t) threads.emplace_back(body);
  body();
  for (auto& t : threads) t.join();
}

Kernel::Kernel(Image taps) : taps_(std::move(taps)) {
  require(taps_.rows() == taps_.cols(), "Kernel: taps must be square");
  require(taps_.rows() % 2 == 1, "Kernel: extent must be odd");
  require((taps_ >= -1e-12).all(), "Kernel: negative tap weight");
  taps_ = taps_.max(0.0);
  const double s = taps_.sum();
  require(s > 0.0, "Kernel: taps sum to zero");
  // Already-normalized taps pass through bit-exactly (file round trips).
  if (std::abs(s - 1.0) > 1e-12) taps_ /= s;
}

namespace {

void fft_cols_inplace(Spectrum& a, bool inverse) {
  Eigen::FFT<double> fft;
  Eigen::VectorXcd in(a.rows()), out(a.rows());
  for (Index c = 0; c < a.cols(); ++c) {
    in = a.col(c).matrix();
    if (inverse)
      fft.inv(out, in);
    else
      fft.fwd(out, in);
    a.col(c) = out.array();
  }
}

void fft_rows_inplace(Spectrum& a, bool inverse) {
  Eigen::FFT<double> fft;
  Eigen::VectorXcd in(a.cols()), out(a.cols());
  for (Index r = 0; r < a.rows(); ++r) {
    in = a.row(r).matrix().transpose();
    if (inverse)
      fft.inv(out, in);
    else
      fft.fwd(out, in);
    a.row(r) = out.array().transpose();
  }
}

Spectrum fft2_padded(const Image& img, Index pad_rows, Index pad_cols) {
  Spectrum a = Spectrum::Zero(pad_rows, pad_cols);
  a.topLeftCorner(img.rows(), img.cols()) =
      img.cast<std::complex<double>>();
  fft_cols_inplace(a, false);
  fft_rows_inplace(a, false);
  return a;
}

Index next_pow2(Index n) {
  Index p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

Spectrum fft2(const Image& img, Index pad_rows, Index pad_cols) {
  require(img.rows() >= 1 && img.cols() >= 1, "fft2: empty image");
  require(pad_rows >= img.rows() && pad_cols >= img.cols(),
          "fft2: pad extents smaller than image");
  return fft2_padded(img, pad_rows, pad_cols);
}

Spectrum fft2(const Image& img) { return fft2(img, img.rows(), img.cols()); }

Image ifft2(const Spectrum& spec) {
  Spectrum a = spec;
  fft_cols_inplace(a, true);
  fft_rows_inplace(a, true);
  return a.real();
}

Image gather_replicate(const Image& img, Index row0, Index col0, Index rows,
                       Index cols) {
  require(rows >= 1 && cols >= 1, "gather_replicate: empty window");
  Image out(rows, cols);
  const Index h = img.rows(), w = img.cols();
  for (Index c = 0; c < cols; ++c) {
    const Index sc = std::clamp<Index>(col0 + c, 0, w - 1);
    for (Index r = 0; r < rows; ++r) {
      const Index sr = std::clamp<Index>(row0 + r, 0, h - 1);
      out(r, c) = img(sr, sc);
    }
  }
  return out;
}

ConvPlan plan_conv(Image taps, Index patch_rows, Index patch_cols) {
  require(taps.rows() == taps.cols() && taps.rows() % 2 == 1,
          "plan_conv: taps must be odd square");
  const Index k = taps.rows();
  require(patch_rows >= k && patch_cols >= k,
          "plan_conv: patch smaller than kernel");
  ConvPlan plan;
  plan.patch_rows = patch_rows;
  plan.patch_cols = patch_cols;
  plan.use_fft = k > 9;
  if (plan.use_fft) {
    // One padded size serves both directions: the valid outputs of the
    // forward pass sit at circular indices >= k-1, and the adjoint's
    // full convolution has length exactly patch_rows x patch_cols.
    plan.fft_rows = next_pow2(patch_rows);
    plan.fft_cols = next_pow2(patch_cols);
    plan.khat = fft2_padded(taps, plan.fft_rows, plan.fft_cols);
    plan.khat_adj = fft2_padded(flip_both(taps), plan.fft_rows, plan.fft_cols);
  }
  plan.taps = std::move(taps);
  return plan;
}

namespace {

Image conv_valid_spatial_impl(const Image& patch, const Image& taps) {
  const Index k = taps.rows();
  const Index oh = patch.rows() - k + 1;
  const Index ow = patch.cols() - k + 1;
  Image out(oh, ow);
  const bool par = oh * ow * k * k > 65536;
  auto col_job = [&](Index x) {
    for (Index y = 0; y < oh; ++y) {
      double acc = 0.0;
      for (Index j = 0; j < k; ++j) {
        const Index px = x + k - 1 - j;
        for (Index i = 0; i < k; ++i) {
          acc += taps(i, j) * patch(y + k - 1 - i, px);
        }
      }
      out(y, x) = acc;
    }
  };
  if (par)
    parallel_for(ow, col_job);
  else
    for (Index x = 0; x < ow; ++x) col_job(x);
  return out;
}

Image conv_valid_fft_impl(const Image& patch, const ConvPlan& plan) {
  const Index k = plan.taps.rows();
  Spectrum f = fft2_padded(patch, plan.fft_rows, plan.fft_cols);
  f *= plan.khat;
  Image full = ifft2(f);
  return full.block(k - 1, k - 1, patch.rows() - k + 1, patch.cols() - k + 1);
}

}  // namespace

Image conv_valid(const Image& patch, const ConvPlan& plan) {
  require(patch.rows() == plan.patch_rows && patch.cols() == plan.patch_cols,
          "conv_valid: patch extents differ from plan");
  if (plan.use_fft) return conv_valid_fft_impl(patch, plan);
  return conv_valid_spatial_impl(patch, plan.taps);
}

Image conv_valid(const Image& patch, const Image& taps) {
  ConvPlan plan = plan_conv(taps, patch.rows(), patch.cols());
  return conv_valid(patch, plan);
}

Image conv_valid_adjoint(const Image& out_grad, const ConvPlan& plan) {
  const Index k = plan.taps.rows();
  if (plan.use_fft) {
    Spectrum f = fft2_padded(out_grad, plan.fft_rows, plan.fft_cols);
    f *= plan.khat_adj;
    Image full = ifft2(f);
    return full.topLeftCorner(plan.patch_rows, plan.patch_cols);
  }
  // patch_grad = full linear convolution of out_grad with flipped taps.
  Image g = Image::Zero(plan.patch_rows, plan.patch_cols);
  const Image flipped = flip_both(plan.taps);
  const Index oh = out_grad.rows(), ow = out_grad.cols();
  for (Index j = 0; j < k; ++j) {
    for (Index i = 0; i < k; ++i) {
      const double w = flipped(i, j);
      if (w == 0.0) continue;
      g.block(i, j, oh, ow) += w * out_grad;
    }
  }
  return g;
}

namespace {

Image convolve_same_with(const Image& img, const Kernel& kern, int force) {
  const Index k = kern.extent();
  require(k <= 2 * img.rows() && k <= 2 * img.cols(),
          "convolve_same: kernel larger than twice the image extent");
  const Index r = kern.radius();
  Image patch =
      gather_replicate(img, -r, -r, img.rows() + 2 * r, img.cols() + 2 * r);
  ConvPlan plan = plan_conv(kern.taps(), patch.rows(), patch.cols());
  const bool want_fft = force == 0 ? plan.use_fft : force == 2;
  if (want_fft && !plan.use_fft) {
    plan.use_fft = true;
    plan.fft_rows = next_pow2(plan.patch_rows);
    plan.fft_cols = next_pow2(plan.patch_cols);
    plan.khat = fft2_padded(plan.taps, plan.fft_rows, plan.fft_cols);
    plan.khat_adj =
        fft2_padded(flip_both(plan.taps), plan.fft_rows, plan.fft_cols);
  }
  plan.use_fft = want_fft;
  Image out = conv_valid(patch, plan);
  ensure_finite(out, "convolve_same");
  return out;
}

}  // namespace

Image convolve_same(const Image& img, const Kernel& k) {
  return convolve_same_with(img, k, 0);
}

Image convolve_same_spatial(const Image& img, const Kernel& k) {
  return convolve_same_with(img, k, 1);
}

Image convolve_same_fft(const Image& img, const Kernel& k) {
  return convolve_same_with(img, k, 2);
}

Image resample_bilinear(const Image& img, Index new_rows, Index new_cols) {
  require(new_rows >= 1 && new_cols >= 1, "resample_bilinear: empty target");
  const Index h = img.rows(), w = img.cols();
  auto src_coord = [](Index i, Index n_dst, Index n_src) {
    if (n_dst == 1 || n_src == 1) return 0.5 * static_cast<double>(n_src - 1);
    return static_cast<double>(i) * static_cast<double>(n_src - 1) /
           static_cast<double>(n_dst - 1);
  };
  Image out(new_rows, new_cols);
  for (Index c = 0; c < new_cols; ++c) {
    const double sx = src_coord(c, new_cols, w);
    const Index x0 = std::min<Index>(static_cast<Index>(sx), w - 1);
    const Index x1 = std::min<Index>(x0 + 1, w - 1);
    const double fx = sx - static_cast<double>(x0);
    for (Index r = 0; r < new_rows; ++r) {
      const double sy = src_coord(r, new_rows, h);
      const Index y0 = std::min<Index>(static_cast<Index>(sy), h - 1);
      const Index y1 = std::min<Index>(y0 + 1, h - 1);
      const double fy = sy - static_cast<double>(y0);
      out(r, c) = (1.0 - fy) * ((1.0 - fx) * img(y0, x0) + fx * img(y0, x1)) +
                  fy * ((1.0 - fx) * img(y1, x0) + fx * img(y1, x1));
    }
  }
  ensure_finite(out, "resample_bilinear");
  return out;
}

const Image& gaussian3_taps() {
  static const Image g = [] {
    Image t(3, 3);
    t << 1.0 / 16, 1.0 / 8, 1.0 / 16,  //
        1.0 / 8, 1.0 / 4, 1.0 / 8,     //
        1.0 / 16, 1.0 / 8, 1.0 / 16;
    return t;
  }();
  return g;
}

Image gaussian3_blur(const Image& img) {
  return convolve_same(img, Kernel(gaussian3_taps()));
}

namespace {

constexpr char kImageMagic[8] = {'M', 'P', 'I', 'D', 'I', 'M', 'G', '1'};

static_assert(std::endian::native == std::endian::little,
              "IMG1 writer assumes a little-endian host");

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace

void write_image_block(std::ostream& os, const Image& img) {
  os.write(kImageMagic, sizeof kImageMagic);
  write_u32(os, static_cast<std::uint32_t>(img.rows()));
  write_u32(os, static_cast<std::uint32_t>(img.cols()));
  std::vector<double> row(static_cast<std::size_t>(img.cols()));
  for (Index r = 0; r < img.rows(); ++r) {
    for (Index c = 0; c < img.cols(); ++c)
      row[static_cast<std::size_t>(c)] = img(r, c);
    os.write(reinterpret_cast<const char*>(row.data()),
             static_cast<std::streamsize>(row.size() * sizeof(double)));
  }
}

Image read_image_block(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kImageMagic, sizeof magic) != 0)
    throw std::runtime_error("read_image_block: bad IMG1 magic");
  const std::uint32_t h = read_u32(is);
  const std::uint32_t w = read_u32(is);
  if (!is || h == 0 || w == 0)
    throw std::runtime_error("read_image_block: bad IMG1 header");
  Image img(static_cast<Index>(h), static_cast<Index>(w));
  std::vector<double> row(w);
  for (std::uint32_t r = 0; r < h; ++r) {
    is.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(double)));
    if (!is) throw std::runtime_error("read_image_block: truncated IMG1 data");
    for (std::uint32_t c = 0; c < w; ++c) img(r, c) = row[c];
  }
  return img;
}

void save_image(const std::filesystem::path& path, const Image& img) {
  ensure_finite(img, "save_image");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_image: cannot open " + path.string());
  write_image_block(os, img);
  if (!os) throw std::runtime_error("save_image: write failed " + path.string());
}

Image load_image(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_image: cannot open " + path.string());
  Image img;
  try {
    img = read_image_block(is);
  } catch (const std::exception& e) {
    throw std::runtime_error(std::string(e.what()) + " in " + path.string());
  }
  ensure_finite(img, "load_image");
  return img;
}

}  // namespace mpid
