#include "mpid/mpi.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace mpid {

Mpi::Mpi(std::vector<MpiLayer> layers_back_to_front,
         std::vector<double> defocus_sizes)
    : layers_(std::move(layers_back_to_front)),
      defocus_sizes_(std::move(defocus_sizes)) {
  require(!layers_.empty(), "Mpi: no layers");
  require(layers_.size() == defocus_sizes_.size(),
          "Mpi: layer/defocus count mismatch");
  const Image& first = layers_.front().intensity;
  for (const MpiLayer& l : layers_) {
    require(same_extents(l.intensity, first) && same_extents(l.alpha, first),
            "Mpi: layer extents differ");
    require((l.intensity >= 0.0).all(), "Mpi: negative intensity");
    require((l.alpha >= 0.0).all() && (l.alpha <= 1.0).all(),
            "Mpi: alpha outside [0,1]");
    ensure_finite(l.intensity, "Mpi intensity");
    ensure_finite(l.alpha, "Mpi alpha");
  }
  require((layers_.front().alpha == 1.0).all(),
          "Mpi: farthest layer must be opaque");
  for (std::size_t i = 0; i + 1 < defocus_sizes_.size(); ++i) {
    require(defocus_sizes_[i] > defocus_sizes_[i + 1],
            "Mpi: defocus sizes must strictly decrease back to front");
  }
  require(defocus_sizes_.back() > 0.0, "Mpi: defocus sizes must be positive");
}

std::vector<double> layer_defocus_sizes(Index n_layers, double front_scale,
                                        double back_scale) {
  require(n_layers >= 1, "layer_defocus_sizes: need at least one layer");
  require(front_scale > 0.0 && back_scale > front_scale,
          "layer_defocus_sizes: need back_scale > front_scale > 0");
  std::vector<double> d(static_cast<std::size_t>(n_layers));
  if (n_layers == 1) {
    d[0] = back_scale;
    return d;
  }
  for (Index i = 0; i < n_layers; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n_layers - 1);
    d[static_cast<std::size_t>(i)] = back_scale + t * (front_scale - back_scale);
  }
  return d;
}

Transmittance transmittances(const Mpi& mpi) {
  const Index n = mpi.layer_count();
  Transmittance t;
  t.per_layer.resize(static_cast<std::size_t>(n));
  Image occ = Image::Ones(mpi.rows(), mpi.cols());
  for (Index i = n - 1; i >= 0; --i) {
    t.per_layer[static_cast<std::size_t>(i)] = mpi.layer(i).alpha * occ;
    occ *= 1.0 - mpi.layer(i).alpha;
  }
  return t;
}

Image composite_sharp(const Mpi& mpi) {
  Transmittance t = transmittances(mpi);
  Image out = Image::Zero(mpi.rows(), mpi.cols());
  for (Index i = 0; i < mpi.layer_count(); ++i)
    out += t.per_layer[static_cast<std::size_t>(i)] * mpi.layer(i).intensity;
  return out;
}

Image composite_defocus_map(const Mpi& mpi) {
  Transmittance t = transmittances(mpi);
  Image out = Image::Zero(mpi.rows(), mpi.cols());
  for (Index i = 0; i < mpi.layer_count(); ++i)
    out += t.per_layer[static_cast<std::size_t>(i)] *
           mpi.defocus_sizes()[static_cast<std::size_t>(i)];
  return out;
}

Image render_defocused(const Mpi& mpi, const KernelGrid& grid) {
  require(grid.coverage_rows() >= mpi.rows() &&
              grid.coverage_cols() >= mpi.cols(),
          "render_defocused: grid coverage smaller than image");
  const Index n = mpi.layer_count();
  Image out = Image::Zero(mpi.rows(), mpi.cols());
  Image occ = Image::Ones(mpi.rows(), mpi.cols());
  for (Index i = n - 1; i >= 0; --i) {
    const double d = mpi.defocus_sizes()[static_cast<std::size_t>(i)];
    TiledConvPlan plan = plan_tiled_conv(grid, d, mpi.rows(), mpi.cols());
    Image blurred_front =
        apply_tiled_conv(plan, (mpi.layer(i).intensity * mpi.layer(i).alpha).eval());
    out += blurred_front * occ;
    if (i > 0) {
      Image blurred_alpha = apply_tiled_conv(plan, mpi.layer(i).alpha);
      occ *= 1.0 - blurred_alpha;
      require(occ.minCoeff() >= -1e-9 && occ.maxCoeff() <= 1.0 + 1e-9,
              "render_defocused: occlusion product drifted outside [0,1]");
    }
  }
  require(out.minCoeff() >= -1e-9,
          "render_defocused: negative rendered intensity");
  return out.max(0.0);
}

std::pair<Image, Image> render_pair(const Mpi& mpi, const KernelGrid& left,
                                    const KernelGrid& right) {
  return {render_defocused(mpi, left), render_defocused(mpi, right)};
}

namespace {

constexpr char kMpiMagic[8] = {'M', 'P', 'I', 'D', 'M', 'P', 'S', '1'};

}  // namespace

void save_mpi(const std::filesystem::path& path, const Mpi& mpi) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_mpi: cannot open " + path.string());
  os.write(kMpiMagic, sizeof kMpiMagic);
  const std::uint32_t n = static_cast<std::uint32_t>(mpi.layer_count());
  os.write(reinterpret_cast<const char*>(&n), sizeof n);
  for (double d : mpi.defocus_sizes())
    os.write(reinterpret_cast<const char*>(&d), sizeof d);
  for (Index i = 0; i < mpi.layer_count(); ++i) {
    write_image_block(os, mpi.layer(i).intensity);
    write_image_block(os, mpi.layer(i).alpha);
  }
  if (!os) throw std::runtime_error("save_mpi: write failed " + path.string());
}

Mpi load_mpi(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_mpi: cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kMpiMagic, sizeof magic) != 0)
    throw std::runtime_error("load_mpi: bad magic in " + path.string());
  std::uint32_t n = 0;
  is.read(reinterpret_cast<char*>(&n), sizeof n);
  if (!is || n == 0 || n > 4096)
    throw std::runtime_error("load_mpi: bad layer count in " + path.string());
  std::vector<double> d(n);
  is.read(reinterpret_cast<char*>(d.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!is) throw std::runtime_error("load_mpi: truncated " + path.string());
  std::vector<MpiLayer> layers;
  layers.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    MpiLayer l;
    l.intensity = read_image_block(is);
    l.alpha = read_image_block(is);
    layers.push_back(std::move(l));
  }
  return Mpi(std::move(layers), std::move(d));
}

}  // namespace mpid
