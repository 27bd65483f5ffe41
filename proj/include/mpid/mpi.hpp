#pragma once

#include "mpid/kernels.hpp"

#include <utility>
#include <vector>

namespace mpid {

struct MpiLayer {
  Image intensity;  // c_i >= 0
  Image alpha;      // in [0,1]
};

// Multiplane image: layers ordered back to front (index 0 is the
// farthest layer, which is pinned opaque), each with an intensity and
// alpha channel, plus one fixed defocus size per layer. Defocus sizes
// strictly decrease from back to front.
class Mpi {
 public:
  Mpi(std::vector<MpiLayer> layers_back_to_front,
      std::vector<double> defocus_sizes);

  Index layer_count() const { return static_cast<Index>(layers_.size()); }
  Index rows() const { return layers_.front().intensity.rows(); }
  Index cols() const { return layers_.front().intensity.cols(); }
  const MpiLayer& layer(Index i) const { return layers_[static_cast<std::size_t>(i)]; }
  const std::vector<double>& defocus_sizes() const { return defocus_sizes_; }

 private:
  std::vector<MpiLayer> layers_;
  std::vector<double> defocus_sizes_;
};

// Back-to-front defocus sizes linearly spaced from back_scale down to
// front_scale (defocus is linear in diopters for a thin lens).
std::vector<double> layer_defocus_sizes(Index n_layers, double front_scale,
                                        double back_scale);

struct Transmittance {
  std::vector<Image> per_layer;  // T_i = alpha_i * prod_{j>i} (1 - alpha_j)
};

Transmittance transmittances(const Mpi& mpi);

// All-in-focus composite: sum_i T_i c_i.
Image composite_sharp(const Mpi& mpi);

// Defocus map: sum_i T_i d_i.
Image composite_defocus_map(const Mpi& mpi);

// Defocused view through spatially-varying kernels:
//   sum_i ( K_{d_i} (*) (c_i a_i) ) .* prod_{j>i} (1 - K_{d_j} (*) a_j)
// Each occluder's alpha is blurred with its own layer kernel in the
// same view. Throws if occlusion products drift outside
// [-1e-9, 1+1e-9]; output negatives above -1e-9 clamp to zero.
Image render_defocused(const Mpi& mpi, const KernelGrid& grid);
std::pair<Image, Image> render_pair(const Mpi& mpi, const KernelGrid& left,
                                    const KernelGrid& right);

// MPIS1 checkpoint: magic "MPIDMPS1", u32 N, N f64 defocus sizes, then
// per layer an intensity IMG1 block followed by an alpha IMG1 block.
void save_mpi(const std::filesystem::path& path, const Mpi& mpi);
Mpi load_mpi(const std::filesystem::path& path);

}  // namespace mpid
