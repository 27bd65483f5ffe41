#pragma once

#include <Eigen/Core>

#include <functional>
#include <stdexcept>
#include <string>

namespace mpid {

// Single-channel image: rows = height (y), cols = width (x).
// Stored as double; serialization is row-major (see io in numerics.hpp).
using Image = Eigen::ArrayXXd;

// Complex frequency-domain field, same indexing convention as Image.
using Spectrum = Eigen::ArrayXXcd;

using Index = Eigen::Index;

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline void ensure_finite(const Image& img, const char* what) {
  if (!img.isFinite().all())
    throw std::runtime_error(std::string(what) + ": non-finite values");
}

inline bool same_extents(const Image& a, const Image& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

// Horizontal mirror (x -> W-1-x).
inline Image flip_cols(const Image& img) { return img.rowwise().reverse(); }

// 180-degree rotation, used for convolution adjoints.
inline Image flip_both(const Image& img) {
  return img.rowwise().reverse().colwise().reverse();
}

// Maximum worker count for internal parallel loops. Reads
// MPIDEFOCUS_THREADS once; results never depend on the value.
int thread_cap();

// Runs fn(i) for i in [0, n). Static row partition, disjoint writes only;
// falls back to serial when nested or when n is small.
void parallel_for(Index n, const std::function<void(Index)>& fn);

}  // namespace mpid
