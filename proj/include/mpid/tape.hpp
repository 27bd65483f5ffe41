#pragma once

#include "mpid/kernels.hpp"

#include <deque>
#include <functional>
#include <memory>
#include <vector>

namespace mpid {

class Tape;

// Handle to a tape node. Values are whole images; scalars are 1x1.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  const Image& value() const;
};

// Reverse-mode tape over image-valued nodes. Values are computed
// eagerly at record time; backward() walks the recorded closures in
// reverse. Convolutions carry custom adjoints (correlation with the
// flipped kernel); gathers scatter-add through their clamped indexing.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var input(Image v);     // differentiable leaf
  Var constant(Image v);  // non-differentiable leaf

  using BackFn = std::function<void(Tape&, const Image& grad)>;
  Var make(Image value, const std::vector<Var>& parents, BackFn back);

  void backward(Var root);

  const Image& value(Var v) const;
  bool has_grad(Var v) const;
  // Gradient accumulated for v; zeros if the node was never touched.
  Image grad(Var v) const;

  void accumulate(int id, const Image& g);
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Image value;
    Image grad;
    bool needs_grad = false;
    BackFn back;
  };
  std::deque<Node> nodes_;  // stable references across growth
};

// Elementwise arithmetic.
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator+(Var a, double s);
Var operator+(double s, Var a);
Var operator-(Var a, double s);
Var operator-(double s, Var a);
Var operator*(double s, Var a);
Var operator*(Var a, double s);

Var square(Var a);
Var sqrt(Var a);  // caller keeps the argument strictly positive
Var exp(Var a);
Var log(Var a);
// max(a, lo) with zero subgradient inside the clamp.
Var clamp_min(Var a, double lo);
Var logistic(Var a);
Var softplus(Var a);

Var sum(Var a);   // 1x1
Var mean(Var a);  // 1x1

// Replicate-extend crop; adjoint scatter-adds into the clamped pixels.
Var gather(Var a, Index row0, Index col0, Index rows, Index cols);

// Full-overlap convolution with a constant kernel plan.
Var conv_valid(Var patch, std::shared_ptr<const TiledConvPlan> plan_owner,
               const ConvPlan* plan);
Var conv_valid(Var patch, std::shared_ptr<const ConvPlan> plan);

// Elementwise product with a constant field.
Var cmul(Var a, std::shared_ptr<const Image> w);

// Sum of patches placed at fixed offsets on a rows x cols canvas.
struct Placed {
  Var patch;
  Index row0 = 0, col0 = 0;
};
Var overlay_sum(Tape& tape, const std::vector<Placed>& patches, Index rows,
                Index cols);

// Spatially-varying convolution through a tiled plan (the differentiable
// counterpart of apply_tiled_conv).
Var apply_tiled(std::shared_ptr<const TiledConvPlan> plan, Var x);

}  // namespace mpid
