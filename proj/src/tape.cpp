#include "mpid/tape.hpp"

#include <cmath>

namespace mpid {

const Image& Var::value() const {
  require(tape != nullptr, "Var: empty handle");
  return tape->value(*this);
}

Var Tape::input(Image v) {
  nodes_.push_back(Node{std::move(v), {}, true, nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Image v) {
  nodes_.push_back(Node{std::move(v), {}, false, nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::make(Image value, const std::vector<Var>& parents, BackFn back) {
  bool needs = false;
  for (const Var& p : parents) {
    require(p.tape == this, "Tape::make: parent from another tape");
    needs = needs || nodes_[static_cast<std::size_t>(p.id)].needs_grad;
  }
  nodes_.push_back(
      Node{std::move(value), {}, needs, needs ? std::move(back) : nullptr});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var root) {
  require(root.tape == this, "Tape::backward: foreign root");
  Node& r = nodes_[static_cast<std::size_t>(root.id)];
  require(r.value.rows() == 1 && r.value.cols() == 1,
          "Tape::backward: root must be scalar (1x1)");
  r.grad = Image::Ones(1, 1);
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() == 0 || !n.back) continue;
    n.back(*this, n.grad);
  }
}

const Image& Tape::value(Var v) const {
  return nodes_[static_cast<std::size_t>(v.id)].value;
}

bool Tape::has_grad(Var v) const {
  return nodes_[static_cast<std::size_t>(v.id)].grad.size() != 0;
}

Image Tape::grad(Var v) const {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.size() == 0)
    return Image::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(int id, const Image& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0)
    n.grad = g;
  else
    n.grad += g;
}

namespace {

void check_same(const Var& a, const Var& b, const char* what) {
  require(a.tape == b.tape, "tape op: mixed tapes");
  require(same_extents(a.value(), b.value()), what);
}

}  // namespace

Var operator+(Var a, Var b) {
  check_same(a, b, "operator+: extents differ");
  return a.tape->make(a.value() + b.value(), {a, b},
                      [pa = a.id, pb = b.id](Tape& t, const Image& g) {
                        t.accumulate(pa, g);
                        t.accumulate(pb, g);
                      });
}

Var operator-(Var a, Var b) {
  check_same(a, b, "operator-: extents differ");
  return a.tape->make(a.value() - b.value(), {a, b},
                      [pa = a.id, pb = b.id](Tape& t, const Image& g) {
                        t.accumulate(pa, g);
                        t.accumulate(pb, (-g).eval());
                      });
}

Var operator*(Var a, Var b) {
  check_same(a, b, "operator*: extents differ");
  return a.tape->make(a.value() * b.value(), {a, b},
                      [pa = a.id, pb = b.id](Tape& t, const Image& g) {
                        t.accumulate(pa, (g * t.value(Var{&t, pb})).eval());
                        t.accumulate(pb, (g * t.value(Var{&t, pa})).eval());
                      });
}

Var operator+(Var a, double s) {
  return a.tape->make(a.value() + s, {a},
                      [pa = a.id](Tape& t, const Image& g) {
                        t.accumulate(pa, g);
                      });
}
Var operator+(double s, Var a) { return a + s; }

Var operator-(Var a, double s) { return a + (-s); }

Var operator-(double s, Var a) {
  return a.tape->make(s - a.value(), {a},
                      [pa = a.id](Tape& t, const Image& g) {
                        t.accumulate(pa, (-g).eval());
                      });
}

Var operator*(double s, Var a) {
  return a.tape->make(s * a.value(), {a},
                      [pa = a.id, s](Tape& t, const Image& g) {
                        t.accumulate(pa, (s * g).eval());
                      });
}
Var operator*(Var a, double s) { return s * a; }

Var square(Var a) {
  return a.tape->make(a.value().square(), {a},
                      [pa = a.id](Tape& t, const Image& g) {
                        t.accumulate(pa, (2.0 * t.value(Var{&t, pa}) * g).eval());
                      });
}

Var sqrt(Var a) {
  Image v = a.value().sqrt();
  return a.tape->make(std::move(v), {a},
                      [pa = a.id, self = static_cast<int>(a.tape->size())](
                          Tape& t, const Image& g) {
                        t.accumulate(pa, (0.5 * g / t.value(Var{&t, self})).eval());
                      });
}

Var exp(Var a) {
  Image v = a.value().exp();
  return a.tape->make(std::move(v), {a},
                      [pa = a.id, self = static_cast<int>(a.tape->size())](
                          Tape& t, const Image& g) {
                        t.accumulate(pa, (g * t.value(Var{&t, self})).eval());
                      });
}

Var log(Var a) {
  return a.tape->make(a.value().log(), {a},
                      [pa = a.id](Tape& t, const Image& g) {
                        t.accumulate(pa, (g / t.value(Var{&t, pa})).eval());
                      });
}

Var clamp_min(Var a, double lo) {
  return a.tape->make(a.value().max(lo), {a},
                      [pa = a.id, lo](Tape& t, const Image& g) {
                        const Image& av = t.value(Var{&t, pa});
                        t.accumulate(pa, (av > lo).select(g, 0.0).eval());
                      });
}

Var logistic(Var a) {
  Image v = a.value().unaryExpr([](double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  return a.tape->make(std::move(v), {a},
                      [pa = a.id, self = static_cast<int>(a.tape->size())](
                          Tape& t, const Image& g) {
                        const Image& s = t.value(Var{&t, self});
                        t.accumulate(pa, (g * s * (1.0 - s)).eval());
                      });
}

Var softplus(Var a) {
  Image v = a.value().unaryExpr([](double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  });
  return a.tape->make(std::move(v), {a},
                      [pa = a.id](Tape& t, const Image& g) {
                        const Image& x = t.value(Var{&t, pa});
                        Image s = x.unaryExpr([](double xv) {
                          if (xv >= 0.0) return 1.0 / (1.0 + std::exp(-xv));
                          const double e = std::exp(xv);
                          return e / (1.0 + e);
                        });
                        t.accumulate(pa, (g * s).eval());
                      });
}

Var sum(Var a) {
  Image v(1, 1);
  v(0, 0) = a.value().sum();
  const Index rows = a.value().rows(), cols = a.value().cols();
  return a.tape->make(std::move(v), {a},
                      [pa = a.id, rows, cols](Tape& t, const Image& g) {
                        t.accumulate(pa, Image::Constant(rows, cols, g(0, 0)));
                      });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return (1.0 / n) * sum(a);
}

Var gather(Var a, Index row0, Index col0, Index rows, Index cols) {
  Image v = gather_replicate(a.value(), row0, col0, rows, cols);
  const Index src_rows = a.value().rows(), src_cols = a.value().cols();
  return a.tape->make(
      std::move(v), {a},
      [pa = a.id, row0, col0, rows, cols, src_rows, src_cols](Tape& t,
                                                              const Image& g) {
        if (!t.requires_grad(pa)) return;
        Image acc = Image::Zero(src_rows, src_cols);
        for (Index c = 0; c < cols; ++c) {
          const Index sc = std::clamp<Index>(col0 + c, 0, src_cols - 1);
          for (Index r = 0; r < rows; ++r) {
            const Index sr = std::clamp<Index>(row0 + r, 0, src_rows - 1);
            acc(sr, sc) += g(r, c);
          }
        }
        t.accumulate(pa, acc);
      });
}

namespace {

Var conv_valid_node(Var patch, std::shared_ptr<const void> owner,
                    const ConvPlan* plan) {
  Image v = conv_valid(patch.value(), *plan);
  return patch.tape->make(std::move(v), {patch},
                          [pa = patch.id, owner = std::move(owner), plan](
                              Tape& t, const Image& g) {
                            if (!t.requires_grad(pa)) return;
                            t.accumulate(pa, conv_valid_adjoint(g, *plan));
                          });
}

}  // namespace

Var conv_valid(Var patch, std::shared_ptr<const TiledConvPlan> plan_owner,
               const ConvPlan* plan) {
  return conv_valid_node(patch, std::move(plan_owner), plan);
}

Var conv_valid(Var patch, std::shared_ptr<const ConvPlan> plan) {
  const ConvPlan* raw = plan.get();
  return conv_valid_node(patch, std::move(plan), raw);
}

Var cmul(Var a, std::shared_ptr<const Image> w) {
  require(same_extents(a.value(), *w), "cmul: extents differ");
  Image v = a.value() * (*w);
  return a.tape->make(std::move(v), {a},
                      [pa = a.id, w = std::move(w)](Tape& t, const Image& g) {
                        t.accumulate(pa, (g * (*w)).eval());
                      });
}

Var overlay_sum(Tape& tape, const std::vector<Placed>& patches, Index rows,
                Index cols) {
  Image v = Image::Zero(rows, cols);
  std::vector<Var> parents;
  parents.reserve(patches.size());
  struct Slot {
    int id;
    Index row0, col0, rows, cols;
  };
  std::vector<Slot> slots;
  slots.reserve(patches.size());
  for (const Placed& p : patches) {
    const Image& pv = p.patch.value();
    require(p.row0 >= 0 && p.col0 >= 0 && p.row0 + pv.rows() <= rows &&
                p.col0 + pv.cols() <= cols,
            "overlay_sum: patch outside canvas");
    v.block(p.row0, p.col0, pv.rows(), pv.cols()) += pv;
    parents.push_back(p.patch);
    slots.push_back({p.patch.id, p.row0, p.col0, pv.rows(), pv.cols()});
  }
  return tape.make(std::move(v), parents,
                   [slots = std::move(slots)](Tape& t, const Image& g) {
                     for (const Slot& s : slots) {
                       t.accumulate(
                           s.id, g.block(s.row0, s.col0, s.rows, s.cols).eval());
                     }
                   });
}

Var apply_tiled(std::shared_ptr<const TiledConvPlan> plan, Var x) {
  require(x.value().rows() == plan->img_rows &&
              x.value().cols() == plan->img_cols,
          "apply_tiled: image extents differ from plan");
  std::vector<Placed> placed;
  placed.reserve(plan->nodes.size());
  for (const TiledNode& node : plan->nodes) {
    Var patch = gather(x, node.row0 - node.radius, node.col0 - node.radius,
                       node.rows + 2 * node.radius,
                       node.cols + 2 * node.radius);
    Var conv = conv_valid(patch, plan, &node.conv);
    Var weighted = cmul(conv, node.weight);
    placed.push_back({weighted, node.row0, node.col0});
  }
  return overlay_sum(*x.tape, placed, plan->img_rows, plan->img_cols);
}

}  // namespace mpid
