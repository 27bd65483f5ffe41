#include "mpid/losses.hpp"

#include <cmath>

namespace mpid {

void validate(const LossWeights& w) {
  for (double v : {w.data, w.aux, w.intensity, w.alpha, w.entropy}) {
    require(std::isfinite(v) && v >= 0.0,
            "LossWeights: weights must be finite and non-negative");
  }
}

double charbonnier(double x, double gamma) {
  return std::sqrt(x * x / (gamma * gamma) + 1.0);
}

Image charbonnier(const Image& x, double gamma) {
  return (x.square() / (gamma * gamma) + 1.0).sqrt();
}

double charbonnier_bias(double x, double b, double gamma) {
  return std::sqrt(
      std::max((x * x - b) / (gamma * gamma) + 1.0, kCharbonnierFloor));
}

Image charbonnier_bias(const Image& x, double b, double gamma) {
  return ((x.square() - b) / (gamma * gamma) + 1.0)
      .max(kCharbonnierFloor)
      .sqrt();
}

Image charbonnier_bias(const Image& x, const Image& b, double gamma) {
  require(same_extents(x, b), "charbonnier_bias: extents differ");
  return ((x.square() - b) / (gamma * gamma) + 1.0)
      .max(kCharbonnierFloor)
      .sqrt();
}

namespace {

Image windowed_variance(const Image& img) {
  Image mean = gaussian3_blur(img);
  Image meansq = gaussian3_blur(img.square().eval());
  return (meansq - mean.square()).max(0.0);
}

}  // namespace

Image tv(const Image& img) { return windowed_variance(img).sqrt(); }

Image edge_mask(const Image& img, double beta) {
  require(beta > 0.0, "edge_mask: beta must be positive");
  return 1.0 - (-windowed_variance(img) / (2.0 * beta * beta)).exp();
}

double tv_edge(const Image& img, const Image& mask, double gamma) {
  require(same_extents(img, mask), "tv_edge: extents differ");
  Image rho = (windowed_variance(img) / (gamma * gamma) + 1.0).sqrt();
  return ((2.0 - mask) * rho).sum();
}

Image collision_entropy(const std::vector<Image>& stack) {
  require(!stack.empty(), "collision_entropy: empty stack");
  for (const Image& v : stack) {
    require(same_extents(v, stack.front()),
            "collision_entropy: extents differ");
    require((v >= 0.0).all(), "collision_entropy: negative entry");
  }
  Image l1 = Image::Zero(stack.front().rows(), stack.front().cols());
  Image l2 = l1;
  for (const Image& v : stack) {
    l1 += v;
    l2 += v.square();
  }
  Image out(l1.rows(), l1.cols());
  for (Index c = 0; c < l1.cols(); ++c) {
    for (Index r = 0; r < l1.rows(); ++r) {
      out(r, c) = l1(r, c) > 0.0
                      ? std::log(l1(r, c) * l1(r, c) / l2(r, c))
                      : 0.0;
    }
  }
  return out;
}

RenderPlans RenderPlans::build(const KernelGrid& left, const KernelGrid& right,
                               const std::vector<double>& defocus_sizes,
                               Index rows, Index cols) {
  RenderPlans plans;
  for (double d : defocus_sizes) {
    plans.left.push_back(
        std::make_shared<TiledConvPlan>(plan_tiled_conv(left, d, rows, cols)));
    plans.right.push_back(
        std::make_shared<TiledConvPlan>(plan_tiled_conv(right, d, rows, cols)));
  }
  return plans;
}

MpiVars mpi_constants(Tape& tape, const Mpi& mpi) {
  MpiVars vars;
  for (Index i = 0; i < mpi.layer_count(); ++i) {
    vars.intensity.push_back(tape.constant(mpi.layer(i).intensity));
    vars.alpha.push_back(tape.constant(mpi.layer(i).alpha));
  }
  return vars;
}

std::vector<Var> build_transmittances(const MpiVars& vars) {
  const Index n = static_cast<Index>(vars.alpha.size());
  Tape& tape = *vars.alpha.front().tape;
  const Image& front_val = vars.alpha.front().value();
  std::vector<Var> trans(static_cast<std::size_t>(n));
  Var occ = tape.constant(Image::Ones(front_val.rows(), front_val.cols()));
  for (Index i = n - 1; i >= 0; --i) {
    trans[static_cast<std::size_t>(i)] =
        vars.alpha[static_cast<std::size_t>(i)] * occ;
    if (i > 0) occ = occ * (1.0 - vars.alpha[static_cast<std::size_t>(i)]);
  }
  return trans;
}

Var build_sharp(const MpiVars& vars, const std::vector<Var>& trans) {
  Var out = trans[0] * vars.intensity[0];
  for (std::size_t i = 1; i < trans.size(); ++i)
    out = out + trans[i] * vars.intensity[i];
  return out;
}

RenderVars build_render(
    Tape& tape, const MpiVars& vars,
    const std::vector<std::shared_ptr<const TiledConvPlan>>& plans,
    const BiasTable& bias) {
  const Index n = static_cast<Index>(vars.alpha.size());
  require(static_cast<Index>(plans.size()) == n &&
              static_cast<Index>(bias.values.size()) == n,
          "build_render: plan/bias/layer counts differ");
  const Image& ref = vars.alpha.front().value();
  Var rendered = tape.constant(Image::Zero(ref.rows(), ref.cols()));
  Var bias_all = tape.constant(Image::Zero(ref.rows(), ref.cols()));
  Var occ = tape.constant(Image::Ones(ref.rows(), ref.cols()));
  for (Index i = n - 1; i >= 0; --i) {
    const auto idx = static_cast<std::size_t>(i);
    Var blurred_front =
        apply_tiled(plans[idx], vars.intensity[idx] * vars.alpha[idx]);
    Var blurred_alpha = apply_tiled(plans[idx], vars.alpha[idx]);
    rendered = rendered + blurred_front * occ;
    bias_all = bias_all + bias.values[idx] * (blurred_alpha * occ);
    if (i > 0) occ = occ * (1.0 - blurred_alpha);
  }
  return {rendered, bias_all};
}

namespace {

Var rho_bias(Var x, Var b, double gamma) {
  return sqrt(clamp_min((square(x) - b) * (1.0 / (gamma * gamma)) + 1.0,
                        kCharbonnierFloor));
}

Var rho_bias(Var x, double b, double gamma) {
  return sqrt(clamp_min((square(x) - b) * (1.0 / (gamma * gamma)) + 1.0,
                        kCharbonnierFloor));
}

struct GaussPlan {
  std::shared_ptr<const ConvPlan> plan;
  Index rows, cols;
};

GaussPlan gauss_plan(Index rows, Index cols) {
  return {std::make_shared<const ConvPlan>(
              plan_conv(gaussian3_taps(), rows + 2, cols + 2)),
          rows, cols};
}

Var blur_g(const GaussPlan& gp, Var img) {
  Var patch = gather(img, -1, -1, gp.rows + 2, gp.cols + 2);
  return conv_valid(patch, gp.plan);
}

Var variance_var(const GaussPlan& gp, Var img) {
  return clamp_min(blur_g(gp, square(img)) - square(blur_g(gp, img)), 0.0);
}

Var rho_of_variance(Var v, double gamma) {
  return sqrt(v * (1.0 / (gamma * gamma)) + 1.0);
}

Var edge_of_variance(Var v, double beta) {
  return 1.0 - exp(v * (-1.0 / (2.0 * beta * beta)));
}

Var tv_edge_var(const GaussPlan& gp, Var img, Var mask, double gamma) {
  return sum((2.0 - mask) * rho_of_variance(variance_var(gp, img), gamma));
}

}  // namespace

DataLossVars build_data_losses(Tape& tape, const MpiVars& vars,
                               const RenderPlans& plans, const Image& obs_left,
                               const Image& obs_right, const BiasTable& bias) {
  std::vector<Var> trans = build_transmittances(vars);
  const Index n = static_cast<Index>(vars.alpha.size());
  Var data{}, aux{};
  bool first = true;
  for (int side = 0; side < 2; ++side) {
    const auto& side_plans = side == 0 ? plans.left : plans.right;
    const Image& obs_img = side == 0 ? obs_left : obs_right;
    Var obs = tape.constant(obs_img);
    RenderVars rv = build_render(tape, vars, side_plans, bias);
    Var d = sum(rho_bias(rv.rendered - obs, rv.bias_all, kCharbonnierScale));
    Var a{};
    for (Index i = 0; i < n; ++i) {
      const auto idx = static_cast<std::size_t>(i);
      Var weight = apply_tiled(side_plans[idx], trans[idx]);
      Var resid = apply_tiled(side_plans[idx], vars.intensity[idx]) - obs;
      Var term = sum(weight * rho_bias(resid, bias.values[idx],
                                       kCharbonnierScale));
      a = i == 0 ? term : a + term;
    }
    if (first) {
      data = d;
      aux = a;
      first = false;
    } else {
      data = data + d;
      aux = aux + a;
    }
  }
  return {data, aux};
}

PriorLossVars build_prior_losses(Tape& tape, const MpiVars& vars) {
  const Index n = static_cast<Index>(vars.alpha.size());
  const Image& ref = vars.alpha.front().value();
  GaussPlan gp = gauss_plan(ref.rows(), ref.cols());

  std::vector<Var> trans = build_transmittances(vars);
  Var sharp = build_sharp(vars, trans);
  Var edge_sharp = edge_of_variance(variance_var(gp, sharp), kEdgeBeta);

  // Intensity smoothness on the composite and the weighted layers.
  Var intensity = tv_edge_var(gp, sharp, edge_sharp, kCharbonnierScale);
  for (Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    Var weighted = trans[idx] * vars.intensity[idx];
    Var mask = edge_of_variance(variance_var(gp, weighted), kEdgeBeta);
    intensity = intensity + tv_edge_var(gp, weighted, mask, kCharbonnierScale);
  }

  // Alpha/transmittance smoothness, sharpened by square roots, masked
  // by the all-in-focus edges.
  Var alpha{};
  for (Index i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(i);
    Var sa = sqrt(vars.alpha[idx] + kSharpenEps);
    Var st = sqrt(trans[idx] + kSharpenEps);
    Var term = tv_edge_var(gp, sa, edge_sharp, kCharbonnierScale) +
               tv_edge_var(gp, st, edge_sharp, kCharbonnierScale);
    alpha = i == 0 ? term : alpha + term;
  }

  // Collision entropy of the sharpened alpha stack (skipping the pinned
  // back layer) and the sharpened transmittance stack, averaged over
  // pixels: S = log(|x|_1^2) - log(|x|_2^2).
  auto stack_entropy = [&](const std::vector<Var>& stack) -> Var {
    Var l1 = stack[0];
    Var l2 = square(stack[0]);
    for (std::size_t i = 1; i < stack.size(); ++i) {
      l1 = l1 + stack[i];
      l2 = l2 + square(stack[i]);
    }
    return mean(log(square(l1)) - log(l2));
  };
  std::vector<Var> alpha_stack, trans_stack;
  for (Index i = 1; i < n; ++i)
    alpha_stack.push_back(
        sqrt(vars.alpha[static_cast<std::size_t>(i)] + kSharpenEps));
  for (Index i = 0; i < n; ++i)
    trans_stack.push_back(
        sqrt(trans[static_cast<std::size_t>(i)] + kSharpenEps));
  Var entropy = stack_entropy(trans_stack);
  if (!alpha_stack.empty()) entropy = entropy + stack_entropy(alpha_stack);

  return {intensity, alpha, entropy};
}

LossTermVars build_loss(Tape& tape, const MpiVars& vars,
                        const RenderPlans& plans, const Image& obs_left,
                        const Image& obs_right, const BiasTable& bias,
                        const LossWeights& weights) {
  validate(weights);
  DataLossVars d = build_data_losses(tape, vars, plans, obs_left, obs_right,
                                     bias);
  PriorLossVars p = build_prior_losses(tape, vars);
  Var total = weights.data * d.data + weights.aux * d.aux +
              weights.intensity * p.intensity + weights.alpha * p.alpha +
              weights.entropy * p.entropy;
  return {d.data, d.aux, p.intensity, p.alpha, p.entropy, total};
}

namespace {

LossTermVars run_full(Tape& tape, const Mpi& mpi, const KernelGrid& left,
                      const KernelGrid& right, const Image& obs_left,
                      const Image& obs_right, const BiasTable& bias,
                      const LossWeights& weights) {
  require(same_extents(obs_left, obs_right) &&
              obs_left.rows() == mpi.rows() && obs_left.cols() == mpi.cols(),
          "loss: observation extents differ from the MPI");
  MpiVars vars = mpi_constants(tape, mpi);
  RenderPlans plans = RenderPlans::build(left, right, mpi.defocus_sizes(),
                                         mpi.rows(), mpi.cols());
  return build_loss(tape, vars, plans, obs_left, obs_right, bias, weights);
}

}  // namespace

double loss_data(const Mpi& mpi, const KernelGrid& left,
                 const KernelGrid& right, const Image& obs_left,
                 const Image& obs_right, const BiasTable& bias) {
  Tape tape;
  return run_full(tape, mpi, left, right, obs_left, obs_right, bias, {})
      .data.value()(0, 0);
}

double loss_aux(const Mpi& mpi, const KernelGrid& left,
                const KernelGrid& right, const Image& obs_left,
                const Image& obs_right, const BiasTable& bias) {
  Tape tape;
  return run_full(tape, mpi, left, right, obs_left, obs_right, bias, {})
      .aux.value()(0, 0);
}

double loss_intensity(const Mpi& mpi) {
  Tape tape;
  MpiVars vars = mpi_constants(tape, mpi);
  return build_prior_losses(tape, vars).intensity.value()(0, 0);
}

double loss_alpha(const Mpi& mpi) {
  Tape tape;
  MpiVars vars = mpi_constants(tape, mpi);
  return build_prior_losses(tape, vars).alpha.value()(0, 0);
}

double loss_entropy(const Mpi& mpi) {
  Tape tape;
  MpiVars vars = mpi_constants(tape, mpi);
  return build_prior_losses(tape, vars).entropy.value()(0, 0);
}

LossBreakdown loss_total(const Mpi& mpi, const KernelGrid& left,
                         const KernelGrid& right, const Image& obs_left,
                         const Image& obs_right, const BiasTable& bias,
                         const LossWeights& weights) {
  Tape tape;
  LossTermVars t =
      run_full(tape, mpi, left, right, obs_left, obs_right, bias, weights);
  LossBreakdown out;
  out.data = t.data.value()(0, 0);
  out.aux = t.aux.value()(0, 0);
  out.intensity = t.intensity.value()(0, 0);
  out.alpha = t.alpha.value()(0, 0);
  out.entropy = t.entropy.value()(0, 0);
  out.total = t.total.value()(0, 0);
  return out;
}

}  // namespace mpid
