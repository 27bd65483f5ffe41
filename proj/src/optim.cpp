#include "mpid/optim.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace mpid {

void validate(const OptimConfig& config) {
  require(config.iterations >= 1, "OptimConfig: iterations must be >= 1");
  require(config.lr_start > 0.0 && config.lr_end > 0.0 &&
              config.lr_end <= config.lr_start,
          "OptimConfig: need 0 < lr_end <= lr_start");
  require(config.layers >= 1, "OptimConfig: need at least one layer");
  require(config.front_scale > 0.0 && config.back_scale > 0.0,
          "OptimConfig: defocus scales must be positive (d >= 0 only)");
  require(config.layers == 1 || config.back_scale > config.front_scale,
          "OptimConfig: back_scale must exceed front_scale");
  require(config.beta1 >= 0.0 && config.beta1 < 1.0 && config.beta2 >= 0.0 &&
              config.beta2 < 1.0 && config.epsilon > 0.0,
          "OptimConfig: bad Adam constants");
  require(config.checkpoint_every >= 1, "OptimConfig: bad checkpoint period");
  validate(config.weights);
  validate(config.prior);
}

NormalizedPair normalize_inputs(const Image& left, const Image& right) {
  require(same_extents(left, right), "normalize_inputs: extents differ");
  const double mean =
      (left.sum() + right.sum()) / static_cast<double>(2 * left.size());
  require(mean > 0.0, "normalize_inputs: non-positive mean intensity");
  NormalizedPair out;
  out.scale = 0.5 / mean;
  out.left = out.scale * left;
  out.right = out.scale * right;
  return out;
}

namespace {

double logistic_scalar(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_scalar(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  require(y > 0.0, "encode: softplus inverse needs positive intensity");
  // log(e^y - 1) computed stably on both tails.
  return y > 20.0 ? y : std::log(std::expm1(y));
}

double logit(double p) {
  require(p > 0.0 && p < 1.0, "encode: logit needs alpha in (0,1)");
  return std::log(p / (1.0 - p));
}

}  // namespace

Mpi decode(const Params& params) {
  require(!params.u_intensity.empty(), "decode: empty params");
  require(params.u_alpha.size() + 1 == params.u_intensity.size(),
          "decode: alpha field count must be layer count minus one");
  std::vector<MpiLayer> layers;
  const Index rows = params.u_intensity.front().rows();
  const Index cols = params.u_intensity.front().cols();
  for (std::size_t i = 0; i < params.u_intensity.size(); ++i) {
    MpiLayer layer;
    layer.intensity =
        params.u_intensity[i].unaryExpr([](double x) { return softplus_scalar(x); });
    if (i == 0) {
      layer.alpha = Image::Ones(rows, cols);
    } else {
      layer.alpha = params.u_alpha[i - 1].unaryExpr(
          [](double x) { return logistic_scalar(x); });
    }
    layers.push_back(std::move(layer));
  }
  return Mpi(std::move(layers), params.defocus_sizes);
}

Params encode(const Mpi& mpi) {
  Params params;
  params.defocus_sizes = mpi.defocus_sizes();
  for (Index i = 0; i < mpi.layer_count(); ++i) {
    params.u_intensity.push_back(mpi.layer(i).intensity.unaryExpr(
        [](double y) { return softplus_inverse(y); }));
    if (i > 0)
      params.u_alpha.push_back(
          mpi.layer(i).alpha.unaryExpr([](double p) { return logit(p); }));
  }
  return params;
}

Params init_params(const Image& obs_left, const Image& obs_right,
                   const OptimConfig& config) {
  validate(config);
  require(same_extents(obs_left, obs_right), "init_params: extents differ");
  Image mean = (0.5 * (obs_left + obs_right)).max(1e-3);
  Image u_c = mean.unaryExpr([](double y) { return softplus_inverse(y); });
  Params params;
  params.defocus_sizes =
      layer_defocus_sizes(config.layers, config.front_scale, config.back_scale);
  if (config.layers == 1) params.defocus_sizes = {config.back_scale};
  for (Index i = 0; i < config.layers; ++i) {
    params.u_intensity.push_back(u_c);
    if (i > 0)
      params.u_alpha.push_back(Image::Zero(obs_left.rows(), obs_left.cols()));
  }
  return params;
}

double lr_schedule(Index t, const OptimConfig& config) {
  if (config.iterations <= 1) return config.lr_start;
  const double frac = static_cast<double>(t) /
                      static_cast<double>(config.iterations - 1);
  return config.lr_start *
         std::pow(config.lr_end / config.lr_start, frac);
}

void adam_update(Image& param, const Image& grad, Image& m, Image& v, Index t,
                 double lr, double beta1, double beta2, double epsilon) {
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.square();
  const double mc = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double vc = 1.0 - std::pow(beta2, static_cast<double>(t));
  param -= lr * (m / mc) / ((v / vc).sqrt() + epsilon);
}

AdamState make_adam_state(const Params& params) {
  AdamState state;
  for (const Image& u : params.u_intensity) {
    state.m_intensity.push_back(Image::Zero(u.rows(), u.cols()));
    state.v_intensity.push_back(Image::Zero(u.rows(), u.cols()));
  }
  for (const Image& u : params.u_alpha) {
    state.m_alpha.push_back(Image::Zero(u.rows(), u.cols()));
    state.v_alpha.push_back(Image::Zero(u.rows(), u.cols()));
  }
  return state;
}

void adam_step(Params& params, const ParamGrads& grads, AdamState& state,
               double lr, const OptimConfig& config) {
  ++state.step_count;
  for (std::size_t i = 0; i < params.u_intensity.size(); ++i) {
    adam_update(params.u_intensity[i], grads.u_intensity[i],
                state.m_intensity[i], state.v_intensity[i], state.step_count,
                lr, config.beta1, config.beta2, config.epsilon);
  }
  for (std::size_t i = 0; i < params.u_alpha.size(); ++i) {
    adam_update(params.u_alpha[i], grads.u_alpha[i], state.m_alpha[i],
                state.v_alpha[i], state.step_count, lr, config.beta1,
                config.beta2, config.epsilon);
  }
}

EvalContext make_eval_context(const Image& obs_left, const Image& obs_right,
                              const KernelGrid& left, const KernelGrid& right,
                              const std::vector<double>& defocus_sizes,
                              const LossWeights& weights,
                              const PriorSpec& prior) {
  EvalContext ctx;
  ctx.obs_left = obs_left;
  ctx.obs_right = obs_right;
  ctx.plans = RenderPlans::build(left, right, defocus_sizes, obs_left.rows(),
                                 obs_left.cols());
  ctx.bias = build_bias_table(defocus_sizes, left, right, prior);
  ctx.weights = weights;
  return ctx;
}

LossBreakdown eval_loss(const EvalContext& ctx, const Params& params,
                        ParamGrads* grads) {
  Tape tape;
  const Index rows = ctx.obs_left.rows(), cols = ctx.obs_left.cols();
  std::vector<Var> u_c, u_a;
  MpiVars vars;
  for (const Image& u : params.u_intensity) {
    u_c.push_back(tape.input(u));
    vars.intensity.push_back(softplus(u_c.back()));
  }
  vars.alpha.push_back(tape.constant(Image::Ones(rows, cols)));
  for (const Image& u : params.u_alpha) {
    u_a.push_back(tape.input(u));
    vars.alpha.push_back(logistic(u_a.back()));
  }
  LossTermVars terms = build_loss(tape, vars, ctx.plans, ctx.obs_left,
                                  ctx.obs_right, ctx.bias, ctx.weights);
  LossBreakdown out;
  out.data = terms.data.value()(0, 0);
  out.aux = terms.aux.value()(0, 0);
  out.intensity = terms.intensity.value()(0, 0);
  out.alpha = terms.alpha.value()(0, 0);
  out.entropy = terms.entropy.value()(0, 0);
  out.total = terms.total.value()(0, 0);
  if (grads != nullptr) {
    tape.backward(terms.total);
    grads->u_intensity.clear();
    grads->u_alpha.clear();
    for (Var v : u_c) grads->u_intensity.push_back(tape.grad(v));
    for (Var v : u_a) grads->u_alpha.push_back(tape.grad(v));
  }
  return out;
}

namespace {

constexpr char kStateMagic[8] = {'M', 'P', 'I', 'D', 'O', 'S', 'T', '1'};

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

void write_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

double read_f64(std::istream& is) {
  double v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

}  // namespace

void save_optim_state(const std::filesystem::path& path,
                      const OptimState& state) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    throw std::runtime_error("save_optim_state: cannot open " + path.string());
  os.write(kStateMagic, sizeof kStateMagic);
  write_u64(os, static_cast<std::uint64_t>(state.iteration));
  write_u64(os, static_cast<std::uint64_t>(state.adam.step_count));
  write_u64(os, state.params.u_intensity.size());
  for (double d : state.params.defocus_sizes) write_f64(os, d);
  write_u64(os, state.bias.values.size());
  for (double b : state.bias.values) write_f64(os, b);
  for (std::size_t i = 0; i < state.params.u_intensity.size(); ++i) {
    write_image_block(os, state.params.u_intensity[i]);
    write_image_block(os, state.adam.m_intensity[i]);
    write_image_block(os, state.adam.v_intensity[i]);
  }
  for (std::size_t i = 0; i < state.params.u_alpha.size(); ++i) {
    write_image_block(os, state.params.u_alpha[i]);
    write_image_block(os, state.adam.m_alpha[i]);
    write_image_block(os, state.adam.v_alpha[i]);
  }
  if (!os)
    throw std::runtime_error("save_optim_state: write failed " + path.string());
}

OptimState load_optim_state(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    throw std::runtime_error("load_optim_state: cannot open " + path.string());
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, kStateMagic, sizeof magic) != 0)
    throw std::runtime_error("load_optim_state: bad magic in " + path.string());
  OptimState state;
  state.iteration = static_cast<Index>(read_u64(is));
  state.adam.step_count = static_cast<Index>(read_u64(is));
  const std::uint64_t n = read_u64(is);
  if (!is || n == 0 || n > 4096)
    throw std::runtime_error("load_optim_state: bad layer count");
  state.params.defocus_sizes.resize(n);
  for (auto& d : state.params.defocus_sizes) d = read_f64(is);
  const std::uint64_t nb = read_u64(is);
  if (!is || nb > 4096)
    throw std::runtime_error("load_optim_state: bad bias count");
  state.bias.values.resize(nb);
  for (auto& b : state.bias.values) b = read_f64(is);
  for (std::uint64_t i = 0; i < n; ++i) {
    state.params.u_intensity.push_back(read_image_block(is));
    state.adam.m_intensity.push_back(read_image_block(is));
    state.adam.v_intensity.push_back(read_image_block(is));
  }
  for (std::uint64_t i = 0; i + 1 < n; ++i) {
    state.params.u_alpha.push_back(read_image_block(is));
    state.adam.m_alpha.push_back(read_image_block(is));
    state.adam.v_alpha.push_back(read_image_block(is));
  }
  return state;
}

OptimizeResult optimize(const Image& obs_left, const Image& obs_right,
                        const KernelGrid& left, const KernelGrid& right,
                        const OptimConfig& config,
                        const OptimizeOptions& options) {
  validate(config);
  require(same_extents(obs_left, obs_right), "optimize: extents differ");
  require(left.coverage_rows() >= obs_left.rows() &&
              left.coverage_cols() >= obs_left.cols() &&
              right.coverage_rows() >= obs_left.rows() &&
              right.coverage_cols() >= obs_left.cols(),
          "optimize: kernel grids do not cover the inputs");

  Params params;
  AdamState state;
  BiasTable bias;
  Index start = 0;
  if (options.resume.has_value()) {
    params = options.resume->params;
    state = options.resume->adam;
    bias = options.resume->bias;
    start = options.resume->iteration;
    require(!params.u_intensity.empty() &&
                same_extents(params.u_intensity.front(), obs_left),
            "optimize: resume state extents differ from inputs");
  } else {
    params = init_params(obs_left, obs_right, config);
    state = make_adam_state(params);
  }

  EvalContext ctx;
  ctx.obs_left = obs_left;
  ctx.obs_right = obs_right;
  ctx.plans = RenderPlans::build(left, right, params.defocus_sizes,
                                 obs_left.rows(), obs_left.cols());
  if (options.resume.has_value()) {
    ctx.bias = bias;
  } else {
    ctx.bias = build_bias_table(params.defocus_sizes, left, right,
                                config.prior);
  }
  ctx.weights = config.weights;

  std::vector<LossBreakdown> history;
  history.reserve(static_cast<std::size_t>(config.iterations - start));
  for (Index t = start; t < config.iterations; ++t) {
    ParamGrads grads;
    LossBreakdown loss = eval_loss(ctx, params, &grads);
    if (!std::isfinite(loss.total)) {
      std::filesystem::path dump =
          (options.checkpoint_dir.empty()
               ? std::filesystem::temp_directory_path()
               : options.checkpoint_dir) /
          "diverged_params.mpis";
      save_mpi(dump, decode(params));
      throw std::runtime_error("optimize: non-finite loss at iteration " +
                               std::to_string(t) + "; params dumped to " +
                               dump.string());
    }
    history.push_back(loss);
    if (options.callback) options.callback(t, loss);
    adam_step(params, grads, state, lr_schedule(t, config), config);
    const Index done = t + 1;
    if (!options.checkpoint_dir.empty() &&
        (done % config.checkpoint_every == 0 || done == config.iterations)) {
      const std::string stem = "checkpoint_" + std::to_string(done);
      save_mpi(options.checkpoint_dir / (stem + ".mpis"), decode(params));
      save_optim_state(options.checkpoint_dir / (stem + ".state"),
                       OptimState{params, state, done, ctx.bias});
    }
  }

  Mpi mpi = decode(params);
  Image sharp = composite_sharp(mpi) / options.denorm_scale;
  Image defocus = composite_defocus_map(mpi);
  return OptimizeResult{std::move(mpi), std::move(sharp), std::move(defocus),
                        std::move(history)};
}

}  // namespace mpid
