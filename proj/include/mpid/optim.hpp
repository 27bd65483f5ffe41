#pragma once

#include "mpid/losses.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>

namespace mpid {

// Unconstrained per-layer fields: intensities through softplus, alphas
// through the logistic; the farthest layer's alpha is pinned opaque so
// it carries no variable.
struct Params {
  std::vector<Image> u_intensity;  // layers 0..N-1 (back to front)
  std::vector<Image> u_alpha;      // layers 1..N-1
  std::vector<double> defocus_sizes;
};

struct ParamGrads {
  std::vector<Image> u_intensity;
  std::vector<Image> u_alpha;
};

struct OptimConfig {
  Index iterations = 10000;
  double lr_start = 0.3;
  double lr_end = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Index layers = 12;
  double front_scale = 1.0;
  double back_scale = 59.0;
  LossWeights weights;
  PriorSpec prior;
  std::uint64_t seed = 1;
  Index checkpoint_every = 500;
};
void validate(const OptimConfig& config);

struct NormalizedPair {
  Image left, right;
  double scale = 1.0;  // s = 0.5 / mean; divide results by s to undo
};
NormalizedPair normalize_inputs(const Image& left, const Image& right);

Mpi decode(const Params& params);
Params encode(const Mpi& mpi);  // inverse activations, interior values only

// Every layer's intensity starts at the mean of the two views (floored
// away from zero for the softplus inverse); alphas start at one half.
Params init_params(const Image& obs_left, const Image& obs_right,
                   const OptimConfig& config);

// lr(t) = lr_start * (lr_end/lr_start)^(t/(iterations-1))
double lr_schedule(Index t, const OptimConfig& config);

// One Adam update with bias-corrected moments; t counts from 1.
void adam_update(Image& param, const Image& grad, Image& m, Image& v, Index t,
                 double lr, double beta1, double beta2, double epsilon);

struct AdamState {
  std::vector<Image> m_intensity, v_intensity;
  std::vector<Image> m_alpha, v_alpha;
  Index step_count = 0;
};
AdamState make_adam_state(const Params& params);
void adam_step(Params& params, const ParamGrads& grads, AdamState& state,
               double lr, const OptimConfig& config);

// Fixed pieces of one optimization problem.
struct EvalContext {
  Image obs_left, obs_right;
  RenderPlans plans;
  BiasTable bias;
  LossWeights weights;
};
EvalContext make_eval_context(const Image& obs_left, const Image& obs_right,
                              const KernelGrid& left, const KernelGrid& right,
                              const std::vector<double>& defocus_sizes,
                              const LossWeights& weights,
                              const PriorSpec& prior);

// Loss and, when grads is non-null, d(total)/d(params) via the tape.
LossBreakdown eval_loss(const EvalContext& ctx, const Params& params,
                        ParamGrads* grads);

// Resumable optimizer state (written next to MPIS1 checkpoints).
struct OptimState {
  Params params;
  AdamState adam;
  Index iteration = 0;
  BiasTable bias;
};
void save_optim_state(const std::filesystem::path& path,
                      const OptimState& state);
OptimState load_optim_state(const std::filesystem::path& path);

struct OptimizeResult {
  Mpi mpi;
  Image all_in_focus;  // denormalized by the input scale
  Image defocus_map;
  std::vector<LossBreakdown> history;
};

using IterationCallback =
    std::function<void(Index iteration, const LossBreakdown& loss)>;

struct OptimizeOptions {
  double denorm_scale = 1.0;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  IterationCallback callback;
  std::optional<OptimState> resume;
};

// Builds the bias table once, then iterates decode -> render -> loss ->
// backward -> Adam. Aborts with a diagnostic MPIS1 dump if the loss
// goes non-finite. Inputs must be vignetting-corrected and normalized.
OptimizeResult optimize(const Image& obs_left, const Image& obs_right,
                        const KernelGrid& left, const KernelGrid& right,
                        const OptimConfig& config,
                        const OptimizeOptions& options = {});

}  // namespace mpid
