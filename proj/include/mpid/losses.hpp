#pragma once

#include "mpid/mpi.hpp"
#include "mpid/noisebias.hpp"
#include "mpid/tape.hpp"

namespace mpid {

inline constexpr double kCharbonnierScale = 0.1;  // gamma
inline constexpr double kEdgeBeta = 1.0 / 32.0;
// Floor of the bias-corrected Charbonnier's inner argument; residuals
// below the noise floor cost sqrt of this instead of going imaginary.
inline constexpr double kCharbonnierFloor = 1e-6;
// Added under the square roots that sharpen alphas/transmittances so
// gradients stay finite at zero.
inline constexpr double kSharpenEps = 1e-12;

struct LossWeights {
  double data = 2.5e4;      // lambda1
  double aux = 2.5e4;       // lambda2
  double intensity = 30.0;  // lambda3
  double alpha = 7.5e4;     // lambda4
  double entropy = 12.0;    // lambda5
};
void validate(const LossWeights& w);

struct LossBreakdown {
  double total = 0.0;
  double data = 0.0;
  double aux = 0.0;
  double intensity = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;
};

// ---- primitives ----

// rho(x) = sqrt(x^2/gamma^2 + 1)
double charbonnier(double x, double gamma = kCharbonnierScale);
Image charbonnier(const Image& x, double gamma = kCharbonnierScale);

// rho_b(x, b) = sqrt((x^2 - b)/gamma^2 + 1), inner argument floored.
double charbonnier_bias(double x, double b, double gamma = kCharbonnierScale);
Image charbonnier_bias(const Image& x, double b,
                       double gamma = kCharbonnierScale);
Image charbonnier_bias(const Image& x, const Image& b,
                       double gamma = kCharbonnierScale);

// Gaussian-windowed sample standard deviation per pixel:
// sqrt(I^2 (*) g - (I (*) g)^2).
Image tv(const Image& img);

// Bilateral edge mask 1 - exp(-var/(2 beta^2)), values in [0,1).
Image edge_mask(const Image& img, double beta = kEdgeBeta);

// sum over pixels of rho(tv(I)) + (1-E) .* rho(tv(I)).
double tv_edge(const Image& img, const Image& mask,
               double gamma = kCharbonnierScale);

// Per-pixel collision entropy -log(|x|_2^2 / |x|_1^2) of a non-negative
// per-pixel stack; all-zero pixels map to zero.
Image collision_entropy(const std::vector<Image>& stack);

// ---- full terms over an MPI ----

double loss_data(const Mpi& mpi, const KernelGrid& left,
                 const KernelGrid& right, const Image& obs_left,
                 const Image& obs_right, const BiasTable& bias);
double loss_aux(const Mpi& mpi, const KernelGrid& left,
                const KernelGrid& right, const Image& obs_left,
                const Image& obs_right, const BiasTable& bias);
double loss_intensity(const Mpi& mpi);
double loss_alpha(const Mpi& mpi);
double loss_entropy(const Mpi& mpi);
LossBreakdown loss_total(const Mpi& mpi, const KernelGrid& left,
                         const KernelGrid& right, const Image& obs_left,
                         const Image& obs_right, const BiasTable& bias,
                         const LossWeights& weights);

// ---- differentiable builders (shared by the wrappers and optimizer) ----

struct RenderPlans {
  std::vector<std::shared_ptr<const TiledConvPlan>> left, right;
  static RenderPlans build(const KernelGrid& left, const KernelGrid& right,
                           const std::vector<double>& defocus_sizes,
                           Index rows, Index cols);
};

// Per-layer channels on the tape, back to front; alpha[0] is pinned to
// a constant all-ones image.
struct MpiVars {
  std::vector<Var> intensity;
  std::vector<Var> alpha;
};
MpiVars mpi_constants(Tape& tape, const Mpi& mpi);

std::vector<Var> build_transmittances(const MpiVars& vars);
Var build_sharp(const MpiVars& vars, const std::vector<Var>& trans);

struct RenderVars {
  Var rendered;   // defocused view
  Var bias_all;   // per-pixel composite of the per-layer bias scalars
};
RenderVars build_render(Tape& tape, const MpiVars& vars,
                        const std::vector<std::shared_ptr<const TiledConvPlan>>&
                            plans,
                        const BiasTable& bias);

struct DataLossVars {
  Var data, aux;
};
DataLossVars build_data_losses(Tape& tape, const MpiVars& vars,
                               const RenderPlans& plans, const Image& obs_left,
                               const Image& obs_right, const BiasTable& bias);

struct PriorLossVars {
  Var intensity, alpha, entropy;
};
PriorLossVars build_prior_losses(Tape& tape, const MpiVars& vars);

struct LossTermVars {
  Var data, aux, intensity, alpha, entropy, total;
};
LossTermVars build_loss(Tape& tape, const MpiVars& vars,
                        const RenderPlans& plans, const Image& obs_left,
                        const Image& obs_right, const BiasTable& bias,
                        const LossWeights& weights);

}  // namespace mpid
