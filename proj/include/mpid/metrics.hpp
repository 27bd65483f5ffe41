#pragma once

#include "mpid/numerics.hpp"

#include <utility>

namespace mpid {

struct EvalReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double mae = 0.0;
  double aiwe1 = 0.0;
  double aiwe2 = 0.0;
  double spearman_term = 0.0;  // 1 - |rank correlation|
};

// Identical images report the 99 dB sentinel.
double psnr(const Image& a, const Image& b, double peak = 1.0);

// Standard single-scale SSIM: 11x11 Gaussian window with sigma 1.5,
// C1=(0.01 peak)^2, C2=(0.03 peak)^2, replicate boundary, mean map.
double ssim(const Image& a, const Image& b, double peak = 1.0);

double mae(const Image& a, const Image& b);

// Affine-invariant weighted error: min over (a,b) of the L_p mean of
// |a*pred + b - gt| across conf==1 pixels. p=2 solves the normal
// equations in closed form; p=1 runs 20 IRLS rounds (damping 1e-8)
// from the p=2 solution. The gain is not sign-constrained.
double aiwe(const Image& pred, const Image& gt, const Image& conf, int p);

// 1 - |Spearman rank correlation| over conf==1 pixels, ties averaged.
double spearman_term(const Image& pred, const Image& gt, const Image& conf);

// Intensity-based Lucas-Kanade affine alignment of pred onto gt
// (Gauss-Newton, 50 iterations on 3x3-blurred images), then both sides
// cropped by the border width.
std::pair<Image, Image> align_affine_then_crop(const Image& pred,
                                               const Image& gt,
                                               Index border = 8);

EvalReport evaluate(const Image& pred_sharp, const Image& gt_sharp,
                    const Image& pred_defocus, const Image& gt_defocus,
                    const Image& conf, bool align_sharp);

}  // namespace mpid
