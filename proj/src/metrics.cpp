#include "mpid/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace mpid {

double psnr(const Image& a, const Image& b, double peak) {
  require(same_extents(a, b), "psnr: extents differ");
  require(peak > 0.0, "psnr: peak must be positive");
  const double mse = (a - b).square().mean();
  if (mse == 0.0) return 99.0;
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

Kernel ssim_window() {
  const Index n = 11;
  const double sigma = 1.5;
  Image taps(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) {
      const double dy = static_cast<double>(i - n / 2);
      const double dx = static_cast<double>(j - n / 2);
      taps(i, j) = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
    }
  }
  return Kernel(std::move(taps));
}

}  // namespace

double ssim(const Image& a, const Image& b, double peak) {
  require(same_extents(a, b), "ssim: extents differ");
  static const Kernel window = ssim_window();
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  Image mu_a = convolve_same(a, window);
  Image mu_b = convolve_same(b, window);
  Image var_a = (convolve_same(a.square().eval(), window) - mu_a.square()).max(0.0);
  Image var_b = (convolve_same(b.square().eval(), window) - mu_b.square()).max(0.0);
  Image cov = convolve_same((a * b).eval(), window) - mu_a * mu_b;
  Image num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
  Image den = (mu_a.square() + mu_b.square() + c1) * (var_a + var_b + c2);
  return (num / den).mean();
}

double mae(const Image& a, const Image& b) {
  require(same_extents(a, b), "mae: extents differ");
  return (a - b).abs().mean();
}

namespace {

struct MaskedPair {
  std::vector<double> pred, gt;
};

MaskedPair gather_masked(const Image& pred, const Image& gt,
                         const Image& conf) {
  require(same_extents(pred, gt) && same_extents(pred, conf),
          "metric: extents differ");
  require(((conf == 0.0) || (conf == 1.0)).all(),
          "metric: confidence mask must be binary");
  MaskedPair out;
  for (Index c = 0; c < pred.cols(); ++c) {
    for (Index r = 0; r < pred.rows(); ++r) {
      if (conf(r, c) == 1.0) {
        out.pred.push_back(pred(r, c));
        out.gt.push_back(gt(r, c));
      }
    }
  }
  return out;
}

// Weighted least squares for (gain, offset) of gain*pred + offset ~ gt.
std::pair<double, double> fit_affine(const std::vector<double>& pred,
                                     const std::vector<double>& gt,
                                     const std::vector<double>& w) {
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    sw += w[i];
    sx += w[i] * pred[i];
    sy += w[i] * gt[i];
    sxx += w[i] * pred[i] * pred[i];
    sxy += w[i] * pred[i] * gt[i];
  }
  const double det = sw * sxx - sx * sx;
  require(std::abs(det) > 1e-12 * std::max(1.0, sw * sxx),
          "aiwe: degenerate mask (no spread in the prediction)");
  const double gain = (sw * sxy - sx * sy) / det;
  const double offset = (sxx * sy - sx * sxy) / det;
  return {gain, offset};
}

}  // namespace

double aiwe(const Image& pred, const Image& gt, const Image& conf, int p) {
  require(p == 1 || p == 2, "aiwe: order must be 1 or 2");
  MaskedPair m = gather_masked(pred, gt, conf);
  require(m.pred.size() >= 2, "aiwe: degenerate mask");
  const double distinct =
      *std::max_element(m.gt.begin(), m.gt.end()) -
      *std::min_element(m.gt.begin(), m.gt.end());
  require(distinct > 0.0, "aiwe: ground truth constant under the mask");

  std::vector<double> w(m.pred.size(), 1.0);
  auto [gain, offset] = fit_affine(m.pred, m.gt, w);
  if (p == 1) {
    for (int it = 0; it < 20; ++it) {
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double r = gain * m.pred[i] + offset - m.gt[i];
        w[i] = 1.0 / std::max(std::abs(r), 1e-8);
      }
      std::tie(gain, offset) = fit_affine(m.pred, m.gt, w);
    }
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < m.pred.size(); ++i) {
    const double r = std::abs(gain * m.pred[i] + offset - m.gt[i]);
    acc += p == 1 ? r : r * r;
  }
  acc /= static_cast<double>(m.pred.size());
  return p == 1 ? acc : std::sqrt(acc);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman_term(const Image& pred, const Image& gt, const Image& conf) {
  MaskedPair m = gather_masked(pred, gt, conf);
  require(m.pred.size() >= 2, "spearman_term: degenerate mask");
  std::vector<double> ra = average_ranks(m.pred);
  std::vector<double> rb = average_ranks(m.gt);
  const double n = static_cast<double>(ra.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return 1.0;
  return 1.0 - std::abs(sab / std::sqrt(saa * sbb));
}

namespace {

double sample_bilinear(const Image& img, double y, double x) {
  const Index h = img.rows(), w = img.cols();
  const double cy = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const double cx = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const Index y0 = std::min<Index>(static_cast<Index>(cy), h - 1);
  const Index x0 = std::min<Index>(static_cast<Index>(cx), w - 1);
  const Index y1 = std::min<Index>(y0 + 1, h - 1);
  const Index x1 = std::min<Index>(x0 + 1, w - 1);
  const double fy = cy - static_cast<double>(y0);
  const double fx = cx - static_cast<double>(x0);
  return (1.0 - fy) * ((1.0 - fx) * img(y0, x0) + fx * img(y0, x1)) +
         fy * ((1.0 - fx) * img(y1, x0) + fx * img(y1, x1));
}

// Affine warp parameters: x' = (1+p0) x + p1 y + p2, y' = p3 x + (1+p4) y + p5.
using Warp = Eigen::Matrix<double, 6, 1>;

Image warp_image(const Image& img, const Warp& p) {
  Image out(img.rows(), img.cols());
  for (Index y = 0; y < img.rows(); ++y) {
    for (Index x = 0; x < img.cols(); ++x) {
      const double xs = (1.0 + p(0)) * x + p(1) * y + p(2);
      const double ys = p(3) * x + (1.0 + p(4)) * y + p(5);
      out(y, x) = sample_bilinear(img, ys, xs);
    }
  }
  return out;
}

}  // namespace

std::pair<Image, Image> align_affine_then_crop(const Image& pred,
                                               const Image& gt, Index border) {
  require(same_extents(pred, gt), "align_affine_then_crop: extents differ");
  require(pred.rows() > 2 * border && pred.cols() > 2 * border,
          "align_affine_then_crop: image too small for the border crop");

  Image ps = gaussian3_blur(pred);
  Image gs = gaussian3_blur(gt);
  const Index h = pred.rows(), w = pred.cols();
  Warp p = Warp::Zero();
  for (int iter = 0; iter < 50; ++iter) {
    Eigen::Matrix<double, 6, 6> jtj = Eigen::Matrix<double, 6, 6>::Zero();
    Warp jtr = Warp::Zero();
    for (Index y = 1; y + 1 < h; ++y) {
      for (Index x = 1; x + 1 < w; ++x) {
        const double xs = (1.0 + p(0)) * x + p(1) * y + p(2);
        const double ys = p(3) * x + (1.0 + p(4)) * y + p(5);
        if (xs < 1.0 || xs > w - 2.0 || ys < 1.0 || ys > h - 2.0) continue;
        const double r = sample_bilinear(ps, ys, xs) - gs(y, x);
        const double gx = 0.5 * (sample_bilinear(ps, ys, xs + 1.0) -
                                 sample_bilinear(ps, ys, xs - 1.0));
        const double gy = 0.5 * (sample_bilinear(ps, ys + 1.0, xs) -
                                 sample_bilinear(ps, ys - 1.0, xs));
        Warp j;
        j << gx * x, gx * y, gx, gy * x, gy * y, gy;
        jtj += j * j.transpose();
        jtr += j * r;
      }
    }
    const double damping = 1e-8 * (1.0 + jtj.trace());
    jtj.diagonal().array() += damping;
    Warp step = jtj.ldlt().solve(jtr);
    p -= step;
    if (step.norm() < 1e-12) break;
  }

  Image warped = warp_image(pred, p);
  const Index ch = h - 2 * border, cw = w - 2 * border;
  return {warped.block(border, border, ch, cw).eval(),
          gt.block(border, border, ch, cw).eval()};
}

EvalReport evaluate(const Image& pred_sharp, const Image& gt_sharp,
                    const Image& pred_defocus, const Image& gt_defocus,
                    const Image& conf, bool align_sharp) {
  EvalReport report;
  if (align_sharp) {
    auto [a, b] = align_affine_then_crop(pred_sharp, gt_sharp);
    report.psnr = psnr(a, b);
    report.ssim = ssim(a, b);
    report.mae = mae(a, b);
  } else {
    report.psnr = psnr(pred_sharp, gt_sharp);
    report.ssim = ssim(pred_sharp, gt_sharp);
    report.mae = mae(pred_sharp, gt_sharp);
  }
  report.aiwe1 = aiwe(pred_defocus, gt_defocus, conf, 1);
  report.aiwe2 = aiwe(pred_defocus, gt_defocus, conf, 2);
  report.spearman_term = spearman_term(pred_defocus, gt_defocus, conf);
  return report;
}

}  // namespace mpid
