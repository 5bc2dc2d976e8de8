#include "mgs/losses.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mgs {

namespace {

void check_dims(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height || a.channels != b.channels) {
    throw std::invalid_argument("loss: image dimension mismatch");
  }
}

constexpr int kWindow = 11;
constexpr int kRadius = kWindow / 2;
constexpr real kC1 = real(0.01 * 0.01);
constexpr real kC2 = real(0.03 * 0.03);

const std::array<real, kWindow>& gaussian_window() {
  static const std::array<real, kWindow> w = [] {
    std::array<real, kWindow> out{};
    real sum = 0;
    for (int i = 0; i < kWindow; ++i) {
      const real d = real(i - kRadius);
      out[size_t(i)] = std::exp(-d * d / (2 * real(1.5) * real(1.5)));
      sum += out[size_t(i)];
    }
    for (auto& v : out) v /= sum;
    return out;
  }();
  return w;
}

// Separable valid-region convolution of a full-size plane.
MatX conv_valid(const MatX& plane) {
  const auto& w = gaussian_window();
  const int h = int(plane.rows()), wd = int(plane.cols());
  MatX horiz(h, wd - 2 * kRadius);
  for (int y = 0; y < h; ++y) {
    for (int x = kRadius; x < wd - kRadius; ++x) {
      real acc = 0;
      for (int k = -kRadius; k <= kRadius; ++k) acc += w[size_t(k + kRadius)] * plane(y, x + k);
      horiz(y, x - kRadius) = acc;
    }
  }
  MatX out(h - 2 * kRadius, wd - 2 * kRadius);
  for (int y = kRadius; y < h - kRadius; ++y) {
    for (int x = 0; x < horiz.cols(); ++x) {
      real acc = 0;
      for (int k = -kRadius; k <= kRadius; ++k) acc += w[size_t(k + kRadius)] * horiz(y + k, x);
      out(y - kRadius, x) = acc;
    }
  }
  return out;
}

// Adjoint of conv_valid: scatter a valid-region map back to full size.
MatX conv_scatter(const MatX& valid, int h, int wd) {
  const auto& w = gaussian_window();
  MatX vert = MatX::Zero(h, valid.cols());
  for (int y = 0; y < int(valid.rows()); ++y) {
    for (int x = 0; x < int(valid.cols()); ++x) {
      const real v = valid(y, x);
      if (v == real(0)) continue;
      for (int k = -kRadius; k <= kRadius; ++k) vert(y + kRadius + k, x) += w[size_t(k + kRadius)] * v;
    }
  }
  MatX out = MatX::Zero(h, wd);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < int(valid.cols()); ++x) {
      const real v = vert(y, x);
      if (v == real(0)) continue;
      for (int k = -kRadius; k <= kRadius; ++k) out(y, x + kRadius + k) += w[size_t(k + kRadius)] * v;
    }
  }
  return out;
}

MatX channel_plane(const Image& img, int c) {
  MatX out(img.height, img.width);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) out(y, x) = img.at(y, x, c);
  return out;
}

}  // namespace

real loss_l1(const Image& img, const Image& gt) {
  check_dims(img, gt);
  real sum = 0;
  for (size_t i = 0; i < img.data.size(); ++i) sum += std::abs(img.data[i] - gt.data[i]);
  return sum / real(img.data.size());
}

Image loss_l1_backward(const Image& img, const Image& gt) {
  check_dims(img, gt);
  Image g(img.width, img.height, img.channels);
  const real scale = 1 / real(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i) {
    const real d = img.data[i] - gt.data[i];
    g.data[i] = d > 0 ? scale : (d < 0 ? -scale : 0);
  }
  return g;
}

real ssim_mean(const Image& img, const Image& gt, SsimRecord* rec) {
  check_dims(img, gt);
  if (img.width < kWindow || img.height < kWindow) {
    throw std::invalid_argument("ssim: image smaller than the 11x11 window");
  }
  if (rec) {
    rec->mu_x.clear();
    rec->mu_y.clear();
    rec->x2.clear();
    rec->y2.clear();
    rec->xy.clear();
  }
  real acc = 0;
  for (int c = 0; c < img.channels; ++c) {
    const MatX x = channel_plane(img, c);
    const MatX y = channel_plane(gt, c);
    MatX mu_x = conv_valid(x);
    MatX mu_y = conv_valid(y);
    MatX x2 = conv_valid(x.cwiseProduct(x));
    MatX y2 = conv_valid(y.cwiseProduct(y));
    MatX xy = conv_valid(x.cwiseProduct(y));
    real channel_sum = 0;
    for (int i = 0; i < mu_x.rows(); ++i) {
      for (int j = 0; j < mu_x.cols(); ++j) {
        const real mx = mu_x(i, j), my = mu_y(i, j);
        const real sx = x2(i, j) - mx * mx;
        const real sy = y2(i, j) - my * my;
        const real sxy = xy(i, j) - mx * my;
        const real a = 2 * mx * my + kC1, b = mx * mx + my * my + kC1;
        const real cc = 2 * sxy + kC2, d = sx + sy + kC2;
        channel_sum += (a * cc) / (b * d);
      }
    }
    acc += channel_sum / real(mu_x.rows() * mu_x.cols());
    if (rec) {
      rec->mu_x.push_back(std::move(mu_x));
      rec->mu_y.push_back(std::move(mu_y));
      rec->x2.push_back(std::move(x2));
      rec->y2.push_back(std::move(y2));
      rec->xy.push_back(std::move(xy));
      rec->vh = int(rec->mu_x.back().rows());
      rec->vw = int(rec->mu_x.back().cols());
    }
  }
  return acc / img.channels;
}

Image ssim_mean_backward(const Image& img, const Image& gt, const SsimRecord& rec) {
  check_dims(img, gt);
  Image out(img.width, img.height, img.channels);
  const real norm = 1 / real(img.channels * rec.vw * rec.vh);
  for (int c = 0; c < img.channels; ++c) {
    const MatX& mu_x = rec.mu_x[size_t(c)];
    const MatX& mu_y = rec.mu_y[size_t(c)];
    MatX g_mu(rec.vh, rec.vw), g_x2(rec.vh, rec.vw), g_xy(rec.vh, rec.vw);
    for (int i = 0; i < rec.vh; ++i) {
      for (int j = 0; j < rec.vw; ++j) {
        const real mx = mu_x(i, j), my = mu_y(i, j);
        const real sx = rec.x2[size_t(c)](i, j) - mx * mx;
        const real sy = rec.y2[size_t(c)](i, j) - my * my;
        const real sxy = rec.xy[size_t(c)](i, j) - mx * my;
        const real a = 2 * mx * my + kC1, b = mx * mx + my * my + kC1;
        const real cc = 2 * sxy + kC2, d = sx + sy + kC2;
        const real bd = b * d;
        // S = a*cc / (b*d); partials wrt the raw convolution maps
        const real ds_da = cc / bd;
        const real ds_db = -a * cc / (b * bd);
        const real ds_dcc = a / bd;
        const real ds_dd = -a * cc / (bd * d);
        const real ds_dsx = ds_dd;
        const real ds_dsxy = 2 * ds_dcc;
        const real ds_dmx = ds_da * 2 * my + ds_db * 2 * mx + ds_dsx * (-2 * mx) + ds_dsxy * (-my);
        g_mu(i, j) = ds_dmx;
        g_x2(i, j) = ds_dsx;
        g_xy(i, j) = ds_dsxy;
      }
    }
    const MatX full_mu = conv_scatter(g_mu, img.height, img.width);
    const MatX full_x2 = conv_scatter(g_x2, img.height, img.width);
    const MatX full_xy = conv_scatter(g_xy, img.height, img.width);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const real grad = full_mu(y, x) + 2 * img.at(y, x, c) * full_x2(y, x) +
                          gt.at(y, x, c) * full_xy(y, x);
        out.at(y, x, c) = grad * norm;
      }
    }
  }
  return out;
}

real loss_mask(const std::vector<real>& alpha, const std::vector<real>& mask) {
  if (alpha.size() != mask.size()) throw std::invalid_argument("mask loss: size mismatch");
  real sum = 0;
  for (size_t i = 0; i < alpha.size(); ++i) {
    const real d = alpha[i] - mask[i];
    sum += d * d;
  }
  return sum / real(alpha.size());
}

std::vector<real> loss_mask_backward(const std::vector<real>& alpha, const std::vector<real>& mask) {
  std::vector<real> g(alpha.size());
  const real scale = 2 / real(alpha.size());
  for (size_t i = 0; i < alpha.size(); ++i) g[i] = scale * (alpha[i] - mask[i]);
  return g;
}

LossTerms total_loss(const Image& img, const Image& gt, const std::vector<real>& alpha,
                     const std::vector<real>& mask, const LossWeights& w, SsimRecord* rec) {
  if (w.lpips != real(0)) {
    throw std::invalid_argument("total_loss: the perceptual term is unavailable, lambda_3 must be 0");
  }
  LossTerms t;
  t.l1 = loss_l1(img, gt);
  t.ssim = loss_ssim(img, gt, rec);
  t.mask = loss_mask(alpha, mask);
  t.total = w.color * t.l1 + w.ssim * t.ssim + t.mask;
  return t;
}

real psnr(const Image& img, const Image& gt) {
  check_dims(img, gt);
  real mse = 0;
  for (size_t i = 0; i < img.data.size(); ++i) {
    const real d = img.data[i] - gt.data[i];
    mse += d * d;
  }
  mse /= real(img.data.size());
  if (mse == real(0)) return std::numeric_limits<real>::infinity();
  return 10 * std::log10(1 / mse);
}

real ssim_metric(const Image& img, const Image& gt) { return ssim_mean(img, gt); }

}  // namespace mgs
