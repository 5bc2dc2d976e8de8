#pragma once

#include <vector>

#include "mgs/image.hpp"

namespace mgs {

// Mean absolute difference over pixels and channels.
real loss_l1(const Image& img, const Image& gt);
Image loss_l1_backward(const Image& img, const Image& gt);  // d/d img, sign(0) = 0

// Mean SSIM over the valid (unpadded) 11x11-window region, per channel.
// Gaussian window sigma 1.5, C1 = 0.01^2, C2 = 0.03^2 on [0,1] images.
struct SsimRecord {
  std::vector<MatX> mu_x, mu_y, x2, y2, xy;  // per channel, valid-region maps
  int vw = 0, vh = 0;
};
real ssim_mean(const Image& img, const Image& gt, SsimRecord* rec = nullptr);
Image ssim_mean_backward(const Image& img, const Image& gt, const SsimRecord& rec);

inline real loss_ssim(const Image& img, const Image& gt, SsimRecord* rec = nullptr) {
  return 1 - ssim_mean(img, gt, rec);
}

// Mean squared difference between the accumulated alpha map and the mask.
real loss_mask(const std::vector<real>& alpha, const std::vector<real>& mask);
std::vector<real> loss_mask_backward(const std::vector<real>& alpha, const std::vector<real>& mask);

struct LossWeights {
  real color = 1;    // lambda_1
  real ssim = real(0.1);  // lambda_2
  real lpips = 0;    // lambda_3, must stay 0 (no perceptual backbone here)
};

struct LossTerms {
  real total = 0, l1 = 0, ssim = 0, mask = 0;
};

LossTerms total_loss(const Image& img, const Image& gt, const std::vector<real>& alpha,
                     const std::vector<real>& mask, const LossWeights& w,
                     SsimRecord* rec = nullptr);

// Metrics. PSNR returns +infinity when the images match exactly.
real psnr(const Image& img, const Image& gt);
real ssim_metric(const Image& img, const Image& gt);

}  // namespace mgs
