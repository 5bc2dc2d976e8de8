#pragma once

#include <vector>

#include "mgs/gaussians.hpp"
#include "mgs/image.hpp"

namespace mgs {

// Gaussians warped into observation space, ready for splatting.
struct ObservationSet {
  MatX positions;               // n x 3 world
  std::vector<Mat3> rotations;  // R_o per Gaussian
  MatX scales;                  // n x 3 (linear s')
  MatX colors;                  // n x 3
  VecX opacities;               // n, in (0,1)

  int size() const { return int(positions.rows()); }
};

// Intermediates of rigid_warp retained for the backward pass.
struct RigidWarpRecord {
  std::vector<Mat3> blend;      // sum_k w_k R_k
  std::vector<Mat3> polar_q;    // orthogonal factor
  std::vector<Mat3> polar_h;    // symmetric factor Q^T A
  std::vector<int> fallback;    // dominant bone index, -1 when the polar path was taken
};

// LBS positions plus blended-and-reorthogonalized rotations:
// x_o = sum_k w_k (R_k x' + t_k); R_o = polar(sum_k w_k R_k * R').
// Near-singular blends fall back to the dominant bone's rotation.
ObservationSet rigid_warp(const DeformedGaussians& d, const MatX& colors, const VecX& opacities,
                          std::span<const BoneTransform> bones, const MatX& weights,
                          RigidWarpRecord* rec = nullptr);

struct RigidWarpGrads {
  MatX d_positions;             // d x'
  std::vector<Mat3> d_rotations;  // d R'
  MatX d_weights;               // n x K
  std::vector<Mat3> d_bone_rotations;
  std::vector<Vec3> d_bone_translations;
};

RigidWarpGrads rigid_warp_backward(const DeformedGaussians& d, std::span<const BoneTransform> bones,
                                   const MatX& weights, const RigidWarpRecord& rec,
                                   const MatX& d_x_o, const std::vector<Mat3>& d_r_o);

// Rotation polar factor via SVD (det +1 for det(A) > 0 inputs).
Mat3 polar_rotation(const Mat3& a, Mat3* h = nullptr);
// Adjoint: d(loss)/dA given d(loss)/dQ.
Mat3 polar_rotation_backward(const Mat3& q, const Mat3& h, const Mat3& d_q);

// Sigma' = J (W Sigma W^T) J^T + 0.3 I (pixel-space dilation).
Mat2 project_covariance(const Mat3& cov_world, const Camera& cam, const Vec3& x_cam);

// One projected Gaussian.
struct Splat2D {
  Vec2 uv = Vec2::Zero();
  Mat2 cov = Mat2::Identity();    // dilated Sigma'
  Mat2 conic = Mat2::Identity();  // inverse of cov
  real depth = 0;
  real radius = 0;                // 3 sigma bound in pixels
  Vec3 color = Vec3::Zero();
  real alpha = 0;
  int source = -1;                // Gaussian index
  Vec3 x_cam = Vec3::Zero();
};

struct SplatPrep {
  std::vector<Splat2D> splats;  // depth-sorted, behind-camera Gaussians dropped
};

SplatPrep prepare_splats(const ObservationSet& obs, const Camera& cam);

struct RenderOutput {
  Image image;               // H x W x 3 linear, black background
  std::vector<real> alpha;   // H x W accumulated opacity
  std::vector<int> contributors;  // per-pixel blended splat count
};

// Front-to-back compositing with 3-sigma truncation, 1/255 alpha cutoff and
// 0.9999 saturation stop.
RenderOutput rasterize(const ObservationSet& obs, const Camera& cam);

// Verification twin: no culling, no cutoffs, no early termination.
RenderOutput render_oracle(const ObservationSet& obs, const Camera& cam);

struct RasterGrads {
  MatX d_positions;             // n x 3 world
  std::vector<Mat3> d_rotations;  // d R_o
  MatX d_scales;                // n x 3 (d s')
  MatX d_colors;                // n x 3
  VecX d_opacities;             // n
};

// Analytic adjoint of rasterize; recomputes per-pixel walks in reverse.
RasterGrads rasterize_backward(const ObservationSet& obs, const Camera& cam,
                               const Image& d_image, const std::vector<real>& d_alpha);

}  // namespace mgs
