#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>

#include "mgs/types.hpp"

namespace mgs {

// Quaternion (w, x, y, z), Hamilton product, right-handed.
struct Quat {
  real w = 1, x = 0, y = 0, z = 0;

  real norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  Quat conjugate() const { return {w, -x, -y, -z}; }
};

Quat quat_mul(const Quat& a, const Quat& b);
Quat quat_normalize(const Quat& q);
Mat3 quat_to_matrix(const Quat& q);
// Adjoint of quat_to_matrix wrt the raw quaternion components.
Quat quat_to_matrix_backward(const Quat& q, const Mat3& d_r);

Mat3 skew(const Vec3& v);
// (K21, K02, K10) of a (near-)skew matrix; inverse of skew() on its image.
Vec3 unskew(const Mat3& k);

// Axis-angle (radians) to rotation matrix. Falls back to I + [theta]x
// below |theta| = 1e-8.
Mat3 rodrigues_to_matrix(const Vec3& theta);

// Rotation matrix to axis-angle with |theta| in [0, pi]. Stable near 0
// (series) and near pi (largest-diagonal axis extraction). Throws
// std::invalid_argument if the orthogonality defect exceeds 1e-5.
Vec3 matrix_to_rodrigues(const Mat3& r);

// d(rodrigues_to_matrix)/d(theta_i), i = 0..2.
std::array<Mat3, 3> rodrigues_jacobian(const Vec3& theta);

// One rigid bone transform. Applied to canonical points as R*x + t.
struct BoneTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return rotation * x + translation; }
  // this ∘ other (apply `other` first).
  BoneTransform compose(const BoneTransform& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }
};

// Linear blend skinning (convex blend of bone transforms applied to x).
// Throws std::invalid_argument on length mismatch or when weights leave
// the probability simplex by more than 1e-6.
Vec3 lbs_point(const Vec3& x, std::span<const BoneTransform> bones, std::span<const real> weights);

// Pinhole camera; world-to-camera transform x_cam = R*x + t.
struct Camera {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  real fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 0, height = 0;

  Vec3 world_to_camera(const Vec3& x) const { return rotation * x + translation; }
  void validate() const;  // throws std::invalid_argument

  std::string to_json() const;
  static Camera from_json(const std::string& text);
};

struct Projection {
  Vec2 uv = Vec2::Zero();
  real depth = 0;
  bool in_front = false;  // camera-space z > 1e-6; callers cull, nothing throws
};

Projection project_point(const Camera& cam, const Vec3& x_world);

// Analytic Jacobian of the pixel projection wrt camera-space position:
// [[fx/z, 0, -fx*x/z^2], [0, fy/z, -fy*y/z^2]]. Requires z > 1e-6.
Mat23 projection_jacobian(const Camera& cam, const Vec3& x_cam);

}  // namespace mgs
