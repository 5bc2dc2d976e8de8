#include "mgs/geometry.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace mgs {

Quat quat_mul(const Quat& a, const Quat& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

Quat quat_normalize(const Quat& q) {
  real n = q.norm();
  if (n == real(0)) return Quat{};
  return {q.w / n, q.x / n, q.y / n, q.z / n};
}

Mat3 quat_to_matrix(const Quat& q) {
  const real w = q.w, x = q.x, y = q.y, z = q.z;
  Mat3 r;
  r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
      2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
      2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return r;
}

Mat3 skew(const Vec3& v) {
  Mat3 k;
  k << 0, -v.z(), v.y(),
      v.z(), 0, -v.x(),
      -v.y(), v.x(), 0;
  return k;
}

Vec3 unskew(const Mat3& k) { return {k(2, 1), k(0, 2), k(1, 0)}; }

Mat3 rodrigues_to_matrix(const Vec3& theta) {
  const real angle = theta.norm();
  if (angle < real(1e-8)) {
    return Mat3::Identity() + skew(theta);
  }
  const Vec3 axis = theta / angle;
  const Mat3 k = skew(axis);
  return Mat3::Identity() + std::sin(angle) * k + (1 - std::cos(angle)) * (k * k);
}

Vec3 matrix_to_rodrigues(const Mat3& r) {
  const real defect = (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(defect <= real(1e-5))) {
    throw std::invalid_argument("matrix_to_rodrigues: input is not a rotation matrix");
  }
  const real cos_angle = std::clamp((r.trace() - 1) / 2, real(-1), real(1));
  const real angle = std::acos(cos_angle);
  const Vec3 v = unskew(r - r.transpose());  // = 2 sin(angle) * axis

  if (angle < real(1e-6)) {
    // sin(t)/t ~ 1 - t^2/6; v/2 = sin(t)*axis
    return v * real(0.5) * (1 + angle * angle / 6);
  }
  if (angle > kPi - real(1e-4)) {
    // Near pi the skew part vanishes; recover the axis magnitudes from the
    // diagonal and the signs from the off-diagonal sums.
    Vec3 a;
    a.x() = std::sqrt(std::max((r(0, 0) - cos_angle) / (1 - cos_angle), real(0)));
    a.y() = std::sqrt(std::max((r(1, 1) - cos_angle) / (1 - cos_angle), real(0)));
    a.z() = std::sqrt(std::max((r(2, 2) - cos_angle) / (1 - cos_angle), real(0)));
    // Fix signs: take the largest component positive, infer the others from
    // the off-diagonal sums a_i a_j (1 - cos) = (r_ij + r_ji) / 2.
    int m = 0;
    a.cwiseAbs().maxCoeff(&m);
    const real denom = a(m) * (1 - cos_angle);
    for (int j = 0; j < 3; ++j) {
      if (j == m) continue;
      const real sum = (r(m, j) + r(j, m)) / 2;
      a(j) = std::copysign(a(j), sum / denom);
    }
    // Resolve the overall sign with the (tiny but signed) skew part.
    if (v.dot(a) < 0) a = -a;
    return a.normalized() * angle;
  }
  return v * (angle / (2 * std::sin(angle)));
}

std::array<Mat3, 3> rodrigues_jacobian(const Vec3& theta) {
  const real angle2 = theta.squaredNorm();
  std::array<Mat3, 3> out;
  if (angle2 < real(1e-16)) {
    for (int i = 0; i < 3; ++i) out[i] = skew(Vec3::Unit(i));
    return out;
  }
  // Gallego & Yezzi: dR/dtheta_i = (theta_i [theta]x + [theta x (I - R) e_i]x) / |theta|^2 * R
  const Mat3 r = rodrigues_to_matrix(theta);
  const Mat3 k = skew(theta);
  const Mat3 imr = Mat3::Identity() - r;
  for (int i = 0; i < 3; ++i) {
    const Vec3 u = theta.cross(imr.col(i));
    out[i] = ((theta(i) * k + skew(u)) / angle2) * r;
  }
  return out;
}

Vec3 lbs_point(const Vec3& x, std::span<const BoneTransform> bones, std::span<const real> weights) {
  if (bones.size() != weights.size()) {
    throw std::invalid_argument("lbs_point: bones/weights length mismatch");
  }
  real sum = 0;
  Vec3 out = Vec3::Zero();
  for (size_t k = 0; k < bones.size(); ++k) {
    if (weights[k] < real(-1e-9)) throw std::invalid_argument("lbs_point: negative weight");
    sum += weights[k];
    out += weights[k] * bones[k].apply(x);
  }
  if (std::abs(sum - 1) > real(1e-6)) {
    throw std::invalid_argument("lbs_point: weights do not sum to 1");
  }
  return out;
}

void Camera::validate() const {
  if (!(fx > 0) || !(fy > 0)) throw std::invalid_argument("camera: focal lengths must be positive");
  if (!(cx >= 0 && cx < width) || !(cy >= 0 && cy < height)) {
    throw std::invalid_argument("camera: principal point outside image");
  }
  const real defect = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (!(defect <= real(1e-5))) throw std::invalid_argument("camera: rotation is not orthonormal");
}

std::string Camera::to_json() const {
  nlohmann::json j;
  std::vector<double> r(9);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) r[i * 3 + k] = double(rotation(i, k));
  j["rotation"] = r;
  j["translation"] = {double(translation.x()), double(translation.y()), double(translation.z())};
  j["fx"] = double(fx);
  j["fy"] = double(fy);
  j["cx"] = double(cx);
  j["cy"] = double(cy);
  j["width"] = width;
  j["height"] = height;
  return j.dump(2);
}

Camera Camera::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  Camera c;
  const auto& r = j.at("rotation");
  if (r.size() != 9) throw std::invalid_argument("camera: rotation must have 9 entries");
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) c.rotation(i, k) = real(r[i * 3 + k].get<double>());
  const auto& t = j.at("translation");
  for (int i = 0; i < 3; ++i) c.translation(i) = real(t[i].get<double>());
  c.fx = real(j.at("fx").get<double>());
  c.fy = real(j.at("fy").get<double>());
  c.cx = real(j.at("cx").get<double>());
  c.cy = real(j.at("cy").get<double>());
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.validate();
  return c;
}

Projection project_point(const Camera& cam, const Vec3& x_world) {
  const Vec3 xc = cam.world_to_camera(x_world);
  Projection p;
  p.depth = xc.z();
  p.in_front = xc.z() > real(1e-6);
  if (p.in_front) {
    p.uv.x() = cam.fx * xc.x() / xc.z() + cam.cx;
    p.uv.y() = cam.fy * xc.y() / xc.z() + cam.cy;
  }
  return p;
}

Mat23 projection_jacobian(const Camera& cam, const Vec3& x_cam) {
  const real z = x_cam.z();
  Mat23 j;
  j << cam.fx / z, 0, -cam.fx * x_cam.x() / (z * z),
      0, cam.fy / z, -cam.fy * x_cam.y() / (z * z);
  return j;
}

}  // namespace mgs
