#include "mgs/raster.hpp"

#include <algorithm>
#include <stdexcept>

#include <Eigen/Dense>

#include "mgs/parallel.hpp"

namespace mgs {

namespace {
constexpr real kDilation = real(0.3);
constexpr real kMinAlpha = real(1) / 255;
constexpr real kSaturation = real(0.9999);
constexpr real kNearPlane = real(1e-6);
constexpr int kBandRows = 16;
}  // namespace

ObservationSet rigid_warp(const DeformedGaussians& d, const MatX& colors, const VecX& opacities,
                          std::span<const BoneTransform> bones, const MatX& weights,
                          RigidWarpRecord* rec) {
  const int n = int(d.positions.rows());
  const int k = int(bones.size());
  if (weights.rows() != n || weights.cols() != k) {
    throw std::invalid_argument("rigid_warp: weights shape mismatch");
  }
  ObservationSet obs;
  obs.positions.resize(n, 3);
  obs.rotations.resize(size_t(n));
  obs.scales = d.scales;
  obs.colors = colors;
  obs.opacities = opacities;
  if (rec) {
    rec->blend.resize(size_t(n));
    rec->polar_q.resize(size_t(n));
    rec->polar_h.resize(size_t(n));
    rec->fallback.assign(size_t(n), -1);
  }

  for (int i = 0; i < n; ++i) {
    const Vec3 x = d.positions.row(i).transpose();
    Vec3 xo = Vec3::Zero();
    Mat3 blend = Mat3::Zero();
    for (int b = 0; b < k; ++b) {
      const real w = weights(i, b);
      if (w == real(0)) continue;
      xo += w * bones[size_t(b)].apply(x);
      blend += w * bones[size_t(b)].rotation;
    }
    obs.positions.row(i) = xo.transpose();

    const Mat3 r_prime = quat_to_matrix(d.rotations[size_t(i)]);
    const Mat3 a = blend * r_prime;
    if (std::abs(a.determinant()) < real(1e-6)) {
      int dominant = 0;
      weights.row(i).maxCoeff(&dominant);
      obs.rotations[size_t(i)] = bones[size_t(dominant)].rotation * r_prime;
      if (rec) {
        rec->blend[size_t(i)] = blend;
        rec->fallback[size_t(i)] = dominant;
      }
      continue;
    }
    Mat3 h;
    const Mat3 q = polar_rotation(a, &h);
    obs.rotations[size_t(i)] = q;
    if (rec) {
      rec->blend[size_t(i)] = blend;
      rec->polar_q[size_t(i)] = q;
      rec->polar_h[size_t(i)] = h;
    }
  }
  return obs;
}

Mat3 polar_rotation(const Mat3& a, Mat3* h) {
  Eigen::JacobiSVD<Mat3> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  Mat3 q = u * v.transpose();
  if (q.determinant() < 0) {
    u.col(2) = -u.col(2);
    q = u * v.transpose();
  }
  if (h) *h = q.transpose() * a;
  return q;
}

Mat3 polar_rotation_backward(const Mat3& q, const Mat3& h, const Mat3& d_q) {
  // With A = Q H: dL/dA = 2 Q [u]x, u = (tr(H) I - H)^-1 vee(skew(Q^T G)).
  const Mat3 m = q.transpose() * d_q;
  const Vec3 g = real(0.5) * unskew(m - m.transpose());
  const Mat3 t = h.trace() * Mat3::Identity() - h;
  const Vec3 u = t.ldlt().solve(g);
  return 2 * q * skew(u);
}

RigidWarpGrads rigid_warp_backward(const DeformedGaussians& d, std::span<const BoneTransform> bones,
                                   const MatX& weights, const RigidWarpRecord& rec,
                                   const MatX& d_x_o, const std::vector<Mat3>& d_r_o) {
  const int n = int(d.positions.rows());
  const int k = int(bones.size());
  RigidWarpGrads g;
  g.d_positions = MatX::Zero(n, 3);
  g.d_rotations.assign(size_t(n), Mat3::Zero());
  g.d_weights = MatX::Zero(n, k);
  g.d_bone_rotations.assign(size_t(k), Mat3::Zero());
  g.d_bone_translations.assign(size_t(k), Vec3::Zero());

  for (int i = 0; i < n; ++i) {
    const Vec3 x = d.positions.row(i).transpose();
    const Vec3 dxo = d_x_o.row(i).transpose();
    const Mat3 r_prime = quat_to_matrix(d.rotations[size_t(i)]);

    // position path
    for (int b = 0; b < k; ++b) {
      const real w = weights(i, b);
      g.d_weights(i, b) += bones[size_t(b)].apply(x).dot(dxo);
      if (w == real(0)) continue;
      g.d_bone_rotations[size_t(b)] += w * dxo * x.transpose();
      g.d_bone_translations[size_t(b)] += w * dxo;
    }
    g.d_positions.row(i) = (rec.blend[size_t(i)].transpose() * dxo).transpose();

    // rotation path (d_rotations holds dL/dR'; the quaternion chain is the caller's)
    Mat3 d_r_prime;
    if (rec.fallback[size_t(i)] >= 0) {
      const int b = rec.fallback[size_t(i)];
      g.d_bone_rotations[size_t(b)] += d_r_o[size_t(i)] * r_prime.transpose();
      d_r_prime = bones[size_t(b)].rotation.transpose() * d_r_o[size_t(i)];
    } else {
      const Mat3 d_a =
          polar_rotation_backward(rec.polar_q[size_t(i)], rec.polar_h[size_t(i)], d_r_o[size_t(i)]);
      const Mat3 d_blend = d_a * r_prime.transpose();
      d_r_prime = rec.blend[size_t(i)].transpose() * d_a;
      for (int b = 0; b < k; ++b) {
        g.d_weights(i, b) += d_blend.cwiseProduct(bones[size_t(b)].rotation).sum();
        if (weights(i, b) != real(0)) {
          g.d_bone_rotations[size_t(b)] += weights(i, b) * d_blend;
        }
      }
    }
    g.d_rotations[size_t(i)] = d_r_prime;
  }
  return g;
}

Mat2 project_covariance(const Mat3& cov_world, const Camera& cam, const Vec3& x_cam) {
  const Mat3 cov_cam = cam.rotation * cov_world * cam.rotation.transpose();
  const Mat23 j = projection_jacobian(cam, x_cam);
  Mat2 out = j * cov_cam * j.transpose();
  out += kDilation * Mat2::Identity();
  return out;
}

SplatPrep prepare_splats(const ObservationSet& obs, const Camera& cam) {
  const int n = obs.size();
  SplatPrep prep;
  prep.splats.reserve(size_t(n));
  for (int i = 0; i < n; ++i) {
    const Vec3 xw = obs.positions.row(i).transpose();
    const Vec3 xc = cam.world_to_camera(xw);
    if (!(xc.z() > kNearPlane)) continue;  // behind-camera cull
    Splat2D s;
    s.x_cam = xc;
    s.depth = xc.z();
    s.uv.x() = cam.fx * xc.x() / xc.z() + cam.cx;
    s.uv.y() = cam.fy * xc.y() / xc.z() + cam.cy;
    const Vec3 scale = obs.scales.row(i).transpose();
    const Mat3 cov_world =
        obs.rotations[size_t(i)] * scale.array().square().matrix().asDiagonal() *
        obs.rotations[size_t(i)].transpose();
    s.cov = project_covariance(cov_world, cam, xc);
    const real det = s.cov.determinant();
    Mat2 conic;
    conic << s.cov(1, 1), -s.cov(0, 1), -s.cov(1, 0), s.cov(0, 0);
    s.conic = conic / det;
    // 3 sigma of the major axis
    const real mid = (s.cov(0, 0) + s.cov(1, 1)) / 2;
    const real disc = std::sqrt(std::max(mid * mid - det, real(0)));
    s.radius = 3 * std::sqrt(std::max(mid + disc, real(1e-12)));
    s.color = obs.colors.row(i).transpose();
    s.alpha = obs.opacities(i);
    s.source = i;
    prep.splats.push_back(s);
  }
  std::stable_sort(prep.splats.begin(), prep.splats.end(),
                   [](const Splat2D& a, const Splat2D& b) { return a.depth < b.depth; });
  return prep;
}

namespace {

std::vector<std::vector<int>> band_lists(const SplatPrep& prep, int height, bool truncate) {
  const int bands = (height + kBandRows - 1) / kBandRows;
  std::vector<std::vector<int>> lists(size_t(bands));
  for (int s = 0; s < int(prep.splats.size()); ++s) {
    const auto& sp = prep.splats[size_t(s)];
    int b0 = 0, b1 = bands - 1;
    if (truncate) {
      b0 = std::max(0, int(std::floor((sp.uv.y() - sp.radius) / kBandRows)));
      b1 = std::min(bands - 1, int(std::floor((sp.uv.y() + sp.radius) / kBandRows)));
    }
    for (int b = b0; b <= b1; ++b) lists[size_t(b)].push_back(s);
  }
  return lists;
}

}  // namespace

RenderOutput rasterize(const ObservationSet& obs, const Camera& cam) {
  const int w = cam.width, h = cam.height;
  RenderOutput out;
  out.image = Image(w, h, 3);
  out.alpha.assign(size_t(w) * h, real(0));
  out.contributors.assign(size_t(w) * h, 0);
  const SplatPrep prep = prepare_splats(obs, cam);
  if (prep.splats.empty()) return out;
  const auto lists = band_lists(prep, h, true);

  parallel_for(int64_t((h + kBandRows - 1) / kBandRows), [&](int64_t b0, int64_t b1, int) {
    for (int64_t band = b0; band < b1; ++band) {
      const auto& list = lists[size_t(band)];
      const int y_end = std::min(h, int(band + 1) * kBandRows);
      for (int y = int(band) * kBandRows; y < y_end; ++y) {
        for (int x = 0; x < w; ++x) {
          real t = 1, acc_alpha = 0;
          Vec3 c = Vec3::Zero();
          int count = 0;
          for (int idx : list) {
            const Splat2D& sp = prep.splats[size_t(idx)];
            const real dx = real(x) - sp.uv.x();
            const real dy = real(y) - sp.uv.y();
            if (std::abs(dx) > sp.radius || std::abs(dy) > sp.radius) continue;
            const real q = (sp.conic(0, 0) * dx * dx + 2 * sp.conic(0, 1) * dx * dy +
                            sp.conic(1, 1) * dy * dy) / 2;
            const real a = sp.alpha * std::exp(-q);
            if (a < kMinAlpha) continue;
            c += sp.color * (a * t);
            acc_alpha += a * t;
            t *= (1 - a);
            ++count;
            if (acc_alpha > kSaturation) break;
          }
          out.image.at(y, x, 0) = c.x();
          out.image.at(y, x, 1) = c.y();
          out.image.at(y, x, 2) = c.z();
          out.alpha[size_t(y) * w + x] = acc_alpha;
          out.contributors[size_t(y) * w + x] = count;
        }
      }
    }
  });
  return out;
}

RenderOutput render_oracle(const ObservationSet& obs, const Camera& cam) {
  const int w = cam.width, h = cam.height;
  RenderOutput out;
  out.image = Image(w, h, 3);
  out.alpha.assign(size_t(w) * h, real(0));
  out.contributors.assign(size_t(w) * h, 0);
  const SplatPrep prep = prepare_splats(obs, cam);
  if (prep.splats.empty()) return out;

  parallel_for(h, [&](int64_t y0, int64_t y1, int) {
    for (int y = int(y0); y < int(y1); ++y) {
      for (int x = 0; x < w; ++x) {
        real t = 1, acc_alpha = 0;
        Vec3 c = Vec3::Zero();
        int count = 0;
        for (const Splat2D& sp : prep.splats) {
          const real dx = real(x) - sp.uv.x();
          const real dy = real(y) - sp.uv.y();
          const real q = (sp.conic(0, 0) * dx * dx + 2 * sp.conic(0, 1) * dx * dy +
                          sp.conic(1, 1) * dy * dy) / 2;
          const real a = sp.alpha * std::exp(-q);
          c += sp.color * (a * t);
          acc_alpha += a * t;
          t *= (1 - a);
          ++count;
        }
        out.image.at(y, x, 0) = c.x();
        out.image.at(y, x, 1) = c.y();
        out.image.at(y, x, 2) = c.z();
        out.alpha[size_t(y) * w + x] = acc_alpha;
        out.contributors[size_t(y) * w + x] = count;
      }
    }
  });
  return out;
}

namespace {

struct SplatGradAccum {
  Vec2 d_uv = Vec2::Zero();
  Mat2 d_cov = Mat2::Zero();
  Vec3 d_color = Vec3::Zero();
  real d_alpha = 0;
};

struct Contributor {
  int idx;      // index into prep.splats
  real alpha;   // a = alpha * exp(-q)
  real t;       // transmittance before this splat
  real dx, dy;
};

}  // namespace

RasterGrads rasterize_backward(const ObservationSet& obs, const Camera& cam,
                               const Image& d_image, const std::vector<real>& d_alpha) {
  const int w = cam.width, h = cam.height;
  const int n = obs.size();
  if (d_image.width != w || d_image.height != h || int(d_alpha.size()) != w * h) {
    throw std::invalid_argument("rasterize_backward: upstream gradient size mismatch");
  }
  const SplatPrep prep = prepare_splats(obs, cam);
  const int m = int(prep.splats.size());
  const auto lists = band_lists(prep, h, true);
  const int bands = (h + kBandRows - 1) / kBandRows;

  const int workers = std::min(thread_count(), std::max(1, bands));
  std::vector<std::vector<SplatGradAccum>> partials(
      size_t(workers), std::vector<SplatGradAccum>(size_t(m)));

  parallel_for(bands, [&](int64_t b0, int64_t b1, int worker) {
    auto& acc = partials[size_t(worker)];
    std::vector<Contributor> walk;
    for (int64_t band = b0; band < b1; ++band) {
      const auto& list = lists[size_t(band)];
      const int y_end = std::min(h, int(band + 1) * kBandRows);
      for (int y = int(band) * kBandRows; y < y_end; ++y) {
        for (int x = 0; x < w; ++x) {
          const Vec3 dc(d_image.at(y, x, 0), d_image.at(y, x, 1), d_image.at(y, x, 2));
          const real dm = d_alpha[size_t(y) * w + x];
          if (dc.isZero(real(0)) && dm == real(0)) continue;

          // replay the forward walk for this pixel
          walk.clear();
          real t = 1, acc_alpha = 0;
          for (int idx : list) {
            const Splat2D& sp = prep.splats[size_t(idx)];
            const real dx = real(x) - sp.uv.x();
            const real dy = real(y) - sp.uv.y();
            if (std::abs(dx) > sp.radius || std::abs(dy) > sp.radius) continue;
            const real q = (sp.conic(0, 0) * dx * dx + 2 * sp.conic(0, 1) * dx * dy +
                            sp.conic(1, 1) * dy * dy) / 2;
            const real a = sp.alpha * std::exp(-q);
            if (a < kMinAlpha) continue;
            walk.push_back({idx, a, t, dx, dy});
            acc_alpha += a * t;
            t *= (1 - a);
            if (acc_alpha > kSaturation) break;
          }

          // suffix recurrences avoid dividing by (1 - a)
          Vec3 s_color = Vec3::Zero();  // sum_{i>j} c_i a_i prod_{j<k<i}(1-a_k)
          real s_alpha = 0;
          for (int ci = int(walk.size()) - 1; ci >= 0; --ci) {
            const Contributor& cb = walk[size_t(ci)];
            const Splat2D& sp = prep.splats[size_t(cb.idx)];
            auto& g = acc[size_t(cb.idx)];

            const real d_a = dc.dot((sp.color - s_color) * cb.t) + dm * cb.t * (1 - s_alpha);
            g.d_color += dc * (cb.alpha * cb.t);
            g.d_alpha += d_a * (cb.alpha / sp.alpha);  // a = alpha * exp(-q)
            const real d_q = -d_a * cb.alpha;
            // q = d^T conic d / 2
            const real gx = sp.conic(0, 0) * cb.dx + sp.conic(0, 1) * cb.dy;
            const real gy = sp.conic(0, 1) * cb.dx + sp.conic(1, 1) * cb.dy;
            g.d_uv.x() += -d_q * gx;
            g.d_uv.y() += -d_q * gy;
            Mat2 d_conic;
            d_conic << cb.dx * cb.dx / 2, cb.dx * cb.dy / 2, cb.dx * cb.dy / 2, cb.dy * cb.dy / 2;
            g.d_cov += -sp.conic * (d_q * d_conic) * sp.conic;

            s_color = sp.color * cb.alpha + (1 - cb.alpha) * s_color;
            s_alpha = cb.alpha + (1 - cb.alpha) * s_alpha;
          }
        }
      }
    }
  }, workers);

  // reduce partials in worker order, then chain into world space
  std::vector<SplatGradAccum> total(size_t(m));
  for (int wk = 0; wk < workers; ++wk) {
    for (int s = 0; s < m; ++s) {
      total[size_t(s)].d_uv += partials[size_t(wk)][size_t(s)].d_uv;
      total[size_t(s)].d_cov += partials[size_t(wk)][size_t(s)].d_cov;
      total[size_t(s)].d_color += partials[size_t(wk)][size_t(s)].d_color;
      total[size_t(s)].d_alpha += partials[size_t(wk)][size_t(s)].d_alpha;
    }
  }

  RasterGrads out;
  out.d_positions = MatX::Zero(n, 3);
  out.d_rotations.assign(size_t(n), Mat3::Zero());
  out.d_scales = MatX::Zero(n, 3);
  out.d_colors = MatX::Zero(n, 3);
  out.d_opacities = VecX::Zero(n);

  for (int s = 0; s < m; ++s) {
    const Splat2D& sp = prep.splats[size_t(s)];
    const auto& g = total[size_t(s)];
    const int i = sp.source;
    out.d_colors.row(i) += g.d_color.transpose();
    out.d_opacities(i) += g.d_alpha;

    const Mat23 j = projection_jacobian(cam, sp.x_cam);
    const Vec3 scale = obs.scales.row(i).transpose();
    const Mat3 r_o = obs.rotations[size_t(i)];
    const Mat3 cov_world = r_o * scale.array().square().matrix().asDiagonal() * r_o.transpose();
    const Mat3 cov_cam = cam.rotation * cov_world * cam.rotation.transpose();

    // Sigma' = J cov_cam J^T + dilation
    const Mat3 d_cov_cam = j.transpose() * g.d_cov * j;
    const Mat23 d_j = 2 * g.d_cov * j * cov_cam;

    Vec3 d_x_cam = j.transpose() * g.d_uv;
    const real z = sp.x_cam.z(), z2 = z * z, z3 = z2 * z;
    d_x_cam.x() += d_j(0, 2) * (-cam.fx / z2);
    d_x_cam.y() += d_j(1, 2) * (-cam.fy / z2);
    d_x_cam.z() += d_j(0, 0) * (-cam.fx / z2) + d_j(0, 2) * (2 * cam.fx * sp.x_cam.x() / z3) +
                   d_j(1, 1) * (-cam.fy / z2) + d_j(1, 2) * (2 * cam.fy * sp.x_cam.y() / z3);

    out.d_positions.row(i) += (cam.rotation.transpose() * d_x_cam).transpose();

    const Mat3 d_cov_world = cam.rotation.transpose() * d_cov_cam * cam.rotation;
    out.d_rotations[size_t(i)] +=
        2 * d_cov_world * r_o * scale.array().square().matrix().asDiagonal();
    const Mat3 rtgr = r_o.transpose() * d_cov_world * r_o;
    for (int c = 0; c < 3; ++c) out.d_scales(i, c) += 2 * scale(c) * rtgr(c, c);
  }
  return out;
}

}  // namespace mgs
