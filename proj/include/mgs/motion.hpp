#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "mgs/body.hpp"

namespace mgs {

// Temporal sampling intervals {s0 + i*ds : i = 0..m}, strictly increasing.
struct StrideSet {
  std::vector<int> strides;
  int s0 = 1, delta_s = 0, m = 0;

  int count() const { return int(strides.size()); }
  int max_stride() const { return strides.empty() ? 0 : strides.back(); }
};

// ds == 0 collapses the duplicates to a single stride (warns on stderr).
StrideSet multiscale_strides(int s0, int delta_s, int m);

// {t-s, t-2s, ..., t-Ls}, each clamped from below to t_min.
std::vector<int> sample_sequence(int t, int s, int l, int t_min);

// Frame-indexed pose storage; frames t_min .. t_min + size - 1.
struct PoseStore {
  int t_min = 0;
  std::vector<Pose> poses;

  int t_max() const { return t_min + int(poses.size()) - 1; }
  const Pose& at(int t) const;         // throws on missing frame
  const Pose& at_clamped(int t) const; // clamps into range

  void save(const std::string& dir) const;  // poses/%06d.json layout
  static PoseStore load(const std::string& dir);
};

// Per-joint axis-angle of R_t * R_prev^-1; root translation excluded.
MatX pose_residual(const Pose& p_t, const Pose& p_prev);

// Stacked skeleton residuals, |S| x L slices of K x 3.
struct SkeletonMotionSeq {
  std::vector<real> data;  // [scale][step][joint][xyz]
  int n_scales = 0, length = 0, joints = 0;
  int frame = 0;

  real& at(int s, int l, int j, int c) {
    return data[size_t(((s * length + l) * joints + j) * 3 + c)];
  }
  real at(int s, int l, int j, int c) const {
    return data[size_t(((s * length + l) * joints + j) * 3 + c)];
  }
  VecX flattened() const;
};

SkeletonMotionSeq skeleton_motion_sequence(const PoseStore& poses, int t,
                                           const StrideSet& strides, int l);

// Per-vertex velocity of the posed mesh at stride s (canonical length per frame).
struct VelocityField {
  MatX v;  // N x 3
  int frame = 0;
  int stride = 1;
};

VelocityField vertex_velocity_field(const BodyTemplate& tpl, const PoseStore& poses, int t, int s);

// Indices of the tau nearest template vertices, ascending distance, ties by index.
std::vector<int> knn_indices(const BodyTemplate& tpl, const Vec3& query, int tau);

struct KnnCache {
  std::vector<int> indices;  // n x tau row-major
  int n = 0, tau = 0;
  std::uint64_t revision = 0;
};

KnnCache build_knn_cache(const BodyTemplate& tpl, const MatX& positions, int tau,
                         std::uint64_t revision);

// Per-Gaussian gathered neighbor velocities across scales and steps.
struct PointMotionSeq {
  std::vector<real> data;  // [gaussian][scale][step][neighbor][xyz]
  int n = 0, n_scales = 0, length = 0, tau = 0;
  int frame = 0;

  size_t offset(int i, int s, int l, int nb) const {
    return size_t((((i * n_scales + s) * length + l) * tau + nb) * 3);
  }
};

// Memoizes vertex velocity fields by (frame, stride).
class VelocityFieldCache {
 public:
  VelocityFieldCache(const BodyTemplate* tpl, const PoseStore* poses)
      : tpl_(tpl), poses_(poses) {}
  const MatX& get(int t, int s);
  void clear() { cache_.clear(); }

 private:
  const BodyTemplate* tpl_;
  const PoseStore* poses_;
  std::map<std::pair<int, int>, MatX> cache_;
};

// Throws std::runtime_error when `revision` does not match the cache
// (stale neighbors after densification).
PointMotionSeq build_point_motion(const BodyTemplate& tpl, const PoseStore& poses,
                                  const MatX& gaussian_positions, std::uint64_t revision,
                                  const KnnCache& cache, int t, const StrideSet& strides, int l,
                                  VelocityFieldCache* memo = nullptr);

}  // namespace mgs
