#include "mgs/motion.hpp"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mgs/io.hpp"

namespace mgs {

StrideSet multiscale_strides(int s0, int delta_s, int m) {
  if (s0 < 1 || delta_s < 0 || m < 0) throw std::invalid_argument("strides: need s0>=1, ds>=0, m>=0");
  StrideSet out;
  out.s0 = s0;
  out.delta_s = delta_s;
  out.m = m;
  for (int i = 0; i <= m; ++i) {
    const int s = s0 + i * delta_s;
    if (!out.strides.empty() && out.strides.back() == s) continue;
    out.strides.push_back(s);
  }
  if (delta_s == 0 && m > 0) {
    std::cerr << "[mgs] warning: degenerate stride schedule (ds=0) collapsed to {" << s0 << "}\n";
  }
  return out;
}

std::vector<int> sample_sequence(int t, int s, int l, int t_min) {
  if (l < 1 || s < 1) throw std::invalid_argument("sample_sequence: need L>=1, s>=1");
  std::vector<int> out(size_t(l));
  for (int i = 1; i <= l; ++i) out[size_t(i - 1)] = std::max(t - i * s, t_min);
  return out;
}

const Pose& PoseStore::at(int t) const {
  if (t < t_min || t > t_max()) throw std::out_of_range("pose store: missing frame " + std::to_string(t));
  return poses[size_t(t - t_min)];
}

const Pose& PoseStore::at_clamped(int t) const {
  return poses[size_t(std::clamp(t, t_min, t_max()) - t_min)];
}

void PoseStore::save(const std::string& dir) const {
  std::filesystem::create_directories(dir);
  for (int i = 0; i < int(poses.size()); ++i) {
    const Pose& p = poses[size_t(i)];
    nlohmann::json j;
    std::vector<std::vector<double>> rot;
    for (int r = 0; r < p.joint_count(); ++r) {
      rot.push_back({double(p.joint_rotations(r, 0)), double(p.joint_rotations(r, 1)),
                     double(p.joint_rotations(r, 2))});
    }
    j["joint_rotations"] = rot;
    j["root_translation"] = {double(p.root_translation.x()), double(p.root_translation.y()),
                             double(p.root_translation.z())};
    write_text_file(dir + "/" + format_index(t_min + i, 6) + ".json", j.dump(2));
  }
}

PoseStore PoseStore::load(const std::string& dir) {
  PoseStore out;
  std::vector<int> frames;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".json") frames.push_back(std::stoi(e.path().stem().string()));
  }
  if (frames.empty()) throw std::runtime_error("pose store: no frames in " + dir);
  std::sort(frames.begin(), frames.end());
  out.t_min = frames.front();
  for (int i = 0; i < int(frames.size()); ++i) {
    if (frames[size_t(i)] != out.t_min + i) throw std::runtime_error("pose store: frame gap");
  }
  for (int f : frames) {
    nlohmann::json j = nlohmann::json::parse(read_text_file(dir + "/" + format_index(f, 6) + ".json"));
    Pose p;
    const auto& rot = j.at("joint_rotations");
    p.joint_rotations.resize(int(rot.size()), 3);
    for (int r = 0; r < int(rot.size()); ++r) {
      for (int c = 0; c < 3; ++c) p.joint_rotations(r, c) = real(rot[r][c].get<double>());
    }
    const auto& t = j.at("root_translation");
    for (int c = 0; c < 3; ++c) p.root_translation(c) = real(t[c].get<double>());
    out.poses.push_back(p.canonicalized());
  }
  return out;
}

MatX pose_residual(const Pose& p_t, const Pose& p_prev) {
  const int k = p_t.joint_count();
  if (p_prev.joint_count() != k) throw std::invalid_argument("pose_residual: joint count mismatch");
  MatX out(k, 3);
  for (int j = 0; j < k; ++j) {
    const Mat3 rt = rodrigues_to_matrix(p_t.joint_rotations.row(j).transpose());
    const Mat3 rp = rodrigues_to_matrix(p_prev.joint_rotations.row(j).transpose());
    out.row(j) = matrix_to_rodrigues(rt * rp.transpose()).transpose();
  }
  return out;
}

VecX SkeletonMotionSeq::flattened() const {
  VecX v(int(data.size()));
  for (int i = 0; i < v.size(); ++i) v(i) = data[size_t(i)];
  return v;
}

SkeletonMotionSeq skeleton_motion_sequence(const PoseStore& poses, int t,
                                           const StrideSet& strides, int l) {
  SkeletonMotionSeq out;
  out.n_scales = strides.count();
  out.length = l;
  out.joints = poses.at(poses.t_min).joint_count();
  out.frame = t;
  out.data.assign(size_t(out.n_scales * l * out.joints * 3), real(0));
  for (int si = 0; si < strides.count(); ++si) {
    const int s = strides.strides[size_t(si)];
    const auto seq = sample_sequence(t, s, l, poses.t_min);
    for (int li = 0; li < l; ++li) {
      const int tp = seq[size_t(li)];
      const int tpp = std::max(tp - s, poses.t_min);
      const MatX res = pose_residual(poses.at(tp), poses.at(tpp));
      for (int j = 0; j < out.joints; ++j) {
        for (int c = 0; c < 3; ++c) out.at(si, li, j, c) = res(j, c);
      }
    }
  }
  return out;
}

VelocityField vertex_velocity_field(const BodyTemplate& tpl, const PoseStore& poses, int t, int s) {
  VelocityField out;
  out.frame = t;
  out.stride = s;
  const int prev = std::max(t - s, poses.t_min);
  if (prev == t) {
    out.v = MatX::Zero(tpl.vertex_count(), 3);
    return out;
  }
  out.v = (pose_mesh(tpl, poses.at(t)) - pose_mesh(tpl, poses.at(prev))) / real(s);
  return out;
}

std::vector<int> knn_indices(const BodyTemplate& tpl, const Vec3& query, int tau) {
  const int n = tpl.vertex_count();
  if (tau > n) throw std::invalid_argument("knn: tau exceeds vertex count");
  std::vector<std::pair<real, int>> d(size_t(n));
  for (int i = 0; i < n; ++i) {
    d[size_t(i)] = {(tpl.vertices.row(i).transpose() - query).squaredNorm(), i};
  }
  std::partial_sort(d.begin(), d.begin() + tau, d.end());
  std::vector<int> out(size_t(tau));
  for (int i = 0; i < tau; ++i) out[size_t(i)] = d[size_t(i)].second;
  return out;
}

KnnCache build_knn_cache(const BodyTemplate& tpl, const MatX& positions, int tau,
                         std::uint64_t revision) {
  KnnCache c;
  c.n = int(positions.rows());
  c.tau = tau;
  c.revision = revision;
  c.indices.resize(size_t(c.n * tau));
  for (int i = 0; i < c.n; ++i) {
    const auto idx = knn_indices(tpl, positions.row(i).transpose(), tau);
    std::copy(idx.begin(), idx.end(), c.indices.begin() + size_t(i * tau));
  }
  return c;
}

const MatX& VelocityFieldCache::get(int t, int s) {
  const auto key = std::make_pair(t, s);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  return cache_.emplace(key, vertex_velocity_field(*tpl_, *poses_, t, s).v).first->second;
}

PointMotionSeq build_point_motion(const BodyTemplate& tpl, const PoseStore& poses,
                                  const MatX& gaussian_positions, std::uint64_t revision,
                                  const KnnCache& cache, int t, const StrideSet& strides, int l,
                                  VelocityFieldCache* memo) {
  const int n = int(gaussian_positions.rows());
  if (cache.revision != revision || cache.n != n) {
    throw std::runtime_error("point motion: stale KNN cache (revision mismatch)");
  }
  PointMotionSeq out;
  out.n = n;
  out.n_scales = strides.count();
  out.length = l;
  out.tau = cache.tau;
  out.frame = t;
  out.data.assign(size_t(n) * size_t(out.n_scales) * size_t(l) * size_t(cache.tau) * 3, real(0));

  VelocityFieldCache local(&tpl, &poses);
  VelocityFieldCache& fields = memo ? *memo : local;
  for (int si = 0; si < out.n_scales; ++si) {
    const int s = strides.strides[size_t(si)];
    const auto seq = sample_sequence(t, s, l, poses.t_min);
    for (int li = 0; li < l; ++li) {
      const MatX& v = fields.get(seq[size_t(li)], s);
      for (int i = 0; i < n; ++i) {
        real* dst = out.data.data() + out.offset(i, si, li, 0);
        const int* nb = cache.indices.data() + size_t(i * cache.tau);
        for (int k = 0; k < cache.tau; ++k) {
          dst[k * 3 + 0] = v(nb[k], 0);
          dst[k * 3 + 1] = v(nb[k], 1);
          dst[k * 3 + 2] = v(nb[k], 2);
        }
      }
    }
  }
  return out;
}

}  // namespace mgs
