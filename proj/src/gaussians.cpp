#include "mgs/gaussians.hpp"

#include <algorithm>
#include <filesystem>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mgs/io.hpp"

namespace mgs {

namespace {
constexpr real kLogScaleMin = real(-16.0);  // exp > 1e-7
constexpr real kLogScaleMax = real(2.302585092994045);  // exp < 10
}

VecX GaussianSet::opacities() const {
  VecX a(size());
  for (int i = 0; i < size(); ++i) a(i) = sigmoid(opacity_logits(i));
  return a;
}

MatX GaussianSet::scales() const { return log_scales.array().exp().matrix(); }

void GaussianSet::clamp_log_scales() {
  log_scales = log_scales.cwiseMax(kLogScaleMin).cwiseMin(kLogScaleMax);
}

void GaussianSet::normalize_rotations() {
  for (auto& q : rotations) q = quat_normalize(q);
}

Mat3 build_covariance(const Vec3& scales, const Quat& r) {
  const Mat3 rot = quat_to_matrix(r);
  return rot * scales.array().square().matrix().asDiagonal() * rot.transpose();
}

GaussianSet init_from_template(const BodyTemplate& tpl) {
  const int n = tpl.vertex_count();
  GaussianSet g;
  g.positions = tpl.vertices;
  g.log_scales.resize(n, 3);
  g.rotations.assign(size_t(n), Quat{});
  g.colors = MatX::Constant(n, 3, real(0.5));
  g.opacity_logits = VecX::Constant(n, logit(real(0.1)));

  const int neighbors = std::min(3, n - 1);
  for (int i = 0; i < n; ++i) {
    std::vector<real> d2(size_t(n));
    for (int j = 0; j < n; ++j) d2[size_t(j)] = (tpl.vertices.row(j) - tpl.vertices.row(i)).squaredNorm();
    d2[size_t(i)] = std::numeric_limits<real>::max();
    std::partial_sort(d2.begin(), d2.begin() + neighbors, d2.end());
    real mean = 0;
    for (int k = 0; k < neighbors; ++k) mean += std::sqrt(d2[size_t(k)]);
    mean /= neighbors;
    const real ls = std::clamp(std::log(std::max(mean, real(1e-6))), kLogScaleMin, kLogScaleMax);
    g.log_scales.row(i).setConstant(ls);
  }
  return g;
}

namespace {

struct RowDraft {
  Vec3 position, log_scale;
  Quat rotation;
  Vec3 color;
  real opacity_logit;
};

RowDraft draft_of(const GaussianSet& set, int i) {
  return {set.positions.row(i).transpose(), set.log_scales.row(i).transpose(),
          set.rotations[size_t(i)], set.colors.row(i).transpose(), set.opacity_logits(i)};
}

Vec3 sample_inside(const GaussianSet& src, int i, std::mt19937_64& rng) {
  std::normal_distribution<real> gauss(0, 1);
  const Vec3 s = src.log_scales.row(i).transpose().array().exp();
  Vec3 xi(gauss(rng), gauss(rng), gauss(rng));
  return quat_to_matrix(src.rotations[size_t(i)]) * s.cwiseProduct(xi);
}

}  // namespace

DensifyResult densify_and_prune(GaussianSet& set, const VecX& grad_accum,
                                const DensifyOptions& opts, std::mt19937_64& rng) {
  const int n = set.size();
  if (grad_accum.size() != n) throw std::invalid_argument("densify: grad_accum size mismatch");

  DensifyResult res;
  std::vector<RowDraft> rows;
  rows.reserve(size_t(n) + 16);

  const VecX alpha = set.opacities();
  for (int i = 0; i < n; ++i) {
    const Vec3 s = set.log_scales.row(i).transpose().array().exp();
    const real max_scale = s.maxCoeff();
    if (alpha(i) < opts.min_opacity || max_scale > opts.max_scale) {
      ++res.pruned;
      continue;
    }
    const bool high_grad = grad_accum(i) > opts.grad_threshold;
    const bool large = opts.split_scale_threshold > 0 && max_scale > opts.split_scale_threshold;
    if (high_grad && large) {
      // two children sampled inside the parent, scales shrunk
      RowDraft child = draft_of(set, i);
      child.log_scale.array() -= std::log(opts.split_scale_shrink);
      for (int c = 0; c < 2; ++c) {
        RowDraft d = child;
        d.position += sample_inside(set, i, rng);
        rows.push_back(d);
        res.source_index.push_back(-1);
      }
      ++res.split;
    } else if (high_grad) {
      rows.push_back(draft_of(set, i));
      res.source_index.push_back(i);
      RowDraft d = draft_of(set, i);
      d.position += sample_inside(set, i, rng);
      rows.push_back(d);
      res.source_index.push_back(-1);
      ++res.cloned;
    } else {
      rows.push_back(draft_of(set, i));
      res.source_index.push_back(i);
    }
  }

  GaussianSet out;
  const int m = int(rows.size());
  out.positions.resize(m, 3);
  out.log_scales.resize(m, 3);
  out.colors.resize(m, 3);
  out.opacity_logits.resize(m);
  out.rotations.resize(size_t(m));
  for (int i = 0; i < m; ++i) {
    out.positions.row(i) = rows[size_t(i)].position.transpose();
    out.log_scales.row(i) = rows[size_t(i)].log_scale.transpose();
    out.colors.row(i) = rows[size_t(i)].color.transpose();
    out.opacity_logits(i) = rows[size_t(i)].opacity_logit;
    out.rotations[size_t(i)] = rows[size_t(i)].rotation;
  }
  out.revision = set.revision + 1;
  set = std::move(out);
  return res;
}

namespace {

std::vector<real> matrix_to_flat(const MatX& m) {
  std::vector<real> v(size_t(m.rows() * m.cols()));
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) v[size_t(i * m.cols() + j)] = m(i, j);
  return v;
}

MatX flat_to_matrix(const std::vector<real>& v, int rows, int cols) {
  if (int(v.size()) != rows * cols) throw std::runtime_error("checkpoint blob size mismatch");
  MatX m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) m(i, j) = v[size_t(i * cols + j)];
  return m;
}

}  // namespace

void save_checkpoint(const std::string& dir, const GaussianSet& set,
                     const std::vector<NamedBlob>& extra, const std::string& config_json) {
  namespace fs = std::filesystem;
  const fs::path final_dir(dir);
  const fs::path tmp_dir(dir + ".tmp");
  fs::remove_all(tmp_dir);
  fs::create_directories(tmp_dir);

  nlohmann::json manifest;
  manifest["count"] = set.size();
  manifest["revision"] = set.revision;
  manifest["dtype"] = "f32";
  manifest["config_hash"] = fnv1a64(config_json);

  auto put = [&](const std::string& name, const std::vector<real>& data, std::vector<int> shape) {
    write_f32_blob((tmp_dir / (name + ".bin")).string(), data);
    manifest["fields"].push_back({{"name", name}, {"shape", shape}, {"file", name + ".bin"}});
  };
  put("positions", matrix_to_flat(set.positions), {set.size(), 3});
  put("log_scales", matrix_to_flat(set.log_scales), {set.size(), 3});
  std::vector<real> quats(size_t(set.size()) * 4);
  for (int i = 0; i < set.size(); ++i) {
    const Quat& q = set.rotations[size_t(i)];
    quats[size_t(i * 4) + 0] = q.w;
    quats[size_t(i * 4) + 1] = q.x;
    quats[size_t(i * 4) + 2] = q.y;
    quats[size_t(i * 4) + 3] = q.z;
  }
  put("rotations", quats, {set.size(), 4});
  put("colors", matrix_to_flat(set.colors), {set.size(), 3});
  std::vector<real> ol(size_t(set.size()));
  for (int i = 0; i < set.size(); ++i) ol[size_t(i)] = set.opacity_logits(i);
  put("opacity_logits", ol, {set.size()});
  for (const auto& b : extra) put(b.name, b.data, b.shape);

  write_text_file((tmp_dir / "config.json").string(), config_json);
  write_text_file((tmp_dir / "manifest.json").string(), manifest.dump(2));
  fs::remove_all(final_dir);
  fs::rename(tmp_dir, final_dir);
}

Checkpoint load_checkpoint(const std::string& dir) {
  nlohmann::json manifest = nlohmann::json::parse(read_text_file(dir + "/manifest.json"));
  const int n = manifest.at("count").get<int>();
  Checkpoint ck;
  ck.config_json = read_text_file(dir + "/config.json");
  ck.set.revision = manifest.at("revision").get<std::uint64_t>();

  std::vector<NamedBlob> blobs;
  for (const auto& f : manifest.at("fields")) {
    NamedBlob b;
    b.name = f.at("name").get<std::string>();
    b.shape = f.at("shape").get<std::vector<int>>();
    b.data = read_f32_blob(dir + "/" + f.at("file").get<std::string>());
    blobs.push_back(std::move(b));
  }
  auto take = [&](const std::string& name) -> NamedBlob {
    for (auto it = blobs.begin(); it != blobs.end(); ++it) {
      if (it->name == name) {
        NamedBlob b = std::move(*it);
        blobs.erase(it);
        return b;
      }
    }
    throw std::runtime_error("checkpoint missing field: " + name);
  };
  ck.set.positions = flat_to_matrix(take("positions").data, n, 3);
  ck.set.log_scales = flat_to_matrix(take("log_scales").data, n, 3);
  const auto quats = take("rotations").data;
  ck.set.rotations.resize(size_t(n));
  for (int i = 0; i < n; ++i) {
    ck.set.rotations[size_t(i)] =
        Quat{quats[size_t(i * 4) + 0], quats[size_t(i * 4) + 1], quats[size_t(i * 4) + 2],
             quats[size_t(i * 4) + 3]};
  }
  ck.set.colors = flat_to_matrix(take("colors").data, n, 3);
  const auto ol = take("opacity_logits").data;
  ck.set.opacity_logits.resize(n);
  for (int i = 0; i < n; ++i) ck.set.opacity_logits(i) = ol[size_t(i)];
  ck.set.normalize_rotations();
  ck.extra = std::move(blobs);
  return ck;
}

}  // namespace mgs
