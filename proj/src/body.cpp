#include "mgs/body.hpp"

#include <filesystem>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mgs/io.hpp"

namespace mgs {

void BodyTemplate::validate() const {
  const int n = vertex_count();
  const int k = joint_count();
  if (k < 2 || n < k) throw std::invalid_argument("body: requires N >= K >= 2");
  if (int(parents.size()) != k || int(names.size()) != k || skin_weights.rows() != n ||
      skin_weights.cols() != k || vertices.cols() != 3 || rest_joints.cols() != 3) {
    throw std::invalid_argument("body: inconsistent shapes");
  }
  if (parents[0] != -1) throw std::invalid_argument("body: joint 0 must be the root");
  for (int j = 1; j < k; ++j) {
    if (parents[j] < 0 || parents[j] >= j) {
      throw std::invalid_argument("body: parent index must precede child");
    }
  }
  for (int i = 0; i < n; ++i) {
    real sum = 0;
    for (int j = 0; j < k; ++j) {
      if (skin_weights(i, j) < real(-1e-9)) throw std::invalid_argument("body: negative weight");
      sum += skin_weights(i, j);
    }
    if (std::abs(sum - 1) > real(1e-6)) {
      throw std::invalid_argument("body: weight row does not sum to 1");
    }
  }
}

Pose Pose::identity(int k) {
  Pose p;
  p.joint_rotations = MatX::Zero(k, 3);
  return p;
}

Pose Pose::canonicalized() const {
  Pose out = *this;
  for (int j = 0; j < joint_count(); ++j) {
    Vec3 t = joint_rotations.row(j).transpose();
    const real a = t.norm();
    if (a > 2 * kPi) {
      const real wrapped = std::fmod(a, 2 * kPi);
      out.joint_rotations.row(j) = (t * (wrapped / a)).transpose();
    }
    if (!t.allFinite()) throw std::invalid_argument("pose: non-finite rotation");
  }
  if (!root_translation.allFinite()) throw std::invalid_argument("pose: non-finite translation");
  return out;
}

std::vector<BoneTransform> forward_kinematics(const BodyTemplate& tpl, const Pose& pose) {
  const int k = tpl.joint_count();
  if (pose.joint_count() != k) throw std::invalid_argument("fk: joint count mismatch");
  std::vector<BoneTransform> global(k);
  for (int j = 0; j < k; ++j) {
    const Vec3 jpos = tpl.rest_joints.row(j).transpose();
    const Mat3 r = rodrigues_to_matrix(pose.joint_rotations.row(j).transpose());
    // rotation about the rest joint: T(j) * R * T(-j)
    BoneTransform local{r, jpos - r * jpos};
    global[j] = (j == 0) ? local : global[tpl.parents[j]].compose(local);
  }
  for (auto& b : global) b.translation += pose.root_translation;
  return global;
}

FkGrads forward_kinematics_backward(const BodyTemplate& tpl, const Pose& pose,
                                    std::span<const Mat3> d_rotation,
                                    std::span<const Vec3> d_translation) {
  const int k = tpl.joint_count();
  if (int(d_rotation.size()) != k || int(d_translation.size()) != k) {
    throw std::invalid_argument("fk backward: adjoint count mismatch");
  }
  // Recompute the forward chain.
  std::vector<Mat3> local_r(k);
  std::vector<Vec3> local_t(k);
  std::vector<BoneTransform> global(k);
  for (int j = 0; j < k; ++j) {
    const Vec3 jpos = tpl.rest_joints.row(j).transpose();
    local_r[j] = rodrigues_to_matrix(pose.joint_rotations.row(j).transpose());
    local_t[j] = jpos - local_r[j] * jpos;
    BoneTransform local{local_r[j], local_t[j]};
    global[j] = (j == 0) ? local : global[tpl.parents[j]].compose(local);
  }

  FkGrads out;
  out.d_joint_rotations = MatX::Zero(k, 3);
  for (int j = 0; j < k; ++j) out.d_root_translation += d_translation[j];

  // Adjoints of the global transforms, children folded into parents first.
  std::vector<Mat3> gr(k);
  std::vector<Vec3> gt(k);
  for (int j = 0; j < k; ++j) {
    gr[j] = d_rotation[j];
    gt[j] = d_translation[j];
  }
  for (int j = k - 1; j >= 1; --j) {
    const int p = tpl.parents[j];
    // global_j = global_p ∘ local_j:
    //   R_j = R_p L_r,  t_j = R_p l_t + t_p
    gr[p] += gr[j] * local_r[j].transpose() + gt[j] * local_t[j].transpose();
    gt[p] += gt[j];
    // local adjoint through the parent rotation
    const Mat3 d_local_r = global[p].rotation.transpose() * gr[j];
    const Vec3 d_local_t = global[p].rotation.transpose() * gt[j];
    const Vec3 jpos = tpl.rest_joints.row(j).transpose();
    const Mat3 d_rot = d_local_r - d_local_t * jpos.transpose();  // l_t = j - R j
    const auto dr = rodrigues_jacobian(pose.joint_rotations.row(j).transpose());
    for (int i = 0; i < 3; ++i) {
      out.d_joint_rotations(j, i) = d_rot.cwiseProduct(dr[i]).sum();
    }
  }
  {
    const Vec3 jpos = tpl.rest_joints.row(0).transpose();
    const Mat3 d_rot = gr[0] - gt[0] * jpos.transpose();
    const auto dr = rodrigues_jacobian(pose.joint_rotations.row(0).transpose());
    for (int i = 0; i < 3; ++i) {
      out.d_joint_rotations(0, i) = d_rot.cwiseProduct(dr[i]).sum();
    }
  }
  return out;
}

MatX pose_mesh(const BodyTemplate& tpl, const Pose& pose) {
  const auto bones = forward_kinematics(tpl, pose);
  const int n = tpl.vertex_count();
  const int k = tpl.joint_count();
  MatX out(n, 3);
  for (int i = 0; i < n; ++i) {
    const Vec3 x = tpl.vertices.row(i).transpose();
    Vec3 y = Vec3::Zero();
    for (int j = 0; j < k; ++j) {
      const real w = tpl.skin_weights(i, j);
      if (w != real(0)) y += w * bones[j].apply(x);
    }
    out.row(i) = y.transpose();
  }
  return out;
}

namespace {

real point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const real len2 = ab.squaredNorm();
  if (len2 < real(1e-20)) return (p - a).norm();
  const real t = std::clamp((p - a).dot(ab) / len2, real(0), real(1));
  return (p - (a + t * ab)).norm();
}

struct Segment {
  Vec3 a, b;   // from joint toward child (or leaf stub)
  int joint;   // driving joint column
};

std::vector<Segment> recipe_segments(const BodyRecipe& recipe) {
  const int k = recipe.joint_count();
  std::vector<Segment> segs(k);
  for (int j = 0; j < k; ++j) {
    const Vec3 jpos = recipe.rest_joints.row(j).transpose();
    int child = -1;
    for (int c = j + 1; c < k; ++c) {
      if (recipe.parents[c] == j) {
        child = c;
        break;
      }
    }
    Vec3 end;
    if (child >= 0) {
      end = recipe.rest_joints.row(child).transpose();
    } else {
      // leaf: extend past the joint along the incoming bone direction
      const Vec3 ppos = recipe.rest_joints.row(recipe.parents[j]).transpose();
      Vec3 dir = jpos - ppos;
      const real len = dir.norm();
      dir = len > real(1e-12) ? Vec3(dir / len) : Vec3(0, 1, 0);
      end = jpos + dir * std::max(len * real(0.6), real(1e-3));
    }
    segs[j] = {jpos, end, j};
  }
  return segs;
}

// Orthonormal frame perpendicular to u.
void perp_frame(const Vec3& u, Vec3& e1, Vec3& e2) {
  const Vec3 ref = std::abs(u.x()) < real(0.9) ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
  e1 = u.cross(ref).normalized();
  e2 = u.cross(e1).normalized();
}

}  // namespace

std::pair<int, int> appendage_vertex_range(const BodyRecipe& recipe, int appendage) {
  int n = 0;
  for (int j = 0; j < recipe.joint_count(); ++j) {
    n += recipe.rings_per_segment[j] * recipe.ring_vertex_count[j];
  }
  for (int a = 0; a < int(recipe.appendages.size()); ++a) {
    const auto& ap = recipe.appendages[a];
    const int count = ap.rings * ap.ring_vertices;
    if (a == appendage) return {n, n + count};
    n += count;
  }
  throw std::invalid_argument("appendage index out of range");
}

BodyTemplate make_synthetic_body(const BodyRecipe& recipe, std::uint64_t seed) {
  const int k = recipe.joint_count();
  if (k < 2) throw std::invalid_argument("recipe: need at least 2 joints");
  if (int(recipe.rings_per_segment.size()) != k || int(recipe.ring_vertex_count.size()) != k ||
      int(recipe.segment_radius.size()) != k || recipe.rest_joints.rows() != k) {
    throw std::invalid_argument("recipe: per-joint arrays must have K entries");
  }
  for (const auto& ap : recipe.appendages) {
    if (ap.anchor_joint < 0 || ap.anchor_joint >= k) {
      throw std::invalid_argument("recipe: appendage anchor out of range");
    }
    if (ap.rings < 1 || ap.ring_vertices < 1) {
      throw std::invalid_argument("recipe: appendage needs at least one vertex");
    }
  }

  const auto segs = recipe_segments(recipe);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<real> jitter(-1, 1);

  std::vector<Vec3> verts;
  std::vector<int> owner_segment;  // -1 for appendage vertices
  std::vector<int> anchor;         // anchor joint for appendage vertices
  for (int j = 0; j < k; ++j) {
    const auto& s = segs[j];
    const Vec3 axis = s.b - s.a;
    Vec3 u = axis.normalized();
    Vec3 e1, e2;
    perp_frame(u, e1, e2);
    const int rings = recipe.rings_per_segment[j];
    const int rv = recipe.ring_vertex_count[j];
    for (int m = 0; m < rings; ++m) {
      const real t = (m + real(0.5)) / rings;
      const Vec3 center = s.a + t * axis;
      for (int i = 0; i < rv; ++i) {
        const real ang = 2 * kPi * i / rv;
        const real rad = recipe.segment_radius[j] * (1 + real(0.05) * jitter(rng));
        verts.push_back(center + rad * (std::cos(ang) * e1 + std::sin(ang) * e2));
        owner_segment.push_back(j);
        anchor.push_back(-1);
      }
    }
  }
  for (const auto& ap : recipe.appendages) {
    const Vec3 top = recipe.rest_joints.row(ap.anchor_joint).transpose();
    for (int m = 0; m < ap.rings; ++m) {
      const real t = (m + real(0.5)) / ap.rings;
      const Vec3 center = top - Vec3(0, t * ap.length, 0);
      for (int i = 0; i < ap.ring_vertices; ++i) {
        const real ang = 2 * kPi * i / ap.ring_vertices;
        const real rad = ap.radius * (1 + real(0.05) * jitter(rng));
        verts.push_back(center + rad * Vec3(std::cos(ang), 0, std::sin(ang)));
        owner_segment.push_back(-1);
        anchor.push_back(ap.anchor_joint);
      }
    }
  }

  const int n = int(verts.size());
  if (n < k) throw std::invalid_argument("recipe: fewer vertices than joints");
  BodyTemplate tpl;
  tpl.vertices.resize(n, 3);
  tpl.skin_weights = MatX::Zero(n, k);
  tpl.parents = recipe.parents;
  tpl.rest_joints = recipe.rest_joints;
  tpl.names.resize(k);
  for (int j = 0; j < k; ++j) tpl.names[j] = "joint_" + std::to_string(j);

  for (int i = 0; i < n; ++i) {
    tpl.vertices.row(i) = verts[i].transpose();
    if (anchor[i] >= 0) {
      tpl.skin_weights(i, anchor[i]) = 1;
      continue;
    }
    // inverse-distance blend over the two nearest segments
    int best = -1, second = -1;
    real bd = 0, sd = 0;
    for (int j = 0; j < k; ++j) {
      const real d = point_segment_distance(verts[i], segs[j].a, segs[j].b);
      if (best < 0 || d < bd) {
        second = best;
        sd = bd;
        best = j;
        bd = d;
      } else if (second < 0 || d < sd) {
        second = j;
        sd = d;
      }
    }
    const real eps = real(1e-4);
    real w0 = 1 / (bd + eps);
    real w1 = (second >= 0) ? 1 / (sd + eps) : 0;
    // keep far-side influence local: drop the second segment when it is
    // more than 3x farther than the first
    if (second >= 0 && sd > 3 * bd + real(0.05)) w1 = 0;
    const real sum = w0 + w1;
    tpl.skin_weights(i, segs[best].joint) = w0 / sum;
    if (w1 > 0) tpl.skin_weights(i, segs[second].joint) = w1 / sum;
  }
  tpl.validate();
  return tpl;
}

std::string BodyRecipe::to_json() const {
  nlohmann::json j;
  j["parents"] = parents;
  std::vector<std::vector<double>> joints;
  for (int i = 0; i < rest_joints.rows(); ++i) {
    joints.push_back({double(rest_joints(i, 0)), double(rest_joints(i, 1)), double(rest_joints(i, 2))});
  }
  j["rest_joints"] = joints;
  j["rings_per_segment"] = rings_per_segment;
  j["ring_vertex_count"] = ring_vertex_count;
  std::vector<double> radii(segment_radius.begin(), segment_radius.end());
  j["segment_radius"] = radii;
  j["appendages"] = nlohmann::json::array();
  for (const auto& ap : appendages) {
    j["appendages"].push_back({{"anchor_joint", ap.anchor_joint},
                               {"rings", ap.rings},
                               {"ring_vertices", ap.ring_vertices},
                               {"length", double(ap.length)},
                               {"radius", double(ap.radius)}});
  }
  return j.dump(2);
}

BodyRecipe BodyRecipe::from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  BodyRecipe r;
  r.parents = j.at("parents").get<std::vector<int>>();
  const auto& joints = j.at("rest_joints");
  r.rest_joints.resize(int(joints.size()), 3);
  for (int i = 0; i < int(joints.size()); ++i) {
    for (int c = 0; c < 3; ++c) r.rest_joints(i, c) = real(joints[i][c].get<double>());
  }
  r.rings_per_segment = j.at("rings_per_segment").get<std::vector<int>>();
  r.ring_vertex_count = j.at("ring_vertex_count").get<std::vector<int>>();
  for (double v : j.at("segment_radius").get<std::vector<double>>()) {
    r.segment_radius.push_back(real(v));
  }
  for (const auto& a : j.at("appendages")) {
    AppendageSpec ap;
    ap.anchor_joint = a.at("anchor_joint").get<int>();
    ap.rings = a.at("rings").get<int>();
    ap.ring_vertices = a.at("ring_vertices").get<int>();
    ap.length = real(a.at("length").get<double>());
    ap.radius = real(a.at("radius").get<double>());
    r.appendages.push_back(ap);
  }
  return r;
}

void save_template(const BodyTemplate& tpl, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const int n = tpl.vertex_count();
  const int k = tpl.joint_count();
  auto flat = [](const MatX& m) {
    std::vector<real> v(size_t(m.rows() * m.cols()));
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) v[size_t(i * m.cols() + j)] = m(i, j);
    return v;
  };
  write_f32_blob(dir + "/vertices.bin", flat(tpl.vertices));
  write_f32_blob(dir + "/weights.bin", flat(tpl.skin_weights));
  write_f32_blob(dir + "/rest_joints.bin", flat(tpl.rest_joints));
  nlohmann::json j;
  j["vertex_count"] = n;
  j["joint_count"] = k;
  j["parents"] = tpl.parents;
  j["names"] = tpl.names;
  j["blobs"] = {{"vertices", "vertices.bin"},
                {"weights", "weights.bin"},
                {"rest_joints", "rest_joints.bin"}};
  write_text_file(dir + "/template.json", j.dump(2));
}

BodyTemplate load_template(const std::string& dir) {
  nlohmann::json j = nlohmann::json::parse(read_text_file(dir + "/template.json"));
  const int n = j.at("vertex_count").get<int>();
  const int k = j.at("joint_count").get<int>();
  BodyTemplate tpl;
  tpl.parents = j.at("parents").get<std::vector<int>>();
  tpl.names = j.at("names").get<std::vector<std::string>>();
  auto unflat = [&](const std::string& name, int rows, int cols) {
    const auto v = read_f32_blob(dir + "/" + j.at("blobs").at(name).get<std::string>());
    if (int(v.size()) != rows * cols) throw std::runtime_error("template blob size mismatch: " + name);
    MatX m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int c = 0; c < cols; ++c) m(i, c) = v[size_t(i * cols + c)];
    return m;
  };
  tpl.vertices = unflat("vertices", n, 3);
  tpl.skin_weights = unflat("weights", n, k);
  tpl.rest_joints = unflat("rest_joints", k, 3);
  // blobs are stored in f32; restore exact row sums
  for (int i = 0; i < n; ++i) tpl.skin_weights.row(i) /= tpl.skin_weights.row(i).sum();
  tpl.validate();
  return tpl;
}

}  // namespace mgs
