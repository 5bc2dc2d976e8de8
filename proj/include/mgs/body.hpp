#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgs/geometry.hpp"

namespace mgs {

// Canonical articulated body: template vertices, skinning weights, joint tree.
struct BodyTemplate {
  MatX vertices;                  // N x 3, canonical positions
  MatX skin_weights;              // N x K, rows on the probability simplex
  std::vector<int> parents;       // K, -1 for the root, parent < child
  MatX rest_joints;               // K x 3
  std::vector<std::string> names; // K

  int vertex_count() const { return int(vertices.rows()); }
  int joint_count() const { return int(rest_joints.rows()); }
  void validate() const;  // throws std::invalid_argument
};

struct Pose {
  MatX joint_rotations;  // K x 3 axis-angle
  Vec3 root_translation = Vec3::Zero();

  int joint_count() const { return int(joint_rotations.rows()); }
  static Pose identity(int k);
  // Wraps each axis-angle so |theta| <= 2*pi; applied at ingestion.
  Pose canonicalized() const;
};

// Per-joint bone transforms mapping canonical points to posed space.
// global_k = global_parent(k) * local_k with local_k a rotation about the
// rest joint; identity pose yields identity transforms.
std::vector<BoneTransform> forward_kinematics(const BodyTemplate& tpl, const Pose& pose);

// Skins every template vertex with the pose's bone transforms. N x 3.
MatX pose_mesh(const BodyTemplate& tpl, const Pose& pose);

// Reverse-mode step for forward_kinematics: accumulates d(loss)/d(theta)
// (K x 3) and d(loss)/d(root_translation) from per-bone adjoints.
struct FkGrads {
  MatX d_joint_rotations;  // K x 3
  Vec3 d_root_translation = Vec3::Zero();
};
FkGrads forward_kinematics_backward(const BodyTemplate& tpl, const Pose& pose,
                                    std::span<const Mat3> d_rotation,
                                    std::span<const Vec3> d_translation);

// A dangling single-joint-skinned vertex cluster (loose-clothing proxy).
struct AppendageSpec {
  int anchor_joint = 0;
  int rings = 2;
  int ring_vertices = 8;
  real length = 0.3;
  real radius = 0.06;
};

struct BodyRecipe {
  std::vector<int> parents;            // K entries, -1 root, parent < child
  MatX rest_joints;                    // K x 3
  std::vector<int> rings_per_segment;  // K
  std::vector<int> ring_vertex_count;  // K
  std::vector<real> segment_radius;    // K
  std::vector<AppendageSpec> appendages;

  int joint_count() const { return int(parents.size()); }
  std::string to_json() const;
  static BodyRecipe from_json(const std::string& text);
};

// Deterministic procedural body: a ring tube per joint segment plus
// appendage clusters skinned fully to their anchor joint. Tube vertices
// blend between the two nearest segments by inverse distance.
BodyTemplate make_synthetic_body(const BodyRecipe& recipe, std::uint64_t seed);

// Index range [begin, end) of the vertices generated for appendage `a`.
std::pair<int, int> appendage_vertex_range(const BodyRecipe& recipe, int appendage);

// JSON manifest plus little-endian f32 blobs under `dir`.
void save_template(const BodyTemplate& tpl, const std::string& dir);
BodyTemplate load_template(const std::string& dir);

}  // namespace mgs
