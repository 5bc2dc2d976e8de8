#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mgs/body.hpp"

namespace mgs {

// Canonical Gaussian primitives. Scales live in log space and opacities in
// logit space so unconstrained optimizer steps keep the invariants.
struct GaussianSet {
  MatX positions;            // n x 3
  MatX log_scales;           // n x 3, exp() clamped to (1e-7, 10)
  std::vector<Quat> rotations;
  MatX colors;               // n x 3 linear RGB (degree-0 coefficients)
  VecX opacity_logits;       // n
  std::uint64_t revision = 0;

  int size() const { return int(positions.rows()); }
  VecX opacities() const;
  MatX scales() const;                      // exp(log_scales)
  void clamp_log_scales();
  void normalize_rotations();
};

// Per-frame deformed copy of the geometric fields; colors/opacity pass through.
struct DeformedGaussians {
  MatX positions;            // x'
  MatX scales;               // s' (linear)
  std::vector<Quat> rotations;
};

// Sigma = R diag(s^2) R^T.
Mat3 build_covariance(const Vec3& scales, const Quat& r);

// One Gaussian per template vertex; isotropic scale from the mean distance
// to the 3 nearest template neighbors, mid-gray color, opacity 0.1.
GaussianSet init_from_template(const BodyTemplate& tpl);

struct DensifyOptions {
  real grad_threshold = real(2e-4);
  real split_scale_threshold = 0;   // world units; <=0 disables splitting size test
  real min_opacity = real(0.005);
  real max_scale = real(1e9);
  real split_scale_shrink = real(1.6);
};

struct DensifyResult {
  int cloned = 0, split = 0, pruned = 0;
  // old Gaussian index per surviving/new row, -1 for freshly sampled rows;
  // lets the optimizer carry moments across the resize
  std::vector<int> source_index;
};

// grad_accum holds mean positional-gradient magnitudes since the last call.
DensifyResult densify_and_prune(GaussianSet& set, const VecX& grad_accum,
                                const DensifyOptions& opts, std::mt19937_64& rng);

// Checkpoint = JSON manifest + one little-endian f32 blob per field.
struct NamedBlob {
  std::string name;
  std::vector<real> data;
  std::vector<int> shape;
};

void save_checkpoint(const std::string& dir, const GaussianSet& set,
                     const std::vector<NamedBlob>& extra, const std::string& config_json);
struct Checkpoint {
  GaussianSet set;
  std::vector<NamedBlob> extra;
  std::string config_json;
};
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace mgs
