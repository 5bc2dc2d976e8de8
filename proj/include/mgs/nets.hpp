#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mgs/gaussians.hpp"
#include "mgs/motion.hpp"

namespace mgs {

enum class Activation { None, Relu, Tanh };

// Fully-connected net with a flat parameter buffer; layer l maps
// dims[l] -> dims[l+1] followed by acts[l].
struct DenseNet {
  std::vector<int> dims;
  std::vector<Activation> acts;
  VecX params;

  static DenseNet make(std::vector<int> dims, std::vector<Activation> acts);
  int layer_count() const { return int(dims.size()) - 1; }
  int input_dim() const { return dims.front(); }
  int output_dim() const { return dims.back(); }
  int param_count() const { return int(params.size()); }

  Eigen::Map<MatX> weight(int layer);
  Eigen::Map<const MatX> weight(int layer) const;
  Eigen::Map<VecX> bias(int layer);
  Eigen::Map<const VecX> bias(int layer) const;

  // Kaiming-uniform hidden layers; `zero_last` zeroes the output layer so
  // the net starts as the constant-0 map.
  void init_random(std::uint64_t seed, bool zero_last);

  VecX forward(const VecX& x) const;

 private:
  std::vector<int> w_offsets_, b_offsets_;
  friend struct Tape;
  friend MatX net_forward_batch(const DenseNet&, const MatX&, Tape*);
  friend MatX net_backward_batch(const DenseNet&, const Tape&, const MatX&, VecX&);
};

// Activations recorded during one forward pass; backward walks the layers
// in reverse exactly once.
struct Tape {
  std::vector<MatX> activations;  // A_0 (input) .. A_L (output), one column per sample
};

// Columns of `x` are samples. Records to `tape` when provided.
MatX net_forward_batch(const DenseNet& net, const MatX& x, Tape* tape = nullptr);

// Accumulates parameter gradients into `param_grad` (same size as params);
// returns d(loss)/d(input).
MatX net_backward_batch(const DenseNet& net, const Tape& tape, const MatX& d_out, VecX& param_grad);

// The task networks of the avatar pipeline.
struct NetConfig {
  int joints = 0;
  int n_scales = 1;
  int length = 8;
  int tau = 8;
  int knn_embed_dim = 16;
  int skeleton_embed_dim = 32;
  int point_embed_dim = 64;
  int hidden_skeleton = 128;
  int hidden_knn = 32;
  int hidden_point = 128;
  int hidden_nonrigid = 128;
  int hidden_lbs = 64;
  int hidden_pose = 64;
  bool use_skeleton_condition = true;
  bool use_point_condition = true;

  int condition_dim() const {
    return (use_skeleton_condition ? skeleton_embed_dim : 0) +
           (use_point_condition ? point_embed_dim : 0);
  }
  int nonrigid_input_dim() const { return 3 + joints * 3 + condition_dim(); }
};

struct TaskNets {
  DenseNet skeleton_encoder;  // flattened residual tensor -> 32
  DenseNet knn_encoder;       // tau*3 -> 16
  DenseNet point_encoder;     // n_scales*L*16 -> 64
  DenseNet nonrigid;          // [x | P | condition] -> 10
  DenseNet lbs_offsets;       // x -> K
  DenseNet pose_refiner;      // K*3 -> K*3, tanh output
  NetConfig config;

  static TaskNets make(const NetConfig& cfg, std::uint64_t seed);
  std::vector<NamedBlob> to_blobs() const;
  void load_blobs(const std::vector<NamedBlob>& blobs);
};

// f_dp = skeleton_encoder(flatten(delta_p)).
VecX encode_skeleton_motion(const DenseNet& net, const SkeletonMotionSeq& seq, Tape* tape = nullptr);

// Tapes retained for the two-stage point encoder.
struct PointEncodeRecord {
  Tape knn_tape;
  Tape point_tape;
  int n = 0;
};

// Per-Gaussian embedding matrix, point_embed_dim x n.
MatX encode_point_motion(const DenseNet& knn_encoder, const DenseNet& point_encoder,
                         const PointMotionSeq& pm, PointEncodeRecord* rec = nullptr);
// d_f_v is point_embed_dim x n; accumulates both encoders' parameter gradients.
void encode_point_motion_backward(const DenseNet& knn_encoder, const DenseNet& point_encoder,
                                  const PointEncodeRecord& rec, const MatX& d_f_v,
                                  VecX& knn_param_grad, VecX& point_param_grad);

struct ConditionEmbeddings {
  VecX f_skeleton;  // 32, shared per frame (empty when disabled)
  MatX f_point;     // 64 x n (empty when disabled)
  MatX condition;   // condition_dim x n
};

ConditionEmbeddings assemble_condition(const NetConfig& cfg, const VecX& f_skeleton,
                                       const MatX& f_point, int n);

// Forward record of the deformation heads the backward pass needs.
struct NonRigidRecord {
  Tape tape;
  MatX raw_out;            // 10 x n
  std::vector<Quat> q_raw; // (1 + dr0, dr1, dr2, dr3)
  std::vector<Quat> q_unit;
  int pose_dim = 0;        // K*3 slice of the input layout
};

// x' = x + dx, s' = exp(log_s + ds), r' = r * normalize((1,0,0,0) + dr).
// Throws std::runtime_error on non-finite network output.
DeformedGaussians nonrigid_deform(const GaussianSet& g, const Pose& pose, const MatX& condition,
                                  const DenseNet& net, NonRigidRecord* rec = nullptr);

struct NonRigidGrads {
  MatX d_positions;        // n x 3 (through dx and the net input)
  MatX d_log_scales;       // n x 3
  std::vector<Quat> d_rotations;
  MatX d_pose;             // K x 3, summed over Gaussians
  MatX d_condition;        // condition_dim x n
};

NonRigidGrads nonrigid_deform_backward(const GaussianSet& g, const DenseNet& net,
                                       const NonRigidRecord& rec, const MatX& d_x_prime,
                                       const MatX& d_s_prime,
                                       const std::vector<Quat>& d_r_prime, VecX& param_grad);

struct LbsOffsetRecord {
  Tape tape;
  MatX pre_clamp;   // K x n: base + offsets
  MatX clamped;     // K x n: max(pre,0) + 1e-8
  VecX sums;        // n
};

// corrected = normalize(max(base + net(x), 0) + 1e-8) rows; returns base
// rows untouched when the net output is exactly zero.
MatX lbs_weight_offsets(const MatX& positions, const MatX& base_weights, const DenseNet& net,
                        LbsOffsetRecord* rec = nullptr);

struct LbsOffsetGrads {
  MatX d_positions;  // n x 3 through the net input
};

LbsOffsetGrads lbs_weight_offsets_backward(const DenseNet& net, const LbsOffsetRecord& rec,
                                           const MatX& d_weights, VecX& param_grad);

struct PoseRefineRecord {
  Tape tape;
  VecX raw;  // tanh output before the 0.1 scale
};

// P + 0.1 * pose_refiner(flatten(P)), rotations only.
Pose pose_refine(const Pose& pose, const DenseNet& net, PoseRefineRecord* rec = nullptr);

// Returns d(loss)/d(input pose rotations); includes the identity path.
MatX pose_refine_backward(const DenseNet& net, const PoseRefineRecord& rec, const MatX& d_refined,
                          VecX& param_grad);

}  // namespace mgs
