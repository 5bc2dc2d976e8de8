#pragma once

#include "mgs/losses.hpp"
#include "mgs/nets.hpp"
#include "mgs/raster.hpp"

namespace mgs {

// Gradients of one rendered frame's loss wrt everything learnable, plus the
// current pose (for refinement-path checks).
struct PipelineGrads {
  MatX d_positions;        // n x 3
  MatX d_log_scales;       // n x 3
  std::vector<Quat> d_rotations;
  MatX d_colors;           // n x 3
  VecX d_opacity_logits;   // n
  VecX d_skeleton_encoder, d_knn_encoder, d_point_encoder, d_nonrigid, d_lbs, d_pose_refiner;
  MatX d_pose_rotations;   // K x 3, raw stored pose
  Vec3 d_root_translation = Vec3::Zero();
  MatX d_uv;               // n x 2 screen-space position gradient (densification signal)
};

// One differentiable render of frame t through the full conditioning stack.
// Holds every intermediate needed by backward(); build one per step.
class FrameRenderer {
 public:
  FrameRenderer(const BodyTemplate* tpl, const PoseStore* poses, TaskNets* nets,
                const StrideSet& strides, int length, int tau);

  // Neighbor/base-weight caches keyed by the Gaussian revision counter.
  void refresh_caches(const GaussianSet& g);
  bool caches_valid(const GaussianSet& g) const;

  // Renders frame t from cam; conditioning comes from the raw pose store.
  const RenderOutput& forward(const GaussianSet& g, int t, const Camera& cam);

  // Renders with the deformation stack disabled (pure LBS of the canonical
  // set with template weights and the unrefined pose).
  RenderOutput forward_pure_lbs(const GaussianSet& g, int t, const Camera& cam) const;

  LossTerms compute_loss(const Image& gt_image, const std::vector<real>& gt_mask,
                         const LossWeights& weights);

  // Full reverse sweep for the last forward+loss; valid once per forward.
  PipelineGrads backward();

  const RenderOutput& render() const { return render_; }
  const SkeletonMotionSeq& skeleton_seq() const { return skeleton_seq_; }
  const MatX& corrected_weights() const { return weights_; }

 private:
  const BodyTemplate* tpl_;
  const PoseStore* poses_;
  TaskNets* nets_;
  StrideSet strides_;
  int length_, tau_;

  VelocityFieldCache velocity_cache_;
  KnnCache knn_cache_;
  MatX base_weights_;
  std::uint64_t cache_revision_ = ~std::uint64_t(0);

  // forward state
  const GaussianSet* g_ = nullptr;
  Camera cam_;
  int frame_ = 0;
  SkeletonMotionSeq skeleton_seq_;
  Tape skeleton_tape_;
  VecX f_skeleton_;
  PointEncodeRecord point_rec_;
  MatX f_point_;
  ConditionEmbeddings cond_;
  NonRigidRecord nonrigid_rec_;
  DeformedGaussians deformed_;
  PoseRefineRecord pose_rec_;
  Pose refined_pose_;
  std::vector<BoneTransform> bones_;
  LbsOffsetRecord lbs_rec_;
  MatX weights_;
  RigidWarpRecord warp_rec_;
  ObservationSet obs_;
  RenderOutput render_;

  // loss state
  Image gt_image_;
  std::vector<real> gt_mask_;
  LossWeights loss_weights_;
  SsimRecord ssim_rec_;
  bool has_loss_ = false;
};

}  // namespace mgs
