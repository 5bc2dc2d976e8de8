#include "mgs/nets.hpp"

#include <random>
#include <stdexcept>

namespace mgs {

DenseNet DenseNet::make(std::vector<int> dims, std::vector<Activation> acts) {
  if (dims.size() < 2 || acts.size() != dims.size() - 1) {
    throw std::invalid_argument("dense net: bad layer spec");
  }
  DenseNet net;
  net.dims = std::move(dims);
  net.acts = std::move(acts);
  int total = 0;
  for (int l = 0; l + 1 < int(net.dims.size()); ++l) {
    net.w_offsets_.push_back(total);
    total += net.dims[size_t(l + 1)] * net.dims[size_t(l)];
    net.b_offsets_.push_back(total);
    total += net.dims[size_t(l + 1)];
  }
  net.params = VecX::Zero(total);
  return net;
}

Eigen::Map<MatX> DenseNet::weight(int layer) {
  return {params.data() + w_offsets_[size_t(layer)], dims[size_t(layer + 1)], dims[size_t(layer)]};
}
Eigen::Map<const MatX> DenseNet::weight(int layer) const {
  return {params.data() + w_offsets_[size_t(layer)], dims[size_t(layer + 1)], dims[size_t(layer)]};
}
Eigen::Map<VecX> DenseNet::bias(int layer) {
  return {params.data() + b_offsets_[size_t(layer)], dims[size_t(layer + 1)]};
}
Eigen::Map<const VecX> DenseNet::bias(int layer) const {
  return {params.data() + b_offsets_[size_t(layer)], dims[size_t(layer + 1)]};
}

void DenseNet::init_random(std::uint64_t seed, bool zero_last) {
  std::mt19937_64 rng(seed);
  for (int l = 0; l < layer_count(); ++l) {
    if (zero_last && l == layer_count() - 1) {
      weight(l).setZero();
      bias(l).setZero();
      continue;
    }
    const real bound = std::sqrt(real(6) / real(dims[size_t(l)]));
    std::uniform_real_distribution<real> u(-bound, bound);
    auto w = weight(l);
    for (int i = 0; i < w.rows(); ++i)
      for (int j = 0; j < w.cols(); ++j) w(i, j) = u(rng);
    bias(l).setZero();
  }
}

namespace {

inline real activate(real z, Activation a) {
  switch (a) {
    case Activation::Relu: return z > 0 ? z : 0;
    case Activation::Tanh: return std::tanh(z);
    default: return z;
  }
}

// derivative from the activated output
inline real activate_grad(real out, Activation a) {
  switch (a) {
    case Activation::Relu: return out > 0 ? real(1) : real(0);
    case Activation::Tanh: return 1 - out * out;
    default: return real(1);
  }
}

}  // namespace

VecX DenseNet::forward(const VecX& x) const {
  return net_forward_batch(*this, x, nullptr).col(0);
}

MatX net_forward_batch(const DenseNet& net, const MatX& x, Tape* tape) {
  if (x.rows() != net.input_dim()) throw std::invalid_argument("dense net: input dim mismatch");
  const int batch = int(x.cols());
  if (tape) {
    tape->activations.clear();
    tape->activations.push_back(x);
  }
  MatX a = x;
  for (int l = 0; l < net.layer_count(); ++l) {
    MatX z(net.dims[size_t(l + 1)], batch);
    const auto w = net.weight(l);
    const auto b = net.bias(l);
    // per-column kernel so batched and per-sample evaluation agree bitwise
    for (int c = 0; c < batch; ++c) {
      z.col(c).noalias() = w * a.col(c);
      z.col(c) += b;
    }
    const Activation act = net.acts[size_t(l)];
    if (act != Activation::None) {
      for (int c = 0; c < batch; ++c)
        for (int r = 0; r < z.rows(); ++r) z(r, c) = activate(z(r, c), act);
    }
    a = std::move(z);
    if (tape) tape->activations.push_back(a);
  }
  return a;
}

MatX net_backward_batch(const DenseNet& net, const Tape& tape, const MatX& d_out, VecX& param_grad) {
  if (int(tape.activations.size()) != net.layer_count() + 1) {
    throw std::invalid_argument("dense net: tape does not match this net");
  }
  if (param_grad.size() != net.param_count()) {
    throw std::invalid_argument("dense net: gradient buffer size mismatch");
  }
  const int batch = int(d_out.cols());
  MatX delta = d_out;
  for (int l = net.layer_count() - 1; l >= 0; --l) {
    const MatX& out = tape.activations[size_t(l + 1)];
    const Activation act = net.acts[size_t(l)];
    if (act != Activation::None) {
      for (int c = 0; c < batch; ++c)
        for (int r = 0; r < delta.rows(); ++r) delta(r, c) *= activate_grad(out(r, c), act);
    }
    const MatX& a_in = tape.activations[size_t(l)];
    Eigen::Map<MatX> dw(param_grad.data() + (net.weight(l).data() - net.params.data()),
                        net.dims[size_t(l + 1)], net.dims[size_t(l)]);
    Eigen::Map<VecX> db(param_grad.data() + (net.bias(l).data() - net.params.data()),
                        net.dims[size_t(l + 1)]);
    for (int c = 0; c < batch; ++c) {
      dw.noalias() += delta.col(c) * a_in.col(c).transpose();
      db += delta.col(c);
    }
    MatX d_in(net.dims[size_t(l)], batch);
    const auto w = net.weight(l);
    for (int c = 0; c < batch; ++c) d_in.col(c).noalias() = w.transpose() * delta.col(c);
    delta = std::move(d_in);
  }
  return delta;
}

TaskNets TaskNets::make(const NetConfig& cfg, std::uint64_t seed) {
  TaskNets nets;
  nets.config = cfg;
  const int k3 = cfg.joints * 3;
  nets.skeleton_encoder = DenseNet::make({cfg.n_scales * cfg.length * k3, cfg.hidden_skeleton,
                                          cfg.skeleton_embed_dim},
                                         {Activation::Relu, Activation::None});
  nets.knn_encoder = DenseNet::make({cfg.tau * 3, cfg.hidden_knn, cfg.knn_embed_dim},
                                    {Activation::Relu, Activation::None});
  nets.point_encoder = DenseNet::make({cfg.n_scales * cfg.length * cfg.knn_embed_dim,
                                       cfg.hidden_point, cfg.point_embed_dim},
                                      {Activation::Relu, Activation::None});
  nets.nonrigid = DenseNet::make({cfg.nonrigid_input_dim(), cfg.hidden_nonrigid, 10},
                                 {Activation::Relu, Activation::None});
  nets.lbs_offsets = DenseNet::make({3, cfg.hidden_lbs, cfg.joints},
                                    {Activation::Relu, Activation::None});
  nets.pose_refiner = DenseNet::make({k3, cfg.hidden_pose, k3}, {Activation::Relu, Activation::Tanh});

  nets.skeleton_encoder.init_random(seed * 6 + 1, true);
  nets.knn_encoder.init_random(seed * 6 + 2, true);
  nets.point_encoder.init_random(seed * 6 + 3, true);
  nets.nonrigid.init_random(seed * 6 + 4, true);
  nets.lbs_offsets.init_random(seed * 6 + 5, true);
  nets.pose_refiner.init_random(seed * 6 + 6, true);
  return nets;
}

namespace {

NamedBlob net_blob(const std::string& name, const DenseNet& net) {
  NamedBlob b;
  b.name = name;
  b.shape = {net.param_count()};
  b.data.assign(net.params.data(), net.params.data() + net.param_count());
  return b;
}

void load_net(DenseNet& net, const std::vector<NamedBlob>& blobs, const std::string& name) {
  for (const auto& b : blobs) {
    if (b.name != name) continue;
    if (int(b.data.size()) != net.param_count()) {
      throw std::runtime_error("checkpoint net size mismatch: " + name);
    }
    for (int i = 0; i < net.param_count(); ++i) net.params(i) = b.data[size_t(i)];
    return;
  }
  throw std::runtime_error("checkpoint missing net: " + name);
}

}  // namespace

std::vector<NamedBlob> TaskNets::to_blobs() const {
  return {net_blob("net.skeleton_encoder", skeleton_encoder), net_blob("net.knn_encoder", knn_encoder),
          net_blob("net.point_encoder", point_encoder), net_blob("net.nonrigid", nonrigid),
          net_blob("net.lbs_offsets", lbs_offsets), net_blob("net.pose_refiner", pose_refiner)};
}

void TaskNets::load_blobs(const std::vector<NamedBlob>& blobs) {
  load_net(skeleton_encoder, blobs, "net.skeleton_encoder");
  load_net(knn_encoder, blobs, "net.knn_encoder");
  load_net(point_encoder, blobs, "net.point_encoder");
  load_net(nonrigid, blobs, "net.nonrigid");
  load_net(lbs_offsets, blobs, "net.lbs_offsets");
  load_net(pose_refiner, blobs, "net.pose_refiner");
}

VecX encode_skeleton_motion(const DenseNet& net, const SkeletonMotionSeq& seq, Tape* tape) {
  const VecX flat = seq.flattened();
  if (flat.size() != net.input_dim()) {
    throw std::invalid_argument("skeleton encoder: tensor shape mismatch");
  }
  return net_forward_batch(net, flat, tape).col(0);
}

MatX encode_point_motion(const DenseNet& knn_encoder, const DenseNet& point_encoder,
                         const PointMotionSeq& pm, PointEncodeRecord* rec) {
  const int n = pm.n;
  const int steps = pm.n_scales * pm.length;
  const int in_dim = pm.tau * 3;
  if (in_dim != knn_encoder.input_dim()) throw std::invalid_argument("knn encoder: dim mismatch");
  const int e_dim = knn_encoder.output_dim();
  if (steps * e_dim != point_encoder.input_dim()) {
    throw std::invalid_argument("point encoder: dim mismatch");
  }

  // stage 1: every (gaussian, scale, step) sample through the knn encoder
  MatX knn_in(in_dim, n * steps);
  for (int i = 0; i < n; ++i) {
    for (int s = 0; s < pm.n_scales; ++s) {
      for (int l = 0; l < pm.length; ++l) {
        const real* src = pm.data.data() + pm.offset(i, s, l, 0);
        const int col = (i * pm.n_scales + s) * pm.length + l;
        for (int d = 0; d < in_dim; ++d) knn_in(d, col) = src[d];
      }
    }
  }
  Tape local_knn;
  MatX e = net_forward_batch(knn_encoder, knn_in, rec ? &rec->knn_tape : &local_knn);

  // stage 2: concatenate the per-step embeddings per Gaussian
  MatX point_in(steps * e_dim, n);
  for (int i = 0; i < n; ++i) {
    for (int st = 0; st < steps; ++st) {
      point_in.block(st * e_dim, i, e_dim, 1) = e.col(i * steps + st);
    }
  }
  Tape local_point;
  MatX f_v = net_forward_batch(point_encoder, point_in, rec ? &rec->point_tape : &local_point);
  if (rec) rec->n = n;
  return f_v;
}

void encode_point_motion_backward(const DenseNet& knn_encoder, const DenseNet& point_encoder,
                                  const PointEncodeRecord& rec, const MatX& d_f_v,
                                  VecX& knn_param_grad, VecX& point_param_grad) {
  const int n = rec.n;
  const int e_dim = knn_encoder.output_dim();
  const int steps = point_encoder.input_dim() / e_dim;
  MatX d_point_in = net_backward_batch(point_encoder, rec.point_tape, d_f_v, point_param_grad);
  MatX d_e(e_dim, n * steps);
  for (int i = 0; i < n; ++i) {
    for (int st = 0; st < steps; ++st) {
      d_e.col(i * steps + st) = d_point_in.block(st * e_dim, i, e_dim, 1);
    }
  }
  net_backward_batch(knn_encoder, rec.knn_tape, d_e, knn_param_grad);  // input grads are data
}

ConditionEmbeddings assemble_condition(const NetConfig& cfg, const VecX& f_skeleton,
                                       const MatX& f_point, int n) {
  ConditionEmbeddings out;
  out.f_skeleton = f_skeleton;
  out.f_point = f_point;
  out.condition.resize(cfg.condition_dim(), n);
  int row = 0;
  if (cfg.use_skeleton_condition) {
    for (int i = 0; i < n; ++i) out.condition.block(row, i, f_skeleton.size(), 1) = f_skeleton;
    row += int(f_skeleton.size());
  }
  if (cfg.use_point_condition) {
    out.condition.block(row, 0, f_point.rows(), n) = f_point;
  }
  return out;
}

DeformedGaussians nonrigid_deform(const GaussianSet& g, const Pose& pose, const MatX& condition,
                                  const DenseNet& net, NonRigidRecord* rec) {
  const int n = g.size();
  const int k3 = pose.joint_count() * 3;
  const int cond_dim = int(condition.rows());
  if (cond_dim > 0 && int(condition.cols()) != n) {
    throw std::invalid_argument("nonrigid: condition count mismatch");
  }
  if (net.input_dim() != 3 + k3 + cond_dim) throw std::invalid_argument("nonrigid: input dim mismatch");

  MatX input(net.input_dim(), n);
  VecX pose_flat(k3);
  for (int j = 0; j < pose.joint_count(); ++j)
    for (int c = 0; c < 3; ++c) pose_flat(j * 3 + c) = pose.joint_rotations(j, c);
  for (int i = 0; i < n; ++i) {
    input.block(0, i, 3, 1) = g.positions.row(i).transpose();
    input.block(3, i, k3, 1) = pose_flat;
    if (cond_dim > 0) input.block(3 + k3, i, cond_dim, 1) = condition.col(i);
  }

  Tape local;
  Tape& tape = rec ? rec->tape : local;
  MatX out = net_forward_batch(net, input, &tape);
  if (!out.allFinite()) {
    throw std::runtime_error("nonrigid deformation produced non-finite output (step aborted)");
  }

  DeformedGaussians d;
  d.positions = g.positions + out.topRows(3).transpose();
  d.scales = (g.log_scales + out.middleRows(3, 3).transpose()).array().exp();
  d.rotations.resize(size_t(n));
  if (rec) {
    rec->raw_out = out;
    rec->q_raw.resize(size_t(n));
    rec->q_unit.resize(size_t(n));
    rec->pose_dim = k3;
  }
  for (int i = 0; i < n; ++i) {
    const Quat q_raw{1 + out(6, i), out(7, i), out(8, i), out(9, i)};
    const Quat q_unit = quat_normalize(q_raw);
    d.rotations[size_t(i)] = quat_mul(g.rotations[size_t(i)], q_unit);
    if (rec) {
      rec->q_raw[size_t(i)] = q_raw;
      rec->q_unit[size_t(i)] = q_unit;
    }
  }
  return d;
}

namespace {

// adjoint of c = quat_mul(a, b)
void quat_mul_backward(const Quat& a, const Quat& b, const Quat& dc, Quat& da, Quat& db) {
  da.w += dc.w * b.w + dc.x * b.x + dc.y * b.y + dc.z * b.z;
  da.x += -dc.w * b.x + dc.x * b.w - dc.y * b.z + dc.z * b.y;
  da.y += -dc.w * b.y + dc.x * b.z + dc.y * b.w - dc.z * b.x;
  da.z += -dc.w * b.z - dc.x * b.y + dc.y * b.x + dc.z * b.w;

  db.w += dc.w * a.w + dc.x * a.x + dc.y * a.y + dc.z * a.z;
  db.x += -dc.w * a.x + dc.x * a.w + dc.y * a.z - dc.z * a.y;
  db.y += -dc.w * a.y - dc.x * a.z + dc.y * a.w + dc.z * a.x;
  db.z += -dc.w * a.z + dc.x * a.y - dc.y * a.x + dc.z * a.w;
}

// adjoint of u = q / |q|
Quat quat_normalize_backward(const Quat& q, const Quat& u, const Quat& du) {
  const real n = q.norm();
  const real dot = du.w * u.w + du.x * u.x + du.y * u.y + du.z * u.z;
  return {(du.w - dot * u.w) / n, (du.x - dot * u.x) / n, (du.y - dot * u.y) / n,
          (du.z - dot * u.z) / n};
}

}  // namespace

NonRigidGrads nonrigid_deform_backward(const GaussianSet& g, const DenseNet& net,
                                       const NonRigidRecord& rec, const MatX& d_x_prime,
                                       const MatX& d_s_prime,
                                       const std::vector<Quat>& d_r_prime, VecX& param_grad) {
  const int n = g.size();
  const int k3 = rec.pose_dim;
  const int cond_dim = net.input_dim() - 3 - k3;

  // s' = exp(log_s + ds)
  const MatX s_prime = (g.log_scales + rec.raw_out.middleRows(3, 3).transpose()).array().exp();

  MatX d_out = MatX::Zero(10, n);
  NonRigidGrads grads;
  grads.d_positions = d_x_prime;  // identity path x' = x + dx
  grads.d_log_scales = d_s_prime.cwiseProduct(s_prime);
  grads.d_rotations.assign(size_t(n), Quat{0, 0, 0, 0});

  for (int i = 0; i < n; ++i) {
    d_out(0, i) = d_x_prime(i, 0);
    d_out(1, i) = d_x_prime(i, 1);
    d_out(2, i) = d_x_prime(i, 2);
    d_out(3, i) = grads.d_log_scales(i, 0);
    d_out(4, i) = grads.d_log_scales(i, 1);
    d_out(5, i) = grads.d_log_scales(i, 2);

    Quat d_r{0, 0, 0, 0}, d_qunit{0, 0, 0, 0};
    quat_mul_backward(g.rotations[size_t(i)], rec.q_unit[size_t(i)], d_r_prime[size_t(i)], d_r,
                      d_qunit);
    grads.d_rotations[size_t(i)] = d_r;
    const Quat d_qraw =
        quat_normalize_backward(rec.q_raw[size_t(i)], rec.q_unit[size_t(i)], d_qunit);
    d_out(6, i) = d_qraw.w;
    d_out(7, i) = d_qraw.x;
    d_out(8, i) = d_qraw.y;
    d_out(9, i) = d_qraw.z;
  }

  const MatX d_input = net_backward_batch(net, rec.tape, d_out, param_grad);
  grads.d_positions += d_input.topRows(3).transpose();
  grads.d_pose = MatX::Zero(k3 / 3, 3);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < k3 / 3; ++j) {
      for (int c = 0; c < 3; ++c) grads.d_pose(j, c) += d_input(3 + j * 3 + c, i);
    }
  }
  if (cond_dim > 0) grads.d_condition = d_input.bottomRows(cond_dim);
  return grads;
}

MatX lbs_weight_offsets(const MatX& positions, const MatX& base_weights, const DenseNet& net,
                        LbsOffsetRecord* rec) {
  const int n = int(positions.rows());
  const int k = int(base_weights.cols());
  if (net.output_dim() != k || net.input_dim() != 3) {
    throw std::invalid_argument("lbs offsets: net dims mismatch");
  }
  Tape local;
  Tape& tape = rec ? rec->tape : local;
  const MatX offsets = net_forward_batch(net, positions.transpose(), &tape);  // K x n

  MatX corrected(n, k);
  if (rec) {
    rec->pre_clamp.resize(k, n);
    rec->clamped.resize(k, n);
    rec->sums.resize(n);
  }
  for (int i = 0; i < n; ++i) {
    if (offsets.col(i).isZero(real(0))) {
      // exact zero output (e.g. zero-initialized last layer): keep the base row
      corrected.row(i) = base_weights.row(i);
      if (rec) {
        rec->pre_clamp.col(i) = base_weights.row(i).transpose();
        rec->clamped.col(i).setZero();
        rec->sums(i) = 0;  // marks the passthrough branch
      }
      continue;
    }
    VecX pre = base_weights.row(i).transpose() + offsets.col(i);
    VecX clamped = pre.cwiseMax(real(0)).array() + real(1e-8);
    const real sum = clamped.sum();
    corrected.row(i) = (clamped / sum).transpose();
    if (rec) {
      rec->pre_clamp.col(i) = pre;
      rec->clamped.col(i) = clamped;
      rec->sums(i) = sum;
    }
  }
  return corrected;
}

LbsOffsetGrads lbs_weight_offsets_backward(const DenseNet& net, const LbsOffsetRecord& rec,
                                           const MatX& d_weights, VecX& param_grad) {
  const int n = int(d_weights.rows());
  const int k = int(d_weights.cols());
  MatX d_offsets = MatX::Zero(k, n);
  for (int i = 0; i < n; ++i) {
    if (rec.sums(i) == 0) continue;  // passthrough branch has zero local gradient
    const real sum = rec.sums(i);
    const VecX w = rec.clamped.col(i) / sum;
    const real dot = d_weights.row(i) * w;
    for (int j = 0; j < k; ++j) {
      const real d_clamped = (d_weights(i, j) - dot) / sum;
      d_offsets(j, i) = rec.pre_clamp(j, i) > 0 ? d_clamped : 0;
    }
  }
  LbsOffsetGrads grads;
  grads.d_positions = net_backward_batch(net, rec.tape, d_offsets, param_grad).transpose();
  return grads;
}

Pose pose_refine(const Pose& pose, const DenseNet& net, PoseRefineRecord* rec) {
  const int k = pose.joint_count();
  if (net.input_dim() != k * 3 || net.output_dim() != k * 3) {
    throw std::invalid_argument("pose refine: net dims mismatch");
  }
  VecX flat(k * 3);
  for (int j = 0; j < k; ++j)
    for (int c = 0; c < 3; ++c) flat(j * 3 + c) = pose.joint_rotations(j, c);
  Tape local;
  Tape& tape = rec ? rec->tape : local;
  const VecX raw = net_forward_batch(net, flat, &tape).col(0);
  if (rec) rec->raw = raw;

  Pose out = pose;
  for (int j = 0; j < k; ++j) {
    for (int c = 0; c < 3; ++c) {
      const real delta = real(0.1) * raw(j * 3 + c);
      if (delta != real(0)) out.joint_rotations(j, c) += delta;
    }
  }
  return out;
}

MatX pose_refine_backward(const DenseNet& net, const PoseRefineRecord& rec, const MatX& d_refined,
                          VecX& param_grad) {
  const int k = int(d_refined.rows());
  MatX d_raw(k * 3, 1);
  for (int j = 0; j < k; ++j)
    for (int c = 0; c < 3; ++c) d_raw(j * 3 + c, 0) = real(0.1) * d_refined(j, c);
  const MatX d_flat = net_backward_batch(net, rec.tape, d_raw, param_grad);
  MatX d_pose = d_refined;  // identity path
  for (int j = 0; j < k; ++j)
    for (int c = 0; c < 3; ++c) d_pose(j, c) += d_flat(j * 3 + c, 0);
  return d_pose;
}

}  // namespace mgs
