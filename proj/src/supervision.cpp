#include "unipose/supervision.hpp"

#include <cmath>

namespace unipose {
namespace {

double sign(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

}  // namespace

double ray_loss_term(const Point3& p, const Ray3& r) {
  const double norm = p.norm();
  if (norm <= kNormEpsilon)
    throw NearZeroJoint("ray_loss_term: ||j|| below epsilon");
  return point_to_ray_distance(p, r) / norm;
}

RayLoss loss_2d_ray_fixed_mu(const Pose3D& pred, const Pose2D& target2d,
                             const CameraIntrinsics& k,
                             const std::vector<double>& mu) {
  const int K = pred.joint_count();
  if (target2d.joint_count() != K || static_cast<int>(mu.size()) != K)
    throw ShapeMismatch("loss_2d_ray: joint count mismatch");
  RayLoss out;
  out.grad.assign(K, Point3{});
  out.per_joint_distance.assign(K, 0.0);
  for (int j = 0; j < K; ++j) {
    if (mu[j] <= kNormEpsilon) throw NearZeroJoint("loss_2d_ray: ||j|| below epsilon");
    const Ray3 ray = back_project(target2d.joints[j], k);
    const double d = point_to_ray_distance(pred.joints[j], ray);
    const double conf = target2d.confidence[j];
    out.per_joint_distance[j] = d;
    out.value += conf * d / mu[j];
    if (const auto g = point_to_ray_distance_grad(pred.joints[j], ray)) {
      out.grad[j] = *g * (conf / mu[j]);
    }
  }
  return out;
}

RayLoss loss_2d_ray(const Pose3D& pred, const Pose2D& target2d,
                    const CameraIntrinsics& k) {
  std::vector<double> mu(pred.joint_count());
  for (int j = 0; j < pred.joint_count(); ++j) mu[j] = pred.joints[j].norm();
  return loss_2d_ray_fixed_mu(pred, target2d, k, mu);
}

PoseLoss loss_rgb_baseline(const Pose3D& pred, const Pose2D& target2d,
                           const CameraIntrinsics& k) {
  const int K = pred.joint_count();
  if (target2d.joint_count() != K)
    throw ShapeMismatch("loss_rgb_baseline: joint count mismatch");
  const double diag = std::hypot(static_cast<double>(k.width),
                                 static_cast<double>(k.height));
  PoseLoss out;
  out.grad.assign(K, Point3{});
  for (int j = 0; j < K; ++j) {
    const Point3& p = pred.joints[j];
    const double conf = target2d.confidence[j];
    if (p.z <= kNormEpsilon) {
      out.value += conf * diag;  // fixed penalty, no gradient
      continue;
    }
    const Pixel2D proj{k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy};
    const double eu = proj.u - target2d.joints[j].u;
    const double ev = proj.v - target2d.joints[j].v;
    const double d = std::hypot(eu, ev);
    out.value += conf * d;
    if (d > 1e-12) {
      const double s = conf / d;
      out.grad[j].x = s * eu * k.fx / p.z;
      out.grad[j].y = s * ev * k.fy / p.z;
      out.grad[j].z = -s * (eu * k.fx * p.x + ev * k.fy * p.y) / (p.z * p.z);
    }
  }
  return out;
}

SeqLoss loss_bone(const std::vector<Pose3D>& seq, const SkeletonTopology& topology) {
  if (seq.size() < 2) throw SequenceTooShort("loss_bone: need >= 2 frames");
  const int T = static_cast<int>(seq.size());
  const int NB = topology.bone_count();
  const int K = topology.joint_count();

  SeqLoss out;
  out.grad.assign(T, std::vector<Point3>(K, Point3{}));

  for (int b = 0; b < NB; ++b) {
    const auto [pj, cj] = topology.bones[b];
    std::vector<double> len(T);
    double mean = 0.0;
    for (int t = 0; t < T; ++t) {
      len[t] = bone_length(seq[t], topology, b);
      mean += len[t];
    }
    mean /= T;
    double sign_sum = 0.0;
    for (int t = 0; t < T; ++t) {
      out.value += std::fabs(len[t] - mean);
      sign_sum += sign(len[t] - mean);
    }
    for (int t = 0; t < T; ++t) {
      // d/dlen_t of sum_s |len_s - mean| with mean depending on every frame
      const double dl = sign(len[t] - mean) - sign_sum / T;
      if (dl == 0.0 || len[t] < 1e-12) continue;
      const Point3 u = (seq[t].joints[cj] - seq[t].joints[pj]) * (1.0 / len[t]);
      out.grad[t][cj] = out.grad[t][cj] + u * dl;
      out.grad[t][pj] = out.grad[t][pj] - u * dl;
    }
  }
  return out;
}

PoseLoss loss_sym(const Pose3D& pred, const SkeletonTopology& topology) {
  if (topology.symmetric_pairs.empty())
    throw ConfigError("loss_sym: topology has no symmetric pairs");
  PoseLoss out;
  out.grad.assign(pred.joint_count(), Point3{});
  for (const auto& [bl, br] : topology.symmetric_pairs) {
    const double ll = bone_length(pred, topology, bl);
    const double lr = bone_length(pred, topology, br);
    out.value += std::fabs(ll - lr);
    const double s = sign(ll - lr);
    if (s == 0.0) continue;
    const auto [plj, clj] = topology.bones[bl];
    const auto [prj, crj] = topology.bones[br];
    if (ll > 1e-12) {
      const Point3 ul = (pred.joints[clj] - pred.joints[plj]) * (1.0 / ll);
      out.grad[clj] = out.grad[clj] + ul * s;
      out.grad[plj] = out.grad[plj] - ul * s;
    }
    if (lr > 1e-12) {
      const Point3 ur = (pred.joints[crj] - pred.joints[prj]) * (1.0 / lr);
      out.grad[crj] = out.grad[crj] - ur * s;
      out.grad[prj] = out.grad[prj] + ur * s;
    }
  }
  return out;
}

SeqLoss loss_con(const std::vector<Pose3D>& seq) {
  if (seq.size() < 3) throw SequenceTooShort("loss_con: need >= 3 frames");
  const int T = static_cast<int>(seq.size());
  const int K = seq.front().joint_count();
  SeqLoss out;
  out.grad.assign(T, std::vector<Point3>(K, Point3{}));
  for (int t = 1; t + 1 < T; ++t) {
    for (int j = 0; j < K; ++j) {
      const Point3 d2 =
          seq[t + 1].joints[j] - seq[t].joints[j] * 2.0 + seq[t - 1].joints[j];
      const double n = d2.norm();
      out.value += n;
      if (n > 1e-12) {
        const Point3 u = d2 * (1.0 / n);
        out.grad[t + 1][j] = out.grad[t + 1][j] + u;
        out.grad[t][j] = out.grad[t][j] - u * 2.0;
        out.grad[t - 1][j] = out.grad[t - 1][j] + u;
      }
    }
  }
  return out;
}

TotalLoss total_loss(const std::vector<Pose3D>& seq_preds,
                     const std::vector<Pose2D>& targets2d, const CameraIntrinsics& k,
                     const SkeletonTopology& topology, const LossWeights& weights,
                     SupervisionManner manner, const SelfSupFlags& flags) {
  if (seq_preds.size() != targets2d.size() || seq_preds.empty())
    throw ShapeMismatch("total_loss: prediction/target frame counts differ");
  const int T = static_cast<int>(seq_preds.size());
  const int K = seq_preds.front().joint_count();
  const double inv_t = 1.0 / T;

  TotalLoss out;
  out.grad.assign(T, std::vector<Point3>(K, Point3{}));
  out.report.per_joint_ray.assign(K, 0.0);

  for (int t = 0; t < T; ++t) {
    if (manner == SupervisionManner::kRay2dTo3d) {
      const RayLoss rl = loss_2d_ray(seq_preds[t], targets2d[t], k);
      out.report.l_2d += rl.value * inv_t;
      for (int j = 0; j < K; ++j) {
        out.report.per_joint_ray[j] += rl.per_joint_distance[j] * inv_t;
        out.grad[t][j] = out.grad[t][j] + rl.grad[j] * (weights.lambda1 * inv_t);
      }
    } else {
      const PoseLoss pl = loss_rgb_baseline(seq_preds[t], targets2d[t], k);
      out.report.l_2d += pl.value * inv_t;
      for (int j = 0; j < K; ++j)
        out.grad[t][j] = out.grad[t][j] + pl.grad[j] * (weights.lambda1 * inv_t);
    }
    if (flags.sym) {
      const PoseLoss sl = loss_sym(seq_preds[t], topology);
      out.report.l_sym += sl.value * inv_t;
      for (int j = 0; j < K; ++j)
        out.grad[t][j] = out.grad[t][j] + sl.grad[j] * (weights.lambda3 * inv_t);
    }
  }

  if (flags.bone && T >= 2) {
    const SeqLoss bl = loss_bone(seq_preds, topology);
    out.report.l_bone = bl.value * inv_t;
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < K; ++j)
        out.grad[t][j] = out.grad[t][j] + bl.grad[t][j] * (weights.lambda2 * inv_t);
  }
  if (flags.con && T >= 3) {
    const SeqLoss cl = loss_con(seq_preds);
    out.report.l_con = cl.value * inv_t;
    for (int t = 0; t < T; ++t)
      for (int j = 0; j < K; ++j)
        out.grad[t][j] = out.grad[t][j] + cl.grad[t][j] * (weights.lambda4 * inv_t);
  }

  out.report.total = weights.lambda1 * out.report.l_2d +
                     weights.lambda2 * out.report.l_bone +
                     weights.lambda3 * out.report.l_sym +
                     weights.lambda4 * out.report.l_con;
  out.report.l_2d_per_joint = out.report.l_2d / K;
  return out;
}

}  // namespace unipose
