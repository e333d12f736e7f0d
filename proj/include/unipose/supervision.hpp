#pragma once

#include <vector>

#include "unipose/geometry.hpp"
#include "unipose/skeleton.hpp"

namespace unipose {

// weights of the total loss: total = l1*L_2d + l2*L_bone + l3*L_sym + l4*L_con
struct LossWeights {
  double lambda1 = 10.0;
  double lambda2 = 1.0;
  double lambda3 = 0.1;
  double lambda4 = 0.1;
};

constexpr double kNormEpsilon = 1e-6;  // minimum ||j|| for the ray-loss guard

// One normalized ray-distance term D(p,r)/||p||. The norm in the denominator
// blocks the all-zeros shortcut: shrinking ||p|| at a held ray distance blows
// the term up instead of rewarding it.
double ray_loss_term(const Point3& p, const Ray3& r);

struct PoseLoss {
  double value = 0.0;
  std::vector<Point3> grad;  // d value / d predicted joint
};

struct RayLoss {
  double value = 0.0;
  std::vector<Point3> grad;
  std::vector<double> per_joint_distance;
};

// 2D-to-3D ray supervision: sum_k conf_k * D_{p-ray,k} / ||j_k||, the ray
// back-projected from the 2D estimate. The denominator is treated as a
// per-step constant (no gradient through it). Throws NearZeroJoint when any
// ||j_k|| <= kNormEpsilon.
RayLoss loss_2d_ray(const Pose3D& pred, const Pose2D& target2d,
                    const CameraIntrinsics& k);

// FD-oracle hook: the same loss with the denominators frozen to `mu`, which
// is the function the returned gradient actually differentiates.
RayLoss loss_2d_ray_fixed_mu(const Pose3D& pred, const Pose2D& target2d,
                             const CameraIntrinsics& k, const std::vector<double>& mu);

// 3D-to-2D baseline: sum_k conf_k * ||c_k - proj(j_k)||. A joint at or behind
// the camera plane contributes the image diagonal (in pixels) with zero
// gradient, keeping the ablation trainable without rewarding depth collapse.
PoseLoss loss_rgb_baseline(const Pose3D& pred, const Pose2D& target2d,
                           const CameraIntrinsics& k);

struct SeqLoss {
  double value = 0.0;
  std::vector<std::vector<Point3>> grad;  // [frame][joint]
};

// L1 deviation of every bone length from its per-sequence mean length.
SeqLoss loss_bone(const std::vector<Pose3D>& seq, const SkeletonTopology& topology);

// L1 gap between symmetric left/right bone lengths.
PoseLoss loss_sym(const Pose3D& pred, const SkeletonTopology& topology);

// Second-difference motion smoothness over interior frames.
SeqLoss loss_con(const std::vector<Pose3D>& seq);

enum class SupervisionManner { kRay2dTo3d, kProject3dTo2d };

struct SelfSupFlags {
  bool bone = true;
  bool sym = true;
  bool con = true;
};

struct LossReport {
  double l_2d = 0.0;     // ray term (or the 3d-to-2d baseline when ablated)
  double l_bone = 0.0;
  double l_sym = 0.0;
  double l_con = 0.0;
  double total = 0.0;
  std::vector<double> per_joint_ray;  // mean ray distance per joint
  double l_2d_per_joint = 0.0;        // l_2d / K, logged alongside the sum
};

struct TotalLoss {
  LossReport report;
  std::vector<std::vector<Point3>> grad;  // [frame][joint]
};

// Weighted sequence loss; every component is normalized per frame so the
// report scales comparably across sequence lengths. Disabled terms are zero
// with zero gradient.
TotalLoss total_loss(const std::vector<Pose3D>& seq_preds,
                     const std::vector<Pose2D>& targets2d, const CameraIntrinsics& k,
                     const SkeletonTopology& topology, const LossWeights& weights,
                     SupervisionManner manner = SupervisionManner::kRay2dTo3d,
                     const SelfSupFlags& flags = {});

}  // namespace unipose
