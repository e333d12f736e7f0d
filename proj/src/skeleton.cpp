#include "unipose/skeleton.hpp"

#include <algorithm>
#include <cmath>

#include "unipose/rng.hpp"

namespace unipose {
namespace {

// Rodrigues rotation of v about unit axis k.
Point3 rotate(const Point3& v, const Point3& k, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const Point3 kxv = cross(k, v);
  const double kdv = k.dot(v);
  return v * c + kxv * s + k * (kdv * (1.0 - c));
}

Point3 any_perpendicular(const Point3& d) {
  // cross with the axis least aligned with d
  const double ax = std::fabs(d.x), ay = std::fabs(d.y), az = std::fabs(d.z);
  Point3 basis{1.0, 0.0, 0.0};
  if (ay <= ax && ay <= az) basis = {0.0, 1.0, 0.0};
  else if (az <= ax && az <= ay) basis = {0.0, 0.0, 1.0};
  return cross(d, basis).normalized();
}

struct BonePrior {
  Point3 rest_dir;     // unit, camera frame (x right, y down, z toward camera)
  double max_angle;    // articulation limit, radians
};

// Rest directions describe an upright A-pose facing the camera.
const BonePrior kBonePriors[14] = {
    {{0.0, -1.0, 0.0}, 0.25},            // torso -> neck
    {{0.0, -1.0, 0.0}, 0.35},            // neck -> head
    {{-1.0, 0.0, 0.0}, 0.15},            // neck -> r_shoulder
    {{1.0, 0.0, 0.0}, 0.15},             // neck -> l_shoulder
    {{-0.35, 0.9367, 0.0}, 1.2},         // r_shoulder -> r_elbow
    {{0.35, 0.9367, 0.0}, 1.2},          // l_shoulder -> l_elbow
    {{-0.1, 0.995, 0.0}, 1.3},           // r_elbow -> r_hand
    {{0.1, 0.995, 0.0}, 1.3},            // l_elbow -> l_hand
    {{-0.45, 0.893, 0.0}, 0.12},         // torso -> r_hip
    {{0.45, 0.893, 0.0}, 0.12},          // torso -> l_hip
    {{0.0, 1.0, 0.0}, 0.8},              // r_hip -> r_knee
    {{0.0, 1.0, 0.0}, 0.8},              // l_hip -> l_knee
    {{0.0, 1.0, 0.0}, 1.1},              // r_knee -> r_foot
    {{0.0, 1.0, 0.0}, 1.1},              // l_knee -> l_foot
};

struct Mat3 {
  double m[9];
  static Mat3 identity() { return {{1, 0, 0, 0, 1, 0, 0, 0, 1}}; }
  Point3 apply(const Point3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
            m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3 mul(const Mat3& o) const {
    Mat3 r{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double acc = 0.0;
        for (int k = 0; k < 3; ++k) acc += m[i * 3 + k] * o.m[k * 3 + j];
        r.m[i * 3 + j] = acc;
      }
    return r;
  }
};

Mat3 axis_angle(const Point3& k, double angle) {
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  return {{t * k.x * k.x + c, t * k.x * k.y - s * k.z, t * k.x * k.z + s * k.y,
           t * k.x * k.y + s * k.z, t * k.y * k.y + c, t * k.y * k.z - s * k.x,
           t * k.x * k.z - s * k.y, t * k.y * k.z + s * k.x, t * k.z * k.z + c}};
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

}  // namespace

SkeletonTopology default_topology() {
  SkeletonTopology t;
  t.joint_names = {"head",   "neck",   "r_shoulder", "l_shoulder", "r_elbow",
                   "l_elbow", "r_hand", "l_hand",     "torso",      "r_hip",
                   "l_hip",  "r_knee", "l_knee",     "r_foot",     "l_foot"};
  t.bones = {{8, 1}, {1, 0}, {1, 2},  {1, 3},  {2, 4},  {3, 5},  {4, 6},
             {5, 7}, {8, 9}, {8, 10}, {9, 11}, {10, 12}, {11, 13}, {12, 14}};
  t.rest_lengths = {0.22, 0.18, 0.19, 0.19, 0.28, 0.28, 0.26,
                    0.26, 0.16, 0.16, 0.42, 0.42, 0.41, 0.41};
  // (left_bone, right_bone)
  t.symmetric_pairs = {{3, 2}, {5, 4}, {7, 6}, {9, 8}, {11, 10}, {13, 12}};
  return t;
}

Pose3D sample_pose(const SkeletonTopology& topology, uint64_t rng_seed) {
  Rng rng(rng_seed);
  const int root = 8;  // torso
  Pose3D pose;
  pose.joints.assign(topology.joint_count(), Point3{});
  pose.joints[root] = {rng.uniform(-0.2, 0.2), rng.uniform(-0.15, 0.15),
                       rng.uniform(2.0, 4.0)};

  std::vector<Mat3> accum(topology.joint_count(), Mat3::identity());
  // bones are listed parent-before-child
  for (int b = 0; b < topology.bone_count(); ++b) {
    const auto [parent, child] = topology.bones[b];
    const BonePrior& prior = kBonePriors[b];
    Point3 axis{rng.normal(), rng.normal(), rng.normal()};
    const double axis_norm = axis.norm();
    axis = axis_norm > 1e-12 ? axis * (1.0 / axis_norm) : Point3{0.0, 0.0, 1.0};
    const double angle = rng.uniform(0.0, prior.max_angle);
    const Mat3 local = axis_angle(axis, angle);
    const Mat3 frame = accum[parent].mul(local);
    accum[child] = frame;
    const Point3 dir = frame.apply(prior.rest_dir.normalized());
    pose.joints[child] = pose.joints[parent] + dir * topology.rest_lengths[b];
  }
  return pose;
}

MotionSequence interpolate_motion(const Pose3D& start, const Pose3D& end,
                                  int n_frames, double frame_rate,
                                  const SkeletonTopology& topology) {
  if (n_frames < 2) throw ConfigError("interpolate_motion: n_frames must be >= 2");
  if (start.joint_count() != topology.joint_count() ||
      end.joint_count() != topology.joint_count())
    throw ShapeMismatch("interpolate_motion: pose/topology joint counts differ");

  const int root = 8;
  MotionSequence seq;
  seq.frame_rate = frame_rate;
  seq.frames.reserve(n_frames);

  for (int f = 0; f < n_frames; ++f) {
    const double tau = static_cast<double>(f) / (n_frames - 1);
    const double s = smoothstep(tau);
    Pose3D pose;
    pose.joints.assign(topology.joint_count(), Point3{});
    pose.joints[root] = start.joints[root] + (end.joints[root] - start.joints[root]) * s;

    for (int b = 0; b < topology.bone_count(); ++b) {
      const auto [parent, child] = topology.bones[b];
      const Point3 off_s = start.joints[child] - start.joints[parent];
      const Point3 off_e = end.joints[child] - end.joints[parent];
      const double len_s = off_s.norm();
      const double len_e = off_e.norm();
      Point3 offset;
      if (len_s < 1e-12 || len_e < 1e-12) {
        offset = off_s + (off_e - off_s) * s;
      } else {
        const Point3 d0 = off_s * (1.0 / len_s);
        const Point3 d1 = off_e * (1.0 / len_e);
        const double cosang = std::clamp(d0.dot(d1), -1.0, 1.0);
        const double ang = std::acos(cosang);
        Point3 dir = d0;
        if (ang > 1e-12) {
          Point3 axis = cross(d0, d1);
          const double axis_norm = axis.norm();
          axis = axis_norm > 1e-12 ? axis * (1.0 / axis_norm) : any_perpendicular(d0);
          dir = rotate(d0, axis, ang * s);
        }
        const double len = len_s + (len_e - len_s) * s;
        offset = dir * len;
      }
      pose.joints[child] = pose.joints[parent] + offset;
    }
    seq.frames.push_back(std::move(pose));
  }
  // reproduce endpoints exactly
  seq.frames.front() = start;
  seq.frames.back() = end;
  return seq;
}

double bone_length(const Pose3D& pose, const SkeletonTopology& topology, int bone) {
  const auto [parent, child] = topology.bones[bone];
  return (pose.joints[child] - pose.joints[parent]).norm();
}

}  // namespace unipose
