#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "unipose/geometry.hpp"

namespace unipose {

// Kinematic tree rooted at the torso. Bones are (parent_joint, child_joint)
// index pairs; symmetric_pairs index into `bones` (left, right).
struct SkeletonTopology {
  std::vector<std::string> joint_names;
  std::vector<std::pair<int, int>> bones;
  std::vector<std::pair<int, int>> symmetric_pairs;
  std::vector<double> rest_lengths;  // meters

  int joint_count() const { return static_cast<int>(joint_names.size()); }
  int bone_count() const { return static_cast<int>(bones.size()); }
};

struct Pose3D {
  std::vector<Point3> joints;

  int joint_count() const { return static_cast<int>(joints.size()); }
};

struct Pose2D {
  std::vector<Pixel2D> joints;
  std::vector<double> confidence;  // in [0,1]

  int joint_count() const { return static_cast<int>(joints.size()); }
};

struct MotionSequence {
  std::vector<Pose3D> frames;
  double frame_rate = 0.0;  // Hz
};

// Fixed 15-joint layout (head, neck, shoulders, elbows, hands, torso, hips,
// knees, feet) with equal left/right rest lengths.
SkeletonTopology default_topology();

Pose3D sample_pose(const SkeletonTopology& topology, uint64_t rng_seed);

MotionSequence interpolate_motion(const Pose3D& start, const Pose3D& end,
                                  int n_frames, double frame_rate,
                                  const SkeletonTopology& topology);

double bone_length(const Pose3D& pose, const SkeletonTopology& topology, int bone);

}  // namespace unipose
