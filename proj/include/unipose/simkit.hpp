#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unipose/geometry.hpp"
#include "unipose/skeleton.hpp"

namespace unipose {

// Multi-resolution feature grids standing in for a 2D backbone's pyramid
// maps: per-joint Gaussian heatmaps plus seeded noise; the depth-modality
// pyramid carries one extra channel with the per-pixel depth of the nearest
// body capsule (0 where empty).
struct PyramidFeatures {
  struct Level {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> data;  // row-major (y, x, channel)
  };
  std::vector<Level> levels;

  int level_count() const { return static_cast<int>(levels.size()); }
};

struct SimConfig {
  int n_sequences = 200;
  int frames_per_sequence = 30;
  double frame_rate = 15.0;
  int n_points = 2048;
  double cloud_noise_sigma = 0.005;  // meters
  double pixel_sigma = 3.0;
  double outlier_rate = 0.05;
  // image is height x width = 256 x 192 with a 16 x 12 anchor grid
  int image_height = 256;
  int image_width = 192;
  double fx = 220.0, fy = 220.0, cx = 96.0, cy = 128.0;
  int pyramid_levels = 3;
  int pyramid_base_height = 32;
  int pyramid_base_width = 24;
  int heatmap_channels_per_joint = 1;
  double heatmap_sigma = 1.5;       // grid units
  double heatmap_noise = 0.02;
  // "smooth": cubic-eased articulated interpolation between sampled poses;
  // "rigid_linear": constant-velocity rigid translation of one sampled pose
  // (satisfies all self-supervision priors exactly)
  std::string motion_mode = "smooth";
  uint64_t seed = 1;

  CameraIntrinsics intrinsics() const {
    CameraIntrinsics k;
    k.fx = fx;
    k.fy = fy;
    k.cx = cx;
    k.cy = cy;
    k.width = image_width;
    k.height = image_height;
    return k;
  }
};

// One synthetic RGB-D observation. Ground truth is reachable only through
// evaluation_ground_truth(); training code consumes FrameInputs, which does
// not expose it.
class Frame {
 public:
  std::vector<float> cloud;  // xyz triplets, float32 domain
  Pose2D pose2d;
  PyramidFeatures rgb_pyramid;
  PyramidFeatures depth_pyramid;
  int seq_index = 0;
  int frame_index = 0;

  const Pose3D& evaluation_ground_truth() const { return gt_pose3d_; }
  void set_ground_truth(Pose3D gt) { gt_pose3d_ = std::move(gt); }

  int point_count() const { return static_cast<int>(cloud.size() / 3); }

 private:
  Pose3D gt_pose3d_;
};

// What training is allowed to see of a frame.
struct FrameInputs {
  const std::vector<float>* cloud = nullptr;
  const Pose2D* pose2d = nullptr;
  const PyramidFeatures* rgb_pyramid = nullptr;
  const PyramidFeatures* depth_pyramid = nullptr;
};

inline FrameInputs training_view(const Frame& f) {
  return {&f.cloud, &f.pose2d, &f.rgb_pyramid, &f.depth_pyramid};
}

struct SequenceDataset {
  SimConfig config;
  SkeletonTopology topology;
  std::vector<std::vector<Frame>> sequences;

  int frame_count() const {
    int n = 0;
    for (const auto& s : sequences) n += static_cast<int>(s.size());
    return n;
  }
};

double bone_capsule_radius(int bone_index);

// Points sampled uniformly on per-bone capsule surfaces, counts proportional
// to bone length, plus isotropic Gaussian noise. Values are float32-exact.
std::vector<Point3> render_cloud(const Pose3D& pose, const SkeletonTopology& topology,
                                 int n_points, double noise_sigma, uint64_t rng_seed);

Pose2D synth_pose2d(const Pose3D& pose, const CameraIntrinsics& k, double pixel_sigma,
                    double outlier_rate, uint64_t rng_seed);

PyramidFeatures synth_pyramid(const Pose2D& pose2d, const SimConfig& cfg,
                              uint64_t rng_seed);

// depth-modality variant: heatmaps with an independent noise stream plus the
// capsule depth channel
PyramidFeatures synth_depth_pyramid(const Pose2D& pose2d, const Pose3D& pose,
                                    const SkeletonTopology& topology,
                                    const SimConfig& cfg, uint64_t rng_seed);

// per-pixel depth of the nearest capsule along each pixel ray; 0 where empty
std::vector<float> render_capsule_depth(const Pose3D& pose,
                                        const SkeletonTopology& topology,
                                        const CameraIntrinsics& k, int grid_h,
                                        int grid_w);

SequenceDataset generate_dataset(const SimConfig& cfg, uint64_t rng_seed);

void write_dataset(const SequenceDataset& ds, const std::string& path);
SequenceDataset read_dataset(const std::string& path);

}  // namespace unipose
