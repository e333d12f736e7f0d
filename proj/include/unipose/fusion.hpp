#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unipose/param_store.hpp"
#include "unipose/simkit.hpp"

namespace unipose {

// Stage-1 point branch: point encoder, two stacked encoder-decoder stages
// (depth alignment first, RGB second), global pooling, regression head. The
// head regresses per-joint offsets from the cloud centroid, matching the
// usual point-cloud normalization of the backbones this stands in for.
struct FusionConfig {
  int channels = 64;       // C, also the projector alignment width
  int code_width = 64;     // per-level regressor output width
  int points_used = 256;   // network input after farthest-point subsampling
  int encoder_factor = 4;  // encoder downsamples to points_used/encoder_factor
  bool enable_align = true;

  int encoder_tokens() const { return points_used / encoder_factor; }
};

// Deterministic farthest-point sampling on xyz triplets; starts at the point
// farthest from the centroid, ties broken toward the lower index.
std::vector<int32_t> farthest_point_indices(const std::vector<float>& xyz, int m);

// for each point, the index (into `selected`) of its nearest selected point
std::vector<int32_t> nearest_selected_indices(const std::vector<float>& xyz,
                                              const std::vector<int32_t>& selected);

void init_stage1_params(diff::ParamStore& store, const FusionConfig& cfg,
                        const SimConfig& sim, int joint_count, Rng& rng);

// flattened float count per pyramid level for a modality
std::vector<int64_t> pyramid_flat_sizes(const SimConfig& sim, bool depth_modality);

// projector parameter block shared by the stage-1 branch and the lifting net
void init_projector_params(diff::ParamStore& store, const std::string& prefix,
                           const std::vector<int64_t>& level_sizes, int64_t tokens,
                           int code_width, int channels, Rng& rng);

// Per-level linear regression of the flattened pyramid, concatenation across
// levels, and a final linear map to (n_points, channels).
diff::ValueId adaptive_project(diff::ParamBinder& params, const PyramidFeatures& pyramid,
                               const std::string& prefix, int64_t n_points, int channels);

// Cross-attention (point features query the projected image features) with a
// residual connection and layer norm.
diff::ValueId dynamic_align(diff::ParamBinder& params, diff::ValueId point_feats,
                            diff::ValueId img_feats, const std::string& prefix);

diff::ValueId point_branch_forward(diff::ParamBinder& params, const FrameInputs& frame,
                                   const FusionConfig& cfg, int joint_count,
                                   const CameraIntrinsics& intrinsics);

Pose3D pose_from_tensor(const diff::Tensor& t);

}  // namespace unipose
