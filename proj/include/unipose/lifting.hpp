#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unipose/fusion.hpp"
#include "unipose/param_store.hpp"
#include "unipose/simkit.hpp"

namespace unipose {

// Stage-2 pose-guided anchor-to-joint lifting network. Anchors live in
// (u, v, depth) space: local anchors follow each joint's 2D estimate with
// learnable offsets, global anchors form a fixed image grid at depth 0, and
// aggregation back-projects the weighted (u,v,depth) mean through the
// intrinsics.
struct LiftConfig {
  int channels = 64;
  int code_width = 64;
  int tokens = 48;        // image feature tokens from the adaptive projector
  int encoder_layers = 2;
  int decoder_layers = 1;
  int heads = 4;
  int n_local = 20;
  int grid_h = 16;
  int grid_w = 12;
  double ring_radius_px = 8.0;
  double local_depth_base = 3.0;    // meters; frustum center
  double local_depth_step = 0.2;    // ring depths base + {-step, 0, +step}
  double depth_epsilon = 1e-3;      // clamp for non-positive aggregated depth
  // ablation: one anchor per joint pinned to its 2D estimate, no global grid
  bool single_anchor = false;

  int n_global() const { return single_anchor ? 0 : grid_h * grid_w; }
  int local_per_joint() const { return single_anchor ? 1 : n_local; }
  int total_anchors(int joint_count) const {
    return local_per_joint() * joint_count + n_global();
  }
};

struct AnchorSet {
  diff::ValueId uvd = -1;       // (A,3), local anchors first then global
  std::vector<uint8_t> scope;   // (A,K); W is normalized within each column's scope
  int joint_count = 0;
  int n_local_per_joint = 0;
  int n_global = 0;
  int image_width = 0;          // for coordinate normalization downstream
  int image_height = 0;

  int total() const { return n_local_per_joint * joint_count + n_global; }
};

void init_lift_params(diff::ParamStore& store, const LiftConfig& cfg,
                      const SimConfig& sim, int joint_count, Rng& rng);

// (T+K, C) fused tokens and (T+K, C) sinusoidal positional embedding
struct FusedTokens {
  diff::ValueId features = -1;
  diff::ValueId pos_embedding = -1;
};
FusedTokens fuse_pose_features(diff::ParamBinder& params, diff::ValueId img_feats,
                               const Pose2D& pose2d, const LiftConfig& cfg,
                               const CameraIntrinsics& k);

diff::ValueId encode(diff::ParamBinder& params, const FusedTokens& fused,
                     const LiftConfig& cfg);

AnchorSet generate_anchors(diff::ParamBinder& params, const Pose2D& pose2d,
                           const LiftConfig& cfg, const CameraIntrinsics& k);

// -> (weights (A,K), offsets (A,K,3))
std::pair<diff::ValueId, diff::ValueId> decode_anchors(diff::ParamBinder& params,
                                                       const AnchorSet& anchors,
                                                       diff::ValueId f_enc,
                                                       const LiftConfig& cfg);

diff::ValueId aggregate_joints(diff::ParamBinder& params, const AnchorSet& anchors,
                               diff::ValueId weights, diff::ValueId offsets,
                               const LiftConfig& cfg, const CameraIntrinsics& k,
                               bool* depth_clamped = nullptr,
                               diff::ValueId* uvd_out = nullptr);

struct LiftForward {
  diff::ValueId pose = -1;     // (K,3) camera frame
  diff::ValueId weights = -1;  // (A,K)
  diff::ValueId offsets = -1;  // (A,K,3)
  AnchorSet anchors;
  bool depth_clamped = false;
};

LiftForward lift_forward(diff::ParamBinder& params, const FrameInputs& frame,
                         const LiftConfig& cfg, const CameraIntrinsics& k,
                         int joint_count);

}  // namespace unipose
