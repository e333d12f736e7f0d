#include "unipose/lifting.hpp"

#include <cmath>

namespace unipose {

using diff::Graph;
using diff::ParamBinder;
using diff::Tensor;
using diff::ValueId;

namespace {

Tensor sinusoidal_embedding(int64_t tokens, int64_t channels) {
  Tensor pe({tokens, channels});
  for (int64_t t = 0; t < tokens; ++t) {
    for (int64_t c = 0; c < channels; c += 2) {
      const double rate = std::pow(10000.0, -static_cast<double>(c) / channels);
      pe.at(t, c) = std::sin(t * rate);
      if (c + 1 < channels) pe.at(t, c + 1) = std::cos(t * rate);
    }
  }
  return pe;
}

// residual attention block: x <- LN(x + MHA(x+pe, x+pe, x) Wo)
ValueId attention_block(ParamBinder& params, ValueId x, ValueId pe,
                        const std::string& prefix, int heads) {
  Graph& g = params.graph();
  const ValueId xq = pe >= 0 ? g.add(x, pe) : x;
  const ValueId q = g.matmul(xq, params(prefix + "/wq"));
  const ValueId k = g.matmul(xq, params(prefix + "/wk"));
  const ValueId v = g.matmul(x, params(prefix + "/wv"));
  const ValueId att = diff::multihead_attention(g, q, k, v, heads);
  const ValueId mixed = g.add(x, g.matmul(att, params(prefix + "/wo")));
  return g.layer_norm(mixed, params(prefix + "/ln/gamma"), params(prefix + "/ln/beta"));
}

void init_attention_block(diff::ParamStore& store, const std::string& prefix,
                          int64_t c, Rng& rng) {
  using Init = diff::ParamStore::Init;
  for (const char* n : {"wq", "wk", "wv", "wo"})
    store.create(prefix + "/" + std::string(n), {c, c}, Init::kXavierUniform, rng);
  Tensor gamma({1, c});
  for (auto& v : gamma.data) v = 1.0;
  store.create_with(prefix + "/ln/gamma", std::move(gamma));
  store.create(prefix + "/ln/beta", {1, c}, Init::kZeros, rng);
}

}  // namespace

void init_lift_params(diff::ParamStore& store, const LiftConfig& cfg,
                      const SimConfig& sim, int joint_count, Rng& rng) {
  using Init = diff::ParamStore::Init;
  const int64_t c = cfg.channels;

  init_projector_params(store, "lift/proj", pyramid_flat_sizes(sim, false), cfg.tokens,
                        cfg.code_width, cfg.channels, rng);
  store.create("lift/pose/w", {3, c}, Init::kXavierUniform, rng);
  store.create("lift/pose/b", {1, c}, Init::kZeros, rng);
  for (int l = 0; l < cfg.encoder_layers; ++l)
    init_attention_block(store, "lift/enc" + std::to_string(l), c, rng);

  store.create("lift/anchor/w", {3, c}, Init::kXavierUniform, rng);
  store.create("lift/anchor/b", {1, c}, Init::kZeros, rng);
  for (int l = 0; l < cfg.decoder_layers; ++l)
    init_attention_block(store, "lift/dec" + std::to_string(l), c, rng);

  store.create("lift/whead/w", {c, joint_count}, Init::kXavierUniform, rng);
  store.create("lift/whead/b", {1, joint_count}, Init::kZeros, rng);
  store.create("lift/ohead/w", {c, joint_count * 3}, Init::kXavierUniform, rng);
  store.create("lift/ohead/b", {1, joint_count * 3}, Init::kZeros, rng);

  // learnable local anchor offsets: a ring in (u,v) and a depth cycle around
  // the frustum center, so anchors start distributed around each joint
  const int nl = cfg.local_per_joint();
  Tensor duv({static_cast<int64_t>(joint_count) * nl, 2});
  Tensor dz({static_cast<int64_t>(joint_count) * nl, 1});
  for (int j = 0; j < joint_count; ++j) {
    for (int i = 0; i < nl; ++i) {
      const int64_t row = static_cast<int64_t>(j) * nl + i;
      if (!cfg.single_anchor && nl > 1) {
        const double angle = 2.0 * M_PI * i / nl;
        duv.at(row, 0) = cfg.ring_radius_px * std::cos(angle);
        duv.at(row, 1) = cfg.ring_radius_px * std::sin(angle);
        dz.at(row, 0) = cfg.local_depth_base +
                        cfg.local_depth_step * static_cast<double>((i % 3) - 1);
      } else {
        dz.at(row, 0) = cfg.local_depth_base;
      }
    }
  }
  store.create_with("lift/anchors/duv", std::move(duv));
  store.create_with("lift/anchors/dz", std::move(dz));
}

FusedTokens fuse_pose_features(ParamBinder& params, ValueId img_feats,
                               const Pose2D& pose2d, const LiftConfig& cfg,
                               const CameraIntrinsics& k) {
  Graph& g = params.graph();
  const int K = pose2d.joint_count();
  const int64_t t_img = g.value(img_feats).shape.at(0);

  Tensor pose_in({K, 3});
  for (int j = 0; j < K; ++j) {
    pose_in.at(j, 0) = pose2d.joints[j].u / k.width - 0.5;
    pose_in.at(j, 1) = pose2d.joints[j].v / k.height - 0.5;
    pose_in.at(j, 2) = pose2d.confidence[j];
  }
  const ValueId emb_pose = diff::linear(g, g.constant(std::move(pose_in)),
                                        params("lift/pose/w"), params("lift/pose/b"));

  FusedTokens out;
  out.features = g.concat(img_feats, emb_pose, 0);
  out.pos_embedding = g.constant(sinusoidal_embedding(t_img + K, cfg.channels));
  return out;
}

ValueId encode(ParamBinder& params, const FusedTokens& fused, const LiftConfig& cfg) {
  ValueId x = fused.features;
  for (int l = 0; l < cfg.encoder_layers; ++l)
    x = attention_block(params, x, fused.pos_embedding, "lift/enc" + std::to_string(l),
                        cfg.heads);
  return x;
}

AnchorSet generate_anchors(ParamBinder& params, const Pose2D& pose2d,
                           const LiftConfig& cfg, const CameraIntrinsics& k) {
  Graph& g = params.graph();
  const int K = pose2d.joint_count();
  const int nl = cfg.local_per_joint();
  const int ng = cfg.n_global();

  // local anchors: joint estimate + learnable (u,v) offset, learnable depth
  Tensor base_uv({static_cast<int64_t>(K) * nl, 2});
  for (int j = 0; j < K; ++j) {
    for (int i = 0; i < nl; ++i) {
      base_uv.at(static_cast<int64_t>(j) * nl + i, 0) = pose2d.joints[j].u;
      base_uv.at(static_cast<int64_t>(j) * nl + i, 1) = pose2d.joints[j].v;
    }
  }
  const ValueId local_uv = g.add(g.constant(std::move(base_uv)),
                                 params("lift/anchors/duv"));
  ValueId uvd = g.concat(local_uv, params("lift/anchors/dz"), 1);

  if (ng > 0) {
    Tensor grid({ng, 3});
    for (int gy = 0; gy < cfg.grid_h; ++gy) {
      for (int gx = 0; gx < cfg.grid_w; ++gx) {
        const int64_t row = static_cast<int64_t>(gy) * cfg.grid_w + gx;
        grid.at(row, 0) = (gx + 0.5) * k.width / cfg.grid_w;
        grid.at(row, 1) = (gy + 0.5) * k.height / cfg.grid_h;
        grid.at(row, 2) = 0.0;  // global anchors stay fixed at depth 0
      }
    }
    uvd = g.concat(uvd, g.constant(std::move(grid)), 0);
  }

  AnchorSet set;
  set.uvd = uvd;
  set.joint_count = K;
  set.n_local_per_joint = nl;
  set.n_global = ng;
  set.image_width = k.width;
  set.image_height = k.height;
  set.scope.assign(static_cast<size_t>(set.total()) * K, 0);
  for (int j = 0; j < K; ++j)
    for (int i = 0; i < nl; ++i) set.scope[(static_cast<size_t>(j) * nl + i) * K + j] = 1;
  for (int a = K * nl; a < set.total(); ++a)
    for (int j = 0; j < K; ++j) set.scope[static_cast<size_t>(a) * K + j] = 1;
  return set;
}

std::pair<ValueId, ValueId> decode_anchors(ParamBinder& params, const AnchorSet& anchors,
                                           ValueId f_enc, const LiftConfig& cfg) {
  Graph& g = params.graph();
  const int K = anchors.joint_count;

  // normalize anchor coordinates before embedding
  Tensor scale_m({3, 3});
  scale_m.at(0, 0) = 1.0 / anchors.image_width;
  scale_m.at(1, 1) = 1.0 / anchors.image_height;
  scale_m.at(2, 2) = 1.0 / 4.0;
  Tensor shift({1, 3});
  shift.data = {-0.5, -0.5, 0.0};
  const ValueId norm_uvd = g.add_rowvec(g.matmul(anchors.uvd, g.constant(scale_m)),
                                        g.constant(shift));
  const ValueId emb = diff::linear(g, norm_uvd, params("lift/anchor/w"),
                                   params("lift/anchor/b"));

  // decoder: anchor embeddings query the enhanced features
  ValueId x = emb;
  for (int l = 0; l < cfg.decoder_layers; ++l) {
    const std::string prefix = "lift/dec" + std::to_string(l);
    const ValueId q = g.matmul(g.add(x, emb), params(prefix + "/wq"));
    const ValueId kk = g.matmul(f_enc, params(prefix + "/wk"));
    const ValueId vv = g.matmul(f_enc, params(prefix + "/wv"));
    const ValueId att = diff::multihead_attention(g, q, kk, vv, cfg.heads);
    const ValueId mixed = g.add(x, g.matmul(att, params(prefix + "/wo")));
    x = g.layer_norm(mixed, params(prefix + "/ln/gamma"), params(prefix + "/ln/beta"));
  }

  const ValueId logits = diff::linear(g, x, params("lift/whead/w"), params("lift/whead/b"));
  const ValueId weights = g.softmax_axis0_masked(logits, anchors.scope);
  const ValueId off_flat = diff::linear(g, x, params("lift/ohead/w"), params("lift/ohead/b"));
  const ValueId offsets =
      g.reshape(off_flat, {static_cast<int64_t>(anchors.total()), K, 3});
  return {weights, offsets};
}

ValueId aggregate_joints(ParamBinder& params, const AnchorSet& anchors, ValueId weights,
                         ValueId offsets, const LiftConfig& cfg,
                         const CameraIntrinsics& k, bool* depth_clamped,
                         ValueId* uvd_out) {
  Graph& g = params.graph();
  // j_uvd = W^T A + sum_a W(a,j) O(a,j,:); masked weights are exactly zero so
  // out-of-scope anchors cannot leak in
  const ValueId base = g.matmul(g.transpose(weights), anchors.uvd);
  const ValueId shifted = g.add(base, g.weighted_offset_sum(weights, offsets));
  if (uvd_out) *uvd_out = shifted;
  return g.uvd_to_xyz(shifted, k, cfg.depth_epsilon, depth_clamped);
}

LiftForward lift_forward(ParamBinder& params, const FrameInputs& frame,
                         const LiftConfig& cfg, const CameraIntrinsics& k,
                         int joint_count) {
  if (frame.pose2d->joint_count() != joint_count)
    throw ShapeMismatch("lift_forward: pose2d joint count mismatch");
  const ValueId img =
      adaptive_project(params, *frame.rgb_pyramid, "lift/proj", cfg.tokens, cfg.channels);
  const FusedTokens fused = fuse_pose_features(params, img, *frame.pose2d, cfg, k);
  const ValueId f_enc = encode(params, fused, cfg);

  LiftForward out;
  out.anchors = generate_anchors(params, *frame.pose2d, cfg, k);
  auto [w, o] = decode_anchors(params, out.anchors, f_enc, cfg);
  out.weights = w;
  out.offsets = o;
  out.pose = aggregate_joints(params, out.anchors, w, o, cfg, k, &out.depth_clamped);
  return out;
}

}  // namespace unipose
