#include "unipose/fusion.hpp"

#include <cmath>

namespace unipose {

using diff::Graph;
using diff::ParamBinder;
using diff::Tensor;
using diff::ValueId;

std::vector<int32_t> farthest_point_indices(const std::vector<float>& xyz, int m) {
  const int n = static_cast<int>(xyz.size() / 3);
  if (m > n) throw ShapeMismatch("farthest_point_indices: m exceeds point count");
  double cx = 0, cy = 0, cz = 0;
  for (int i = 0; i < n; ++i) {
    cx += xyz[i * 3];
    cy += xyz[i * 3 + 1];
    cz += xyz[i * 3 + 2];
  }
  cx /= n;
  cy /= n;
  cz /= n;

  std::vector<int32_t> out;
  out.reserve(m);
  std::vector<double> min_d(n, 1e300);
  int cur = 0;
  double best = -1.0;
  for (int i = 0; i < n; ++i) {
    const double dx = xyz[i * 3] - cx, dy = xyz[i * 3 + 1] - cy, dz = xyz[i * 3 + 2] - cz;
    const double d = dx * dx + dy * dy + dz * dz;
    if (d > best) {
      best = d;
      cur = i;
    }
  }
  out.push_back(cur);
  for (int pick = 1; pick < m; ++pick) {
    best = -1.0;
    int next = 0;
    for (int i = 0; i < n; ++i) {
      const double dx = xyz[i * 3] - xyz[cur * 3];
      const double dy = xyz[i * 3 + 1] - xyz[cur * 3 + 1];
      const double dz = xyz[i * 3 + 2] - xyz[cur * 3 + 2];
      const double d = dx * dx + dy * dy + dz * dz;
      if (d < min_d[i]) min_d[i] = d;
      if (min_d[i] > best) {
        best = min_d[i];
        next = i;
      }
    }
    out.push_back(next);
    cur = next;
  }
  return out;
}

std::vector<int32_t> nearest_selected_indices(const std::vector<float>& xyz,
                                              const std::vector<int32_t>& selected) {
  const int n = static_cast<int>(xyz.size() / 3);
  std::vector<int32_t> out(n, 0);
  for (int i = 0; i < n; ++i) {
    double best = 1e300;
    for (size_t s = 0; s < selected.size(); ++s) {
      const int j = selected[s];
      const double dx = xyz[i * 3] - xyz[j * 3];
      const double dy = xyz[i * 3 + 1] - xyz[j * 3 + 1];
      const double dz = xyz[i * 3 + 2] - xyz[j * 3 + 2];
      const double d = dx * dx + dy * dy + dz * dz;
      if (d < best) {
        best = d;
        out[i] = static_cast<int32_t>(s);
      }
    }
  }
  return out;
}

std::vector<int64_t> pyramid_flat_sizes(const SimConfig& sim, bool depth_modality) {
  std::vector<int64_t> sizes;
  const int channels = 15 * sim.heatmap_channels_per_joint + (depth_modality ? 1 : 0);
  for (int l = 0; l < sim.pyramid_levels; ++l) {
    const int64_t h = std::max(1, sim.pyramid_base_height >> l);
    const int64_t w = std::max(1, sim.pyramid_base_width >> l);
    sizes.push_back(h * w * channels);
  }
  return sizes;
}

void init_projector_params(diff::ParamStore& store, const std::string& prefix,
                           const std::vector<int64_t>& level_sizes, int64_t tokens,
                           int code_width, int channels, Rng& rng) {
  using Init = diff::ParamStore::Init;
  for (size_t l = 0; l < level_sizes.size(); ++l) {
    store.create(prefix + "/level" + std::to_string(l) + "/w",
                 {level_sizes[l], code_width}, Init::kXavierUniform, rng);
    store.create(prefix + "/level" + std::to_string(l) + "/b", {1, code_width},
                 Init::kZeros, rng);
  }
  const int64_t code = static_cast<int64_t>(level_sizes.size()) * code_width;
  store.create(prefix + "/final/w", {code, tokens * channels}, Init::kXavierUniform,
               rng);
  store.create(prefix + "/final/b", {1, channels}, Init::kZeros, rng);
}

namespace {

void init_align(diff::ParamStore& store, const std::string& prefix,
                const FusionConfig& cfg, Rng& rng) {
  using Init = diff::ParamStore::Init;
  const int64_t c = cfg.channels;
  for (const char* n : {"wq", "wk", "wv", "wo"})
    store.create(prefix + "/" + n, {c, c}, Init::kXavierUniform, rng);
  Tensor gamma({1, c});
  for (auto& v : gamma.data) v = 1.0;
  store.create_with(prefix + "/ln/gamma", std::move(gamma));
  store.create(prefix + "/ln/beta", {1, c}, Init::kZeros, rng);
}

}  // namespace

void init_stage1_params(diff::ParamStore& store, const FusionConfig& cfg,
                        const SimConfig& sim, int joint_count, Rng& rng) {
  using Init = diff::ParamStore::Init;
  const int64_t c = cfg.channels;
  const int64_t tokens = cfg.encoder_tokens();

  store.create("s1/pe/w1", {4, c}, Init::kXavierUniform, rng);
  store.create("s1/pe/b1", {1, c}, Init::kZeros, rng);
  store.create("s1/pe/w2", {c, c}, Init::kXavierUniform, rng);
  store.create("s1/pe/b2", {1, c}, Init::kZeros, rng);
  store.create("s1/pe/w3", {2 * c, c}, Init::kXavierUniform, rng);
  store.create("s1/pe/b3", {1, c}, Init::kZeros, rng);

  // depth modality aligned in the first encoder, RGB in the second
  init_projector_params(store, "s1/proj/depth", pyramid_flat_sizes(sim, true), tokens,
                        cfg.code_width, cfg.channels, rng);
  init_projector_params(store, "s1/proj/rgb", pyramid_flat_sizes(sim, false), tokens,
                        cfg.code_width, cfg.channels, rng);
  for (const char* stage : {"stage0", "stage1"}) {
    const std::string p = std::string("s1/") + stage;
    store.create(p + "/enc/w", {c, c}, Init::kXavierUniform, rng);
    store.create(p + "/enc/b", {1, c}, Init::kZeros, rng);
    init_align(store, p + "/align", cfg, rng);
    store.create(p + "/dec/w", {2 * c, c}, Init::kXavierUniform, rng);
    store.create(p + "/dec/b", {1, c}, Init::kZeros, rng);
  }

  // point-voting head: per-point logits and offsets per joint; joints are
  // weighted ensembles of cloud points plus offsets, which ties depth to the
  // observed geometry instead of leaving it free along the supervision rays
  store.create("s1/head/w1", {c, c}, Init::kXavierUniform, rng);
  store.create("s1/head/b1", {1, c}, Init::kZeros, rng);
  store.create("s1/vote/w_logit", {c, joint_count}, Init::kXavierUniform, rng);
  store.create("s1/vote/b_logit", {1, joint_count}, Init::kZeros, rng);
  store.create("s1/vote/w_offset", {c, joint_count * 3}, Init::kXavierUniform, rng);
  store.create("s1/vote/b_offset", {1, joint_count * 3}, Init::kZeros, rng);
  // zero-init gate on the ray-proximity bias: pose guidance is learnable,
  // so an untrained network votes uniformly
  store.create("s1/vote/gate", {1, joint_count}, Init::kZeros, rng);
}

ValueId adaptive_project(ParamBinder& params, const PyramidFeatures& pyramid,
                         const std::string& prefix, int64_t n_points, int channels) {
  Graph& g = params.graph();
  ValueId codes = -1;
  for (int l = 0; l < pyramid.level_count(); ++l) {
    const auto& level = pyramid.levels[l];
    Tensor flat({1, static_cast<int64_t>(level.data.size())});
    for (size_t i = 0; i < level.data.size(); ++i) flat.data[i] = level.data[i];
    const std::string lp = prefix + "/level" + std::to_string(l);
    const ValueId code = diff::linear(g, g.constant(std::move(flat)), params(lp + "/w"),
                                      params(lp + "/b"));
    codes = (l == 0) ? code : g.concat(codes, code, 1);
  }
  const ValueId block = g.matmul(codes, params(prefix + "/final/w"));
  const ValueId grid = g.reshape(block, {n_points, channels});
  return g.add_rowvec(grid, params(prefix + "/final/b"));
}

ValueId dynamic_align(ParamBinder& params, ValueId point_feats, ValueId img_feats,
                      const std::string& prefix) {
  Graph& g = params.graph();
  const ValueId q = g.matmul(point_feats, params(prefix + "/wq"));
  const ValueId k = g.matmul(img_feats, params(prefix + "/wk"));
  const ValueId v = g.matmul(img_feats, params(prefix + "/wv"));
  const ValueId att = diff::attention(g, q, k, v);
  const ValueId mixed = g.add(point_feats, g.matmul(att, params(prefix + "/wo")));
  return g.layer_norm(mixed, params(prefix + "/ln/gamma"), params(prefix + "/ln/beta"));
}

ValueId point_branch_forward(ParamBinder& params, const FrameInputs& frame,
                             const FusionConfig& cfg, int joint_count,
                             const CameraIntrinsics& intrinsics) {
  Graph& g = params.graph();
  const std::vector<float>& cloud = *frame.cloud;
  const int total = static_cast<int>(cloud.size() / 3);
  if (total < 1) throw ShapeMismatch("point_branch_forward: empty cloud");
  const int used = cfg.points_used > 0 ? std::min(cfg.points_used, total) : total;

  double cx = 0, cy = 0, cz = 0;
  for (int i = 0; i < total; ++i) {
    cx += cloud[i * 3];
    cy += cloud[i * 3 + 1];
    cz += cloud[i * 3 + 2];
  }
  cx /= total;
  cy /= total;
  cz /= total;

  const std::vector<int32_t> pick =
      (used < total) ? farthest_point_indices(cloud, used)
                     : [total] {
                         std::vector<int32_t> all(total);
                         for (int i = 0; i < total; ++i) all[i] = i;
                         return all;
                       }();

  std::vector<float> sub_xyz(used * 3);
  Tensor feats({used, 4});
  for (int i = 0; i < used; ++i) {
    const int src = pick[i];
    for (int d = 0; d < 3; ++d) sub_xyz[i * 3 + d] = cloud[src * 3 + d];
    feats.at(i, 0) = cloud[src * 3] - cx;
    feats.at(i, 1) = cloud[src * 3 + 1] - cy;
    feats.at(i, 2) = cloud[src * 3 + 2] - cz;
    feats.at(i, 3) = cloud[src * 3 + 2];
  }

  diff::PointEncoderParams pe{params("s1/pe/w1"), params("s1/pe/b1"),
                              params("s1/pe/w2"), params("s1/pe/b2"),
                              params("s1/pe/w3"), params("s1/pe/b3")};
  ValueId x = diff::point_encoder(g, g.constant(std::move(feats)), pe).per_point;

  const int tokens = std::max(1, used / cfg.encoder_factor);
  const std::vector<int32_t> enc_pick = farthest_point_indices(sub_xyz, tokens);
  const std::vector<int32_t> up_idx = nearest_selected_indices(sub_xyz, enc_pick);

  const PyramidFeatures* pyramids[2] = {frame.depth_pyramid, frame.rgb_pyramid};
  const char* proj_prefix[2] = {"s1/proj/depth", "s1/proj/rgb"};
  for (int stage = 0; stage < 2; ++stage) {
    const std::string sp = "s1/stage" + std::to_string(stage);
    ValueId enc = diff::linear_relu(g, g.gather_rows(x, enc_pick), params(sp + "/enc/w"),
                                    params(sp + "/enc/b"));
    if (cfg.enable_align) {
      const ValueId img = adaptive_project(params, *pyramids[stage], proj_prefix[stage],
                                           tokens, cfg.channels);
      enc = dynamic_align(params, enc, img, sp + "/align");
    }
    const ValueId up = g.gather_rows(enc, up_idx);
    x = diff::linear_relu(g, g.concat(x, up, 1), params(sp + "/dec/w"),
                          params(sp + "/dec/b"));
  }

  const ValueId h = diff::linear_relu(g, x, params("s1/head/w1"), params("s1/head/b1"));
  ValueId logits =
      diff::linear(g, h, params("s1/vote/w_logit"), params("s1/vote/b_logit"));
  if (frame.pose2d && intrinsics.valid()) {
    // pose-guided vote bias: Gaussian proximity of each point to the joint's
    // back-projected ray, scaled by the 2D confidence, behind a learned gate
    constexpr double kRaySigma = 0.15;  // meters
    Tensor proximity({used, joint_count});
    for (int j = 0; j < joint_count; ++j) {
      const Ray3 ray = back_project(frame.pose2d->joints[j], intrinsics);
      const double conf = frame.pose2d->confidence[j];
      for (int i = 0; i < used; ++i) {
        const Point3 p{sub_xyz[i * 3], sub_xyz[i * 3 + 1], sub_xyz[i * 3 + 2]};
        const double d = point_to_ray_distance(p, ray);
        proximity.at(i, j) =
            conf * std::exp(-d * d / (2.0 * kRaySigma * kRaySigma));
      }
    }
    // the 30x reparameterization gives the single gate per joint a step size
    // comparable to the full logit matrix, so descent reaches the pose-guided
    // voting basin instead of a diffuse on-ray mixture
    const ValueId bias = g.scale(g.mul(g.constant(std::move(proximity)),
                                       g.tile_rows(params("s1/vote/gate"), used)),
                                 30.0);
    logits = g.add(logits, bias);
  }
  const ValueId vote_w = g.softmax(logits, 0);  // per joint over points
  // damped offsets keep predictions near the voted cloud points; the votes
  // carry the depth, the offsets only correct surface-to-bone-center
  const ValueId offsets = g.reshape(
      g.scale(diff::linear(g, h, params("s1/vote/w_offset"), params("s1/vote/b_offset")),
              0.2),
      {used, joint_count, 3});

  Tensor points({used, 3});
  for (int i = 0; i < used; ++i)
    for (int d = 0; d < 3; ++d) points.at(i, d) = sub_xyz[i * 3 + d];
  const ValueId bases = g.matmul(g.transpose(vote_w), g.constant(std::move(points)));
  return g.add(bases, g.weighted_offset_sum(vote_w, offsets));
}

Pose3D pose_from_tensor(const Tensor& t) {
  if (t.rank() != 2 || t.shape[1] != 3)
    throw ShapeMismatch("pose_from_tensor: (K,3) required");
  Pose3D p;
  p.joints.resize(t.shape[0]);
  for (int64_t j = 0; j < t.shape[0]; ++j)
    p.joints[j] = {t.at(j, 0), t.at(j, 1), t.at(j, 2)};
  return p;
}

}  // namespace unipose
