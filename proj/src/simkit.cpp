#include "unipose/simkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unipose/rng.hpp"

namespace unipose {
namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

float f32(double v) { return static_cast<float>(v); }

// orthonormal frame with w as the third axis
void bone_frame(const Point3& w, Point3& u, Point3& v) {
  u = cross(w, std::fabs(w.z) < 0.9 ? Point3{0, 0, 1} : Point3{1, 0, 0}).normalized();
  v = cross(w, u);
}

}  // namespace

double bone_capsule_radius(int bone_index) {
  static const double radii[14] = {
      0.10,   // torso -> neck
      0.09,   // neck -> head
      0.06,   // neck -> r_shoulder
      0.06,   // neck -> l_shoulder
      0.045,  // upper arms
      0.045,
      0.04,   // forearms
      0.04,
      0.09,   // torso -> hips
      0.09,
      0.06,   // thighs
      0.06,
      0.05,   // shins
      0.05,
  };
  return radii[bone_index];
}

std::vector<Point3> render_cloud(const Pose3D& pose, const SkeletonTopology& topology,
                                 int n_points, double noise_sigma, uint64_t rng_seed) {
  if (n_points < 1) throw ConfigError("render_cloud: n_points must be >= 1");
  Rng rng(rng_seed);
  const int nb = topology.bone_count();

  // per-bone counts proportional to bone length (largest remainder)
  std::vector<double> lengths(nb);
  double total = 0.0;
  for (int b = 0; b < nb; ++b) {
    lengths[b] = bone_length(pose, topology, b);
    total += lengths[b];
  }
  std::vector<int> counts(nb, 0);
  if (total <= 0.0) {
    counts[0] = n_points;
  } else {
    std::vector<std::pair<double, int>> remainders(nb);
    int assigned = 0;
    for (int b = 0; b < nb; ++b) {
      const double exact = n_points * lengths[b] / total;
      counts[b] = static_cast<int>(exact);
      assigned += counts[b];
      remainders[b] = {exact - counts[b], b};
    }
    std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (int i = 0; i < n_points - assigned; ++i) counts[remainders[i % nb].second] += 1;
  }

  std::vector<Point3> cloud;
  cloud.reserve(n_points);
  for (int b = 0; b < nb; ++b) {
    const auto [pj, cj] = topology.bones[b];
    const Point3 p0 = pose.joints[pj];
    const Point3 p1 = pose.joints[cj];
    const double len = lengths[b];
    const double r = bone_capsule_radius(b);
    Point3 axis = len > 1e-12 ? (p1 - p0) * (1.0 / len) : Point3{0, 0, 1};
    Point3 u, v;
    bone_frame(axis, u, v);
    const double area_cyl = kTwoPi * r * len;
    const double area_sph = 2.0 * kTwoPi * r * r;  // both hemispheres
    for (int i = 0; i < counts[b]; ++i) {
      Point3 p;
      if (rng.uniform() * (area_cyl + area_sph) < area_cyl) {
        const double t = rng.uniform() * len;
        const double phi = rng.uniform() * kTwoPi;
        p = p0 + axis * t + (u * std::cos(phi) + v * std::sin(phi)) * r;
      } else {
        // uniform on a sphere, assigned to the matching end cap
        const double z = rng.uniform(-1.0, 1.0);
        const double phi = rng.uniform() * kTwoPi;
        const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
        const Point3 dir{s * std::cos(phi), s * std::sin(phi), z};
        const Point3 world = u * dir.x + v * dir.y + axis * dir.z;
        p = (world.dot(axis) >= 0.0 ? p1 : p0) + world * r;
      }
      if (noise_sigma > 0.0) {
        p.x += rng.normal(0.0, noise_sigma);
        p.y += rng.normal(0.0, noise_sigma);
        p.z += rng.normal(0.0, noise_sigma);
      }
      cloud.push_back({f32(p.x), f32(p.y), f32(p.z)});
    }
  }
  return cloud;
}

Pose2D synth_pose2d(const Pose3D& pose, const CameraIntrinsics& k, double pixel_sigma,
                    double outlier_rate, uint64_t rng_seed) {
  Rng rng(rng_seed);
  Pose2D out;
  out.joints.reserve(pose.joint_count());
  out.confidence.reserve(pose.joint_count());
  for (const Point3& j : pose.joints) {
    Pixel2D px = project(j, k);  // NonPositiveDepth propagates
    const bool outlier = rng.uniform() < outlier_rate;
    if (outlier) {
      px.u = rng.uniform(0.0, static_cast<double>(k.width));
      px.v = rng.uniform(0.0, static_cast<double>(k.height));
      out.confidence.push_back(0.1);
    } else {
      px.u += rng.normal(0.0, pixel_sigma);
      px.v += rng.normal(0.0, pixel_sigma);
      out.confidence.push_back(1.0);
    }
    out.joints.push_back(px);
  }
  return out;
}

namespace {

// heatmap channels shared by both modalities; peak amplitude attenuates with
// confidence (0.5 + 0.5*conf, so zero-confidence joints render at half peak)
void render_heatmaps(PyramidFeatures& out, const Pose2D& pose2d, const SimConfig& cfg,
                     Rng& rng, int extra_channels) {
  const int K = pose2d.joint_count();
  const int cpj = cfg.heatmap_channels_per_joint;
  const int channels = K * cpj + extra_channels;
  for (int l = 0; l < cfg.pyramid_levels; ++l) {
    PyramidFeatures::Level level;
    level.height = std::max(1, cfg.pyramid_base_height >> l);
    level.width = std::max(1, cfg.pyramid_base_width >> l);
    level.channels = channels;
    level.data.assign(static_cast<size_t>(level.height) * level.width * channels, 0.0f);
    const double sx = static_cast<double>(level.width) / cfg.image_width;
    const double sy = static_cast<double>(level.height) / cfg.image_height;
    const double sigma = cfg.heatmap_sigma;
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    for (int kj = 0; kj < K; ++kj) {
      const double gx = pose2d.joints[kj].u * sx;
      const double gy = pose2d.joints[kj].v * sy;
      const double amp = 0.5 + 0.5 * pose2d.confidence[kj];
      for (int y = 0; y < level.height; ++y) {
        for (int x = 0; x < level.width; ++x) {
          const double dx = x + 0.5 - gx;
          const double dy = y + 0.5 - gy;
          const double g = amp * std::exp(-(dx * dx + dy * dy) * inv2s2);
          for (int c = 0; c < cpj; ++c) {
            level.data[(static_cast<size_t>(y) * level.width + x) * channels +
                       kj * cpj + c] += f32(g);
          }
        }
      }
    }
    if (cfg.heatmap_noise > 0.0) {
      for (int y = 0; y < level.height; ++y)
        for (int x = 0; x < level.width; ++x)
          for (int c = 0; c < K * cpj; ++c) {
            auto& v = level.data[(static_cast<size_t>(y) * level.width + x) * channels + c];
            v = f32(v + rng.normal(0.0, cfg.heatmap_noise));
          }
    }
    out.levels.push_back(std::move(level));
  }
}

// smallest t >= 0 where the pixel ray touches the capsule around p0->p1
double ray_capsule_hit(const Ray3& ray, const Point3& p0, const Point3& p1, double r) {
  double best = 1e300;
  const Point3 seg = p1 - p0;
  const double len = seg.norm();
  const Point3 a = len > 1e-12 ? seg * (1.0 / len) : Point3{0, 0, 1};
  const Point3 m = ray.origin - p0;

  // infinite cylinder reduced to the plane orthogonal to the axis
  const Point3 dd = ray.direction - a * ray.direction.dot(a);
  const Point3 mm = m - a * m.dot(a);
  const double A = dd.dot(dd);
  if (A > 1e-14) {
    const double B = 2.0 * mm.dot(dd);
    const double C = mm.dot(mm) - r * r;
    const double disc = B * B - 4.0 * A * C;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      for (const double t : {(-B - sq) / (2.0 * A), (-B + sq) / (2.0 * A)}) {
        if (t < 0.0 || t >= best) continue;
        const double s = (m + ray.direction * t).dot(a);
        if (s >= 0.0 && s <= len) best = t;
      }
    }
  }
  // spherical caps
  for (const Point3& center : {p0, p1}) {
    const Point3 oc = ray.origin - center;
    const double B = 2.0 * oc.dot(ray.direction);
    const double C = oc.dot(oc) - r * r;
    const double disc = B * B - 4.0 * C;
    if (disc < 0.0) continue;
    const double sq = std::sqrt(disc);
    for (const double t : {(-B - sq) / 2.0, (-B + sq) / 2.0}) {
      if (t >= 0.0 && t < best) best = t;
    }
  }
  return best;
}

}  // namespace

std::vector<float> render_capsule_depth(const Pose3D& pose,
                                        const SkeletonTopology& topology,
                                        const CameraIntrinsics& k, int grid_h,
                                        int grid_w) {
  std::vector<float> depth(static_cast<size_t>(grid_h) * grid_w, 0.0f);
  const double sx = static_cast<double>(k.width) / grid_w;
  const double sy = static_cast<double>(k.height) / grid_h;
  for (int y = 0; y < grid_h; ++y) {
    for (int x = 0; x < grid_w; ++x) {
      const Pixel2D px{(x + 0.5) * sx, (y + 0.5) * sy};
      const Ray3 ray = back_project(px, k);
      double best = 1e300;
      for (int b = 0; b < topology.bone_count(); ++b) {
        const auto [pj, cj] = topology.bones[b];
        const double t = ray_capsule_hit(ray, pose.joints[pj], pose.joints[cj],
                                         bone_capsule_radius(b));
        best = std::min(best, t);
      }
      if (best < 1e300)
        depth[static_cast<size_t>(y) * grid_w + x] = f32(ray.direction.z * best);
    }
  }
  return depth;
}

PyramidFeatures synth_pyramid(const Pose2D& pose2d, const SimConfig& cfg,
                              uint64_t rng_seed) {
  if (cfg.pyramid_levels < 1) throw ConfigError("synth_pyramid: levels must be >= 1");
  Rng rng(rng_seed);
  PyramidFeatures out;
  render_heatmaps(out, pose2d, cfg, rng, 0);
  return out;
}

PyramidFeatures synth_depth_pyramid(const Pose2D& pose2d, const Pose3D& pose,
                                    const SkeletonTopology& topology,
                                    const SimConfig& cfg, uint64_t rng_seed) {
  if (cfg.pyramid_levels < 1) throw ConfigError("synth_depth_pyramid: levels must be >= 1");
  Rng rng(rng_seed);
  PyramidFeatures out;
  render_heatmaps(out, pose2d, cfg, rng, 1);
  const CameraIntrinsics k = cfg.intrinsics();
  for (auto& level : out.levels) {
    const std::vector<float> depth =
        render_capsule_depth(pose, topology, k, level.height, level.width);
    const int c = level.channels;
    for (int y = 0; y < level.height; ++y)
      for (int x = 0; x < level.width; ++x)
        level.data[(static_cast<size_t>(y) * level.width + x) * c + (c - 1)] =
            depth[static_cast<size_t>(y) * level.width + x];
  }
  return out;
}

SequenceDataset generate_dataset(const SimConfig& cfg, uint64_t rng_seed) {
  if (cfg.n_sequences < 1 || cfg.frames_per_sequence < 2)
    throw ConfigError("generate_dataset: need >= 1 sequence and >= 2 frames");
  if (cfg.motion_mode != "smooth" && cfg.motion_mode != "rigid_linear")
    throw ConfigError("generate_dataset: unknown motion_mode " + cfg.motion_mode);

  SequenceDataset ds;
  ds.config = cfg;
  ds.config.seed = rng_seed;
  ds.topology = default_topology();
  const CameraIntrinsics k = cfg.intrinsics();

  ds.sequences.resize(cfg.n_sequences);
  for (int s = 0; s < cfg.n_sequences; ++s) {
    std::vector<Pose3D> gt_frames;
    if (cfg.motion_mode == "smooth") {
      const Pose3D a = sample_pose(ds.topology, mix_seed(rng_seed, s, 1));
      const Pose3D b = sample_pose(ds.topology, mix_seed(rng_seed, s, 2));
      gt_frames = interpolate_motion(a, b, cfg.frames_per_sequence, cfg.frame_rate,
                                     ds.topology)
                      .frames;
    } else {
      const Pose3D a = sample_pose(ds.topology, mix_seed(rng_seed, s, 1));
      Rng vr(mix_seed(rng_seed, s, 3));
      const Point3 vel{vr.uniform(-0.01, 0.01), vr.uniform(-0.01, 0.01),
                       vr.uniform(-0.01, 0.01)};
      gt_frames.reserve(cfg.frames_per_sequence);
      for (int f = 0; f < cfg.frames_per_sequence; ++f) {
        Pose3D p = a;
        for (auto& j : p.joints) j = j + vel * static_cast<double>(f);
        gt_frames.push_back(std::move(p));
      }
    }

    auto& frames = ds.sequences[s];
    frames.resize(cfg.frames_per_sequence);
    for (int f = 0; f < cfg.frames_per_sequence; ++f) {
      Frame& frame = frames[f];
      frame.seq_index = s;
      frame.frame_index = f;
      const Pose3D& gt = gt_frames[f];
      const std::vector<Point3> pts = render_cloud(
          gt, ds.topology, cfg.n_points, cfg.cloud_noise_sigma, mix_seed(rng_seed, s, 100 + f));
      frame.cloud.reserve(pts.size() * 3);
      for (const Point3& p : pts) {
        frame.cloud.push_back(f32(p.x));
        frame.cloud.push_back(f32(p.y));
        frame.cloud.push_back(f32(p.z));
      }
      frame.pose2d = synth_pose2d(gt, k, cfg.pixel_sigma, cfg.outlier_rate,
                                  mix_seed(rng_seed, s, 10000 + f));
      frame.rgb_pyramid = synth_pyramid(frame.pose2d, cfg, mix_seed(rng_seed, s, 20000 + f));
      frame.depth_pyramid = synth_depth_pyramid(frame.pose2d, gt, ds.topology, cfg,
                                                mix_seed(rng_seed, s, 30000 + f));
      frame.set_ground_truth(gt);
    }
  }
  return ds;
}

}  // namespace unipose
