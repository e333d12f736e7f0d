#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "unipose/rng.hpp"
#include "unipose/simkit.hpp"
#include "unipose/supervision.hpp"

using namespace unipose;

namespace {

CameraIntrinsics intr() {
  CameraIntrinsics k;
  k.fx = 500;
  k.fy = 500;
  k.cx = 320;
  k.cy = 240;
  k.width = 640;
  k.height = 480;
  return k;
}

Pose2D exact_projection(const Pose3D& pose, const CameraIntrinsics& k) {
  Pose2D out;
  for (const auto& j : pose.joints) {
    out.joints.push_back(project(j, k));
    out.confidence.push_back(1.0);
  }
  return out;
}

Pose3D single(Point3 p) {
  Pose3D pose;
  pose.joints = {p};
  return pose;
}

Pose2D single_px(double u, double v, double conf = 1.0) {
  Pose2D t;
  t.joints = {{u, v}};
  t.confidence = {conf};
  return t;
}

}  // namespace

TEST_CASE("loss weights default to 10, 1, 0.1, 0.1") {
  const LossWeights w;
  CHECK(w.lambda1 == 10.0);
  CHECK(w.lambda2 == 1.0);
  CHECK(w.lambda3 == 0.1);
  CHECK(w.lambda4 == 0.1);
}

TEST_CASE("ray loss: joints on their rays give zero") {
  const auto k = intr();
  Rng rng(3);
  Pose3D pose;
  Pose2D target;
  for (int i = 0; i < 8; ++i) {
    const Pixel2D c{rng.uniform(0, 640), rng.uniform(0, 480)};
    const Ray3 r = back_project(c, k);
    pose.joints.push_back(r.point_at(rng.uniform(1.0, 5.0)));
    target.joints.push_back(c);
    target.confidence.push_back(1.0);
  }
  const RayLoss l = loss_2d_ray(pose, target, k);
  CHECK(l.value == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ray loss closed form: D=5, mu=sqrt(125)") {
  const auto k = intr();
  // optical-axis ray; j=(3,4,10): D = 5, ||j|| = sqrt(125), loss = 1/sqrt(5)
  const RayLoss l = loss_2d_ray(single({3, 4, 10}), single_px(k.cx, k.cy), k);
  CHECK(l.per_joint_distance[0] == doctest::Approx(5.0));
  CHECK(l.value == doctest::Approx(0.44721359549995793).epsilon(1e-12));
}

TEST_CASE("ray loss is invariant to radial scaling through the origin") {
  const auto k = intr();
  const Pixel2D c{410.0, 180.0};
  const Point3 base{1.1, -0.4, 3.0};
  const double reference = loss_2d_ray(single(base), single_px(c.u, c.v), k).value;
  // the term equals sin of the angle between j and the ray
  const Ray3 r = back_project(c, k);
  const double cosang = base.normalized().dot(r.direction);
  CHECK(reference == doctest::Approx(std::sqrt(1.0 - cosang * cosang)).epsilon(1e-9));
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const double s = rng.uniform(0.1, 10.0);
    const double scaled = loss_2d_ray(single(base * s), single_px(c.u, c.v), k).value;
    CHECK(scaled == doctest::Approx(reference).epsilon(1e-10));
  }
}

TEST_CASE("ray loss throws NearZeroJoint under the norm guard") {
  const auto k = intr();
  CHECK_THROWS_AS(loss_2d_ray(single({0, 0, 1e-7}), single_px(100, 100), k),
                  NearZeroJoint);
}

TEST_CASE("norm guard: shrinking the norm on a fixed ray-distance contour blows up") {
  // a ray not through the origin holds D fixed while ||p|| shrinks
  const Ray3 r{{1.0, 0.0, 2.0}, {0, 0, 1}};
  double prev = 0.0;
  double norm = 0.5;  // points p = (0,0,0)+offset with D(p,r)=1 as p -> 0
  bool exceeded = false;
  for (int i = 0; i < 60; ++i) {
    const Point3 p{0.0, 0.0, norm};  // distance to the ray is 1 for z >= 2? no:
    // clamp: for p=(0,0,z) with z<2 the closest ray point is its origin
    // (1,0,2); D = sqrt(1+(2-z)^2) which stays >= 1 while ||p|| -> 0
    const double term = ray_loss_term(p, r);
    CHECK(term > prev);
    prev = term;
    if (term > 1e3) {
      exceeded = true;
      break;
    }
    norm *= 0.5;
    if (norm <= kNormEpsilon) break;
  }
  CHECK(exceeded);
}

TEST_CASE("baseline loss: exact projections and the optical-axis example give zero") {
  const auto k = intr();
  const auto t = default_topology();
  const Pose3D pose = sample_pose(t, 12);
  const Pose2D target = exact_projection(pose, k);
  CHECK(loss_rgb_baseline(pose, target, k).value == doctest::Approx(0.0));

  CHECK(loss_rgb_baseline(single({0, 0, 2}), single_px(320, 240), k).value ==
        doctest::Approx(0.0));
}

TEST_CASE("baseline loss: behind-camera joints pay the image diagonal with zero grad") {
  const auto k = intr();
  const PoseLoss l = loss_rgb_baseline(single({0.3, 0.1, -1.0}), single_px(100, 100), k);
  CHECK(l.value == doctest::Approx(std::hypot(640.0, 480.0)));
  CHECK(l.grad[0].x == 0.0);
  CHECK(l.grad[0].y == 0.0);
  CHECK(l.grad[0].z == 0.0);
}

TEST_CASE("spatial consistency: ray-symmetric pairs tie on ray loss, split on the baseline") {
  const auto k = intr();
  // deterministic family as in the geometry suite
  for (double du : {60.0, 150.0, 240.0}) {
    for (double d : {0.08, 0.3}) {
      for (double t : {2.5, 5.0}) {
        const Pixel2D c{k.cx + du, k.cy + 0.3 * du};
        const Ray3 r = back_project(c, k);
        Point3 n = cross(r.direction, Point3{0, 1, 0}).normalized();
        if (n.z < 0) n = n * -1.0;
        const Point3 q = r.point_at(t);
        const Point3 deep = q + n * d;
        const Point3 shallow = q - n * d;
        REQUIRE(deep.z > shallow.z);
        // equal norms by construction (the offset is orthogonal to q)
        REQUIRE(std::fabs(deep.norm() - shallow.norm()) < 1e-9);

        const double ray_deep = loss_2d_ray(single(deep), single_px(c.u, c.v), k).value;
        const double ray_shallow =
            loss_2d_ray(single(shallow), single_px(c.u, c.v), k).value;
        CHECK(std::fabs(ray_deep - ray_shallow) < 1e-12);

        const double base_deep =
            loss_rgb_baseline(single(deep), single_px(c.u, c.v), k).value;
        const double base_shallow =
            loss_rgb_baseline(single(shallow), single_px(c.u, c.v), k).value;
        CHECK(base_deep < base_shallow);  // nearer the axis in angle -> smaller
        CHECK(base_shallow - base_deep > 1e-6);
      }
    }
  }
}

TEST_CASE("loss_bone: constant lengths give zero; two-frame example gives 0.2") {
  const auto topo = default_topology();
  // rigid translation keeps lengths constant
  const Pose3D a = sample_pose(topo, 21);
  std::vector<Pose3D> rigid;
  for (int t = 0; t < 5; ++t) {
    Pose3D p = a;
    for (auto& j : p.joints) j.x += 0.02 * t;
    rigid.push_back(p);
  }
  CHECK(loss_bone(rigid, topo).value == doctest::Approx(0.0));

  // two frames, single bone of lengths 0.2 and 0.4
  SkeletonTopology one;
  one.joint_names = {"a", "b"};
  one.bones = {{0, 1}};
  one.rest_lengths = {0.3};
  Pose3D f0, f1;
  f0.joints = {{0, 0, 1}, {0, 0.2, 1}};
  f1.joints = {{0, 0, 1}, {0, 0.4, 1}};
  CHECK(loss_bone({f0, f1}, one).value == doctest::Approx(0.2));

  CHECK_THROWS_AS(loss_bone({f0}, one), SequenceTooShort);
}

TEST_CASE("loss_sym: mirror pose zero; 0.25 vs 0.30 forearms give 0.05") {
  const auto topo = default_topology();
  const Pose3D pose = sample_pose(topo, 33);  // FK lengths are symmetric
  CHECK(loss_sym(pose, topo).value == doctest::Approx(0.0).epsilon(1e-12));

  SkeletonTopology pair;
  pair.joint_names = {"c", "l", "r"};
  pair.bones = {{0, 1}, {0, 2}};
  pair.rest_lengths = {0.25, 0.30};
  pair.symmetric_pairs = {{0, 1}};
  Pose3D p;
  p.joints = {{0, 0, 2}, {0.25, 0, 2}, {-0.30, 0, 2}};
  CHECK(loss_sym(p, pair).value == doctest::Approx(0.05));

  // rigid rotation invariance
  Pose3D rot = p;
  for (auto& j : rot.joints) {
    const double x = j.x * std::cos(0.7) - j.y * std::sin(0.7);
    const double y = j.x * std::sin(0.7) + j.y * std::cos(0.7);
    j.x = x;
    j.y = y + 0.3;
  }
  CHECK(loss_sym(rot, pair).value == doctest::Approx(0.05));
}

TEST_CASE("loss_con: zero for linear and stationary motion; unit step example") {
  Pose3D a = single({0, 0, 1});
  Pose3D b = single({0.1, 0.2, 1.3});
  std::vector<Pose3D> lin;
  for (int t = 0; t < 6; ++t) {
    Pose3D p;
    p.joints = {a.joints[0] + (b.joints[0] - a.joints[0]) * (t / 5.0)};
    lin.push_back(p);
  }
  CHECK(loss_con(lin).value == doctest::Approx(0.0).epsilon(1e-12));

  std::vector<Pose3D> stat(4, a);
  CHECK(loss_con(stat).value == doctest::Approx(0.0));

  std::vector<Pose3D> step{single({0, 0, 0}), single({0, 0, 0}), single({0, 0, 1})};
  CHECK(loss_con(step).value == doctest::Approx(1.0));

  CHECK_THROWS_AS(loss_con({a, b}), SequenceTooShort);
}

TEST_CASE("self-supervision terms vanish exactly on noiseless rigid-linear sequences") {
  SimConfig cfg;
  cfg.n_sequences = 2;
  cfg.frames_per_sequence = 6;
  cfg.n_points = 64;
  cfg.cloud_noise_sigma = 0.0;
  cfg.pixel_sigma = 0.0;
  cfg.outlier_rate = 0.0;
  cfg.pyramid_base_height = 8;
  cfg.pyramid_base_width = 6;
  cfg.pyramid_levels = 1;
  cfg.motion_mode = "rigid_linear";
  const SequenceDataset ds = generate_dataset(cfg, 77);
  for (const auto& seq : ds.sequences) {
    std::vector<Pose3D> gt;
    for (const auto& f : seq) gt.push_back(f.evaluation_ground_truth());
    CHECK(loss_bone(gt, ds.topology).value <= 1e-12);
    CHECK(loss_con(gt).value <= 1e-12);
    for (const auto& p : gt) CHECK(loss_sym(p, ds.topology).value <= 1e-12);
  }
}

TEST_CASE("gradients of every loss match finite differences") {
  const auto k = intr();
  const auto topo = default_topology();
  const int K = topo.joint_count();
  const Pose3D base = sample_pose(topo, 55);
  const Pose2D target = synth_pose2d(base, k, 4.0, 0.2, 91);

  auto unpack = [K](const std::vector<double>& flat) {
    Pose3D p;
    p.joints.resize(K);
    for (int j = 0; j < K; ++j)
      p.joints[j] = {flat[j * 3], flat[j * 3 + 1], flat[j * 3 + 2]};
    return p;
  };
  auto flatten_grad = [K](const std::vector<Point3>& g) {
    std::vector<double> out(K * 3);
    for (int j = 0; j < K; ++j) {
      out[j * 3] = g[j].x;
      out[j * 3 + 1] = g[j].y;
      out[j * 3 + 2] = g[j].z;
    }
    return out;
  };

  std::vector<double> flat(K * 3);
  Rng rng(101);
  for (int j = 0; j < K; ++j) {
    // jitter off the ray so distances are nonzero and smooth
    flat[j * 3] = base.joints[j].x + rng.uniform(0.05, 0.2);
    flat[j * 3 + 1] = base.joints[j].y + rng.uniform(0.05, 0.2);
    flat[j * 3 + 2] = base.joints[j].z + rng.uniform(0.05, 0.2);
  }

  SUBCASE("ray loss under frozen denominators") {
    const Pose3D at = unpack(flat);
    std::vector<double> mu(K);
    for (int j = 0; j < K; ++j) mu[j] = at.joints[j].norm();
    std::vector<std::vector<double>> inputs{flat};
    gradcheck::check(inputs, [&](const std::vector<std::vector<double>>& in,
                                 std::vector<std::vector<double>>* grads) {
      const RayLoss l = loss_2d_ray_fixed_mu(unpack(in[0]), target, k, mu);
      if (grads) *grads = {flatten_grad(l.grad)};
      return l.value;
    });
  }

  SUBCASE("baseline loss") {
    std::vector<std::vector<double>> inputs{flat};
    gradcheck::check(inputs, [&](const std::vector<std::vector<double>>& in,
                                 std::vector<std::vector<double>>* grads) {
      const PoseLoss l = loss_rgb_baseline(unpack(in[0]), target, k);
      if (grads) *grads = {flatten_grad(l.grad)};
      return l.value;
    });
  }

  SUBCASE("symmetry loss") {
    std::vector<std::vector<double>> inputs{flat};
    gradcheck::check(inputs, [&](const std::vector<std::vector<double>>& in,
                                 std::vector<std::vector<double>>* grads) {
      const PoseLoss l = loss_sym(unpack(in[0]), topo);
      if (grads) *grads = {flatten_grad(l.grad)};
      return l.value;
    });
  }

  SUBCASE("bone and consistency losses over a short sequence") {
    // three frames with independent jitter
    std::vector<std::vector<double>> inputs;
    Rng r2(103);
    for (int t = 0; t < 3; ++t) {
      std::vector<double> f(flat);
      for (auto& v : f) v += r2.uniform(-0.07, 0.07);
      inputs.push_back(std::move(f));
    }
    auto eval_seq = [&](const std::vector<std::vector<double>>& in,
                        std::vector<std::vector<double>>* grads, bool bone) {
      std::vector<Pose3D> seq;
      for (const auto& f : in) seq.push_back(unpack(f));
      const SeqLoss l = bone ? loss_bone(seq, topo) : loss_con(seq);
      if (grads) {
        grads->clear();
        for (const auto& g : l.grad) grads->push_back(flatten_grad(g));
      }
      return l.value;
    };
    gradcheck::check(inputs, [&](const auto& in, auto* g) { return eval_seq(in, g, true); });
    gradcheck::check(inputs, [&](const auto& in, auto* g) { return eval_seq(in, g, false); });
  }

  SUBCASE("total loss combines components and gradients") {
    std::vector<std::vector<double>> inputs;
    Rng r2(105);
    for (int t = 0; t < 3; ++t) {
      std::vector<double> f(flat);
      for (auto& v : f) v += r2.uniform(-0.07, 0.07);
      inputs.push_back(std::move(f));
    }
    std::vector<Pose2D> targets(3, target);
    const LossWeights w;

    // frozen denominators per frame for the FD pass
    std::vector<std::vector<double>> mus;
    for (const auto& f : inputs) {
      const Pose3D p = unpack(f);
      std::vector<double> mu(K);
      for (int j = 0; j < K; ++j) mu[j] = p.joints[j].norm();
      mus.push_back(std::move(mu));
    }

    auto eval = [&](const std::vector<std::vector<double>>& in,
                    std::vector<std::vector<double>>* grads) {
      std::vector<Pose3D> seq;
      for (const auto& f : in) seq.push_back(unpack(f));
      const double inv_t = 1.0 / 3.0;
      double value = 0.0;
      std::vector<std::vector<Point3>> g(3, std::vector<Point3>(K, Point3{}));
      for (int t = 0; t < 3; ++t) {
        const RayLoss rl = loss_2d_ray_fixed_mu(seq[t], targets[t], k, mus[t]);
        value += w.lambda1 * rl.value * inv_t;
        const PoseLoss sl = loss_sym(seq[t], topo);
        value += w.lambda3 * sl.value * inv_t;
        for (int j = 0; j < K; ++j)
          g[t][j] = g[t][j] + rl.grad[j] * (w.lambda1 * inv_t) +
                    sl.grad[j] * (w.lambda3 * inv_t);
      }
      const SeqLoss bl = loss_bone(seq, topo);
      const SeqLoss cl = loss_con(seq);
      value += w.lambda2 * bl.value * inv_t + w.lambda4 * cl.value * inv_t;
      for (int t = 0; t < 3; ++t)
        for (int j = 0; j < K; ++j)
          g[t][j] = g[t][j] + bl.grad[t][j] * (w.lambda2 * inv_t) +
                    cl.grad[t][j] * (w.lambda4 * inv_t);
      if (grads) {
        grads->clear();
        for (const auto& gt : g) grads->push_back(flatten_grad(gt));
      }
      return value;
    };
    gradcheck::check(inputs, eval);

    // the production total agrees with the frozen-mu objective at the base point
    std::vector<Pose3D> seq;
    for (const auto& f : inputs) seq.push_back(unpack(f));
    const TotalLoss tl = total_loss(seq, targets, k, topo, w);
    CHECK(tl.report.total ==
          doctest::Approx(eval(inputs, nullptr)).epsilon(1e-12));
    CHECK(tl.report.total ==
          doctest::Approx(w.lambda1 * tl.report.l_2d + w.lambda2 * tl.report.l_bone +
                          w.lambda3 * tl.report.l_sym + w.lambda4 * tl.report.l_con)
              .epsilon(1e-12));
  }
}

TEST_CASE("total loss: all components zero gives zero total") {
  const auto k = intr();
  const auto topo = default_topology();
  // rigid-linear ground truth projected exactly: every term is at its zero
  const Pose3D a = sample_pose(topo, 61);
  std::vector<Pose3D> seq;
  std::vector<Pose2D> targets;
  for (int t = 0; t < 4; ++t) {
    Pose3D p = a;
    for (auto& j : p.joints) j.z += 0.01 * t;
    targets.push_back(exact_projection(p, k));
    seq.push_back(std::move(p));
  }
  const TotalLoss tl = total_loss(seq, targets, k, topo, LossWeights{});
  CHECK(tl.report.total <= 1e-10);
  CHECK(tl.report.l_2d <= 1e-11);
  CHECK(tl.report.l_bone <= 1e-12);
  CHECK(tl.report.l_sym <= 1e-12);
  CHECK(tl.report.l_con <= 1e-12);
}

TEST_CASE("total loss: disabled terms drop out of value and gradient") {
  const auto k = intr();
  const auto topo = default_topology();
  const Pose3D a = sample_pose(topo, 71);
  std::vector<Pose3D> seq{a, a, a};
  std::vector<Pose2D> targets(3, synth_pose2d(a, k, 3.0, 0.0, 72));
  SelfSupFlags off;
  off.bone = off.sym = off.con = false;
  const TotalLoss tl = total_loss(seq, targets, k, topo, LossWeights{},
                                  SupervisionManner::kRay2dTo3d, off);
  CHECK(tl.report.l_bone == 0.0);
  CHECK(tl.report.l_sym == 0.0);
  CHECK(tl.report.l_con == 0.0);
  CHECK(tl.report.total == doctest::Approx(10.0 * tl.report.l_2d));
}
