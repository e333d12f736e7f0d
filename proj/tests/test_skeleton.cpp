#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "unipose/rng.hpp"
#include "unipose/skeleton.hpp"

using namespace unipose;

TEST_CASE("default topology: 15 joints, 14 bones, full symmetry") {
  const auto t = default_topology();
  CHECK(t.joint_count() == 15);
  CHECK(t.bone_count() == 14);
  CHECK(t.symmetric_pairs.size() == 6);

  // tree check: every joint except the root has exactly one parent bone
  std::set<int> children;
  for (const auto& [p, c] : t.bones) {
    CHECK(p >= 0);
    CHECK(p < 15);
    CHECK(c >= 0);
    CHECK(c < 15);
    CHECK(children.insert(c).second);  // single parent
  }
  CHECK(children.size() == 14);
  CHECK(children.count(8) == 0);  // torso is the root

  // every left bone appears in exactly one pair; pairs reference distinct bones
  std::set<int> seen;
  for (const auto& [l, r] : t.symmetric_pairs) {
    CHECK(l != r);
    CHECK(seen.insert(l).second);
    CHECK(seen.insert(r).second);
    CHECK(t.rest_lengths[l] == doctest::Approx(t.rest_lengths[r]).epsilon(1e-15));
  }
  for (double len : t.rest_lengths) CHECK(len > 0.0);
}

TEST_CASE("sample_pose: exact rest lengths, determinism, frustum") {
  const auto t = default_topology();
  for (uint64_t seed : {1ull, 42ull, 987654321ull}) {
    const Pose3D pose = sample_pose(t, seed);
    REQUIRE(pose.joint_count() == 15);
    for (int b = 0; b < t.bone_count(); ++b) {
      CHECK(std::fabs(bone_length(pose, t, b) - t.rest_lengths[b]) < 1e-9);
    }
    for (const auto& j : pose.joints) {
      CHECK(j.z > 0.0);
      CHECK(std::isfinite(j.x));
    }
    const Pose3D again = sample_pose(t, seed);
    for (int k = 0; k < 15; ++k) {
      CHECK(pose.joints[k].x == again.joints[k].x);
      CHECK(pose.joints[k].y == again.joints[k].y);
      CHECK(pose.joints[k].z == again.joints[k].z);
    }
  }
}

TEST_CASE("bone_length: basic cases and rotation invariance") {
  const auto t = default_topology();
  Pose3D zero;
  zero.joints.assign(15, Point3{0, 0, 0});
  CHECK(bone_length(zero, t, 0) == doctest::Approx(0.0));

  Pose3D p = zero;
  p.joints[8] = {0, 0, 2};      // torso
  p.joints[1] = {0, 0.3, 2};    // neck; bone 0 is torso->neck
  CHECK(bone_length(p, t, 0) == doctest::Approx(0.3));

  // rigid rotation about the z axis preserves lengths
  const Pose3D pose = sample_pose(t, 7);
  Pose3D rot = pose;
  const double a = 0.83;
  for (auto& j : rot.joints) {
    const double x = j.x * std::cos(a) - j.y * std::sin(a);
    const double y = j.x * std::sin(a) + j.y * std::cos(a);
    j.x = x;
    j.y = y;
  }
  for (int b = 0; b < t.bone_count(); ++b)
    CHECK(bone_length(rot, t, b) == doctest::Approx(bone_length(pose, t, b)));
}

TEST_CASE("interpolate_motion: endpoints exact, n=2 degenerate") {
  const auto t = default_topology();
  const Pose3D a = sample_pose(t, 100);
  const Pose3D b = sample_pose(t, 200);

  const MotionSequence seq = interpolate_motion(a, b, 12, 15.0, t);
  REQUIRE(seq.frames.size() == 12);
  CHECK(seq.frame_rate == doctest::Approx(15.0));
  for (int k = 0; k < 15; ++k) {
    CHECK(std::fabs(seq.frames.front().joints[k].x - a.joints[k].x) < 1e-9);
    CHECK(std::fabs(seq.frames.front().joints[k].z - a.joints[k].z) < 1e-9);
    CHECK(std::fabs(seq.frames.back().joints[k].y - b.joints[k].y) < 1e-9);
  }

  const MotionSequence two = interpolate_motion(a, b, 2, 30.0, t);
  REQUIRE(two.frames.size() == 2);
  for (int k = 0; k < 15; ++k) {
    CHECK(two.frames[0].joints[k].x == a.joints[k].x);
    CHECK(two.frames[1].joints[k].x == b.joints[k].x);
  }

  CHECK_THROWS_AS(interpolate_motion(a, b, 1, 30.0, t), ConfigError);
}

TEST_CASE("interpolate_motion: bone lengths stay at rest throughout") {
  const auto t = default_topology();
  const Pose3D a = sample_pose(t, 5);
  const Pose3D b = sample_pose(t, 6);
  const MotionSequence seq = interpolate_motion(a, b, 30, 15.0, t);
  for (const auto& frame : seq.frames)
    for (int bn = 0; bn < t.bone_count(); ++bn)
      CHECK(std::fabs(bone_length(frame, t, bn) - t.rest_lengths[bn]) < 1e-9);
}

TEST_CASE("interpolate_motion: second differences bounded by the cubic's extremum") {
  // analytic oracle: with s(tau)=3t^2-2t^3, |s'|<=1.5 and |s''|<=6; for a
  // bone chain p(tau) = root(tau) + sum_b l_b(tau) d_b(tau) with slerp angle
  // theta_b and length lerp, per-joint ||p''|| is bounded by
  //   6*||droot|| + sum_b [ 6*|dl_b| + l_max*(6*theta_b + (1.5*theta_b)^2)
  //                         + 2*(1.5*|dl_b|)*(1.5*theta_b) ]
  // and a second difference of a C^2 curve obeys ||D2|| <= h^2 * max||p''||.
  const auto t = default_topology();
  const Pose3D a = sample_pose(t, 31);
  const Pose3D b = sample_pose(t, 32);
  const int n = 40;
  const MotionSequence seq = interpolate_motion(a, b, n, 15.0, t);

  // accumulate the bound along each joint's ancestor chain
  std::vector<double> bound(t.joint_count(), 0.0);
  const double droot = (b.joints[8] - a.joints[8]).norm();
  std::vector<int> parent_bone(t.joint_count(), -1);
  for (int bn = 0; bn < t.bone_count(); ++bn) parent_bone[t.bones[bn].second] = bn;
  for (int j = 0; j < t.joint_count(); ++j) {
    double acc = 6.0 * droot;
    int cur = j;
    while (parent_bone[cur] >= 0) {
      const int bn = parent_bone[cur];
      const auto [pj, cj] = t.bones[bn];
      const Point3 off_a = a.joints[cj] - a.joints[pj];
      const Point3 off_b = b.joints[cj] - b.joints[pj];
      const double la = off_a.norm(), lb = off_b.norm();
      const double dl = std::fabs(lb - la);
      const double lmax = std::max(la, lb);
      const double cosang =
          std::clamp(off_a.dot(off_b) / (la * lb), -1.0, 1.0);
      const double theta = std::acos(cosang);
      acc += 6.0 * dl + lmax * (6.0 * theta + 2.25 * theta * theta) +
             4.5 * dl * theta;
      cur = pj;
    }
    bound[j] = acc;
  }

  const double h = 1.0 / (n - 1);
  for (size_t f = 1; f + 1 < seq.frames.size(); ++f) {
    for (int j = 0; j < t.joint_count(); ++j) {
      const Point3 d2 = seq.frames[f + 1].joints[j] -
                        seq.frames[f].joints[j] * 2.0 + seq.frames[f - 1].joints[j];
      CHECK(d2.norm() <= bound[j] * h * h * 1.0001 + 1e-12);
    }
  }
}

TEST_CASE("interpolate_motion: per-frame displacement stays under the rate bound") {
  // smoothness property: displacement < max|s'| * (angle+shift budget) * h
  const auto t = default_topology();
  const Pose3D a = sample_pose(t, 77);
  const Pose3D b = sample_pose(t, 78);
  const int n = 25;
  const MotionSequence seq = interpolate_motion(a, b, n, 15.0, t);
  const double h = 1.0 / (n - 1);

  std::vector<int> parent_bone(t.joint_count(), -1);
  for (int bn = 0; bn < t.bone_count(); ++bn) parent_bone[t.bones[bn].second] = bn;
  const double droot = (b.joints[8] - a.joints[8]).norm();
  for (int j = 0; j < t.joint_count(); ++j) {
    double rate = droot;  // |s'|<=1.5 applied below
    int cur = j;
    while (parent_bone[cur] >= 0) {
      const int bn = parent_bone[cur];
      const auto [pj, cj] = t.bones[bn];
      const Point3 off_a = a.joints[cj] - a.joints[pj];
      const Point3 off_b = b.joints[cj] - b.joints[pj];
      const double la = off_a.norm(), lb = off_b.norm();
      const double cosang = std::clamp(off_a.dot(off_b) / (la * lb), -1.0, 1.0);
      rate += std::fabs(lb - la) + std::max(la, lb) * std::acos(cosang);
      cur = pj;
    }
    for (size_t f = 0; f + 1 < seq.frames.size(); ++f) {
      const double disp = (seq.frames[f + 1].joints[j] - seq.frames[f].joints[j]).norm();
      CHECK(disp <= 1.5 * rate * h * 1.0001 + 1e-12);
    }
  }
}
