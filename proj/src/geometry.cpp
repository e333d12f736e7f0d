#include "unipose/geometry.hpp"

#include <algorithm>

namespace unipose {

Pixel2D project(const Point3& p, const CameraIntrinsics& k) {
  if (!(p.z > 0.0)) throw NonPositiveDepth("project: point depth must be > 0");
  return {k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy};
}

Ray3 back_project(const Pixel2D& c, const CameraIntrinsics& k) {
  const Point3 d{(c.u - k.cx) / k.fx, (c.v - k.cy) / k.fy, 1.0};
  return Ray3{{0.0, 0.0, 0.0}, d.normalized()};
}

double point_to_ray_distance(const Point3& p, const Ray3& r) {
  const Point3 rel = p - r.origin;
  const double t = std::max(rel.dot(r.direction), 0.0);
  return (rel - r.direction * t).norm();
}

std::optional<Point3> point_to_ray_distance_grad(const Point3& p, const Ray3& r) {
  const Point3 rel = p - r.origin;
  const double t = std::max(rel.dot(r.direction), 0.0);
  const Point3 residual = rel - r.direction * t;
  const double dist = residual.norm();
  if (dist < 1e-9) return std::nullopt;
  // For interior t the foot point moves with p along the ray, but that motion
  // is orthogonal to the residual, so the gradient is residual/dist in both
  // the clamped and unclamped cases.
  return residual * (1.0 / dist);
}

}  // namespace unipose
