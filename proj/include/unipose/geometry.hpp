#pragma once

#include <cmath>
#include <optional>

#include "unipose/errors.hpp"

namespace unipose {

struct Point3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Point3 operator+(const Point3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Point3 operator-(const Point3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Point3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Point3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(x * x + y * y + z * z); }
  Point3 normalized() const {
    const double n = norm();
    return {x / n, y / n, z / n};
  }
};

inline Point3 cross(const Point3& a, const Point3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

struct Pixel2D {
  double u = 0.0, v = 0.0;
};

// Pinhole model; the camera frame is the world frame (single-view setting).
struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;
  int width = 0, height = 0;

  bool valid() const {
    return fx > 0.0 && fy > 0.0 && cx >= 0.0 && cx < width && cy >= 0.0 &&
           cy < height;
  }
};

// Half-line from `origin` along unit `direction` (t >= 0). Back-projected
// pixel rays start at the camera center; a predicted joint behind the camera
// is penalized by its distance to the origin rather than rewarded.
struct Ray3 {
  Point3 origin;
  Point3 direction;  // unit norm within 1e-12

  Point3 point_at(double t) const { return origin + direction * t; }
};

Pixel2D project(const Point3& p, const CameraIntrinsics& k);
Ray3 back_project(const Pixel2D& c, const CameraIntrinsics& k);

double point_to_ray_distance(const Point3& p, const Ray3& r);

// Gradient of point_to_ray_distance with respect to p. Degenerate (distance
// below 1e-9) yields nullopt; callers substitute the zero vector.
std::optional<Point3> point_to_ray_distance_grad(const Point3& p, const Ray3& r);

}  // namespace unipose
