#pragma once

#include <optional>
#include <variant>
#include <vector>

#include "activesplat/scene.hpp"

namespace activesplat {

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
};

struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
};

/// Axis-aligned box.
struct Box {
  Vec3 min = Vec3::Constant(-0.5);
  Vec3 max = Vec3::Constant(0.5);
};

/// Torus around the world z axis through `center`.
struct Torus {
  Vec3 center = Vec3::Zero();
  double major_radius = 1.0;
  double minor_radius = 0.25;
};

struct Triangle {
  Vec3 a, b, c;
};

using Shape = std::variant<Sphere, Box, Torus, Triangle>;

struct SurfaceHit {
  double distance = 0.0;  // along the unit ray direction
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::Zero();  // facing the ray origin
};

std::optional<SurfaceHit> intersect(const Shape& shape, const Ray& ray, double t_min = 1e-9);

struct Surface {
  Shape shape;
  Vec3 albedo = Vec3::Constant(0.7);
  int object_id = 0;
  /// Checkerboard texture cell size in metres; 0 disables the texture.
  double checker = 0.0;
};

struct WorldHit {
  SurfaceHit hit;
  int surface = -1;
  int object_id = -1;
};

/// Ground-truth geometry: a set of surfaces, each tagged with an object id.
struct World {
  std::vector<Surface> surfaces;

  std::optional<WorldHit> cast(const Ray& ray, double max_distance = 1e30) const;
  /// Shaded albedo of a hit (Lambertian with a fixed key light plus ambient).
  Vec3 shade(const WorldHit& hit) const;
};

/// World-space ray through pixel (x, y) of a camera (pose_delta ignored).
Ray camera_ray(const CameraView& cam, double x, double y);

/// First-hit depth per pixel: camera-frame z for pinhole cameras, distance along
/// the ray for fisheye cameras; NaN on a miss.
Image render_depth_raycast(const World& world, const CameraView& cam);

/// Ground-truth renders for one camera.
struct GroundTruthRender {
  Image color;      // shaded, background where nothing is hit
  Image depth;      // same convention as render_depth_raycast
  Image object_id;  // -1 where nothing is hit
};

GroundTruthRender render_ground_truth(const World& world, const CameraView& cam, const Vec3& background);

}  // namespace activesplat
