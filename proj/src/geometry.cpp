#include "activesplat/geometry.hpp"

#include <cmath>
#include <limits>

namespace activesplat {

namespace {


SurfaceHit make_hit(const Ray& ray, double t, Vec3 normal) {
  if (normal.dot(ray.direction) > 0.0) normal = -normal;
  return {t, ray.origin + t * ray.direction, normal};
}

std::optional<SurfaceHit> hit_sphere(const Sphere& s, const Ray& ray, double t_min) {
  const Vec3 oc = ray.origin - s.center;
  const double b = oc.dot(ray.direction);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t < t_min) t = -b + sq;
  if (t < t_min) return std::nullopt;
  const Vec3 p = ray.origin + t * ray.direction;
  return make_hit(ray, t, (p - s.center) / s.radius);
}

std::optional<SurfaceHit> hit_box(const Box& box, const Ray& ray, double t_min) {
  double t0 = -std::numeric_limits<double>::infinity();
  double t1 = std::numeric_limits<double>::infinity();
  int axis0 = -1, axis1 = -1;
  for (int a = 0; a < 3; ++a) {
    const double d = ray.direction[a];
    const double o = ray.origin[a];
    if (std::abs(d) < 1e-300) {
      if (o < box.min[a] || o > box.max[a]) return std::nullopt;
      continue;
    }
    double ta = (box.min[a] - o) / d;
    double tb = (box.max[a] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) { t0 = ta; axis0 = a; }
    if (tb < t1) { t1 = tb; axis1 = a; }
    if (t0 > t1) return std::nullopt;
  }
  double t = t0;
  int axis = axis0;
  if (t < t_min) {
    t = t1;
    axis = axis1;
  }
  if (t < t_min || axis < 0) return std::nullopt;
  Vec3 n = Vec3::Zero();
  n[axis] = 1.0;
  return make_hit(ray, t, n);
}

double torus_sdf(const Torus& tor, const Vec3& p) {
  const Vec3 d = p - tor.center;
  const double ring = std::hypot(d.x(), d.y()) - tor.major_radius;
  return std::hypot(ring, d.z()) - tor.minor_radius;
}

std::optional<SurfaceHit> hit_torus(const Torus& tor, const Ray& ray, double t_min) {
  // Sphere tracing inside the bounding sphere; the SDF is exact.
  const Sphere bound{tor.center, tor.major_radius + tor.minor_radius};
  const Vec3 oc = ray.origin - bound.center;
  const double b = oc.dot(ray.direction);
  const double c = oc.squaredNorm() - bound.radius * bound.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  double t = std::max(t_min, -b - sq);
  const double t_end = -b + sq;
  if (torus_sdf(tor, ray.origin + t * ray.direction) < 0.0) return std::nullopt;
  for (int it = 0; it < 2000 && t <= t_end; ++it) {
    const double d = torus_sdf(tor, ray.origin + t * ray.direction);
    if (d < 1e-12) {
      const Vec3 p = ray.origin + t * ray.direction;
      const Vec3 rel = p - tor.center;
      Vec3 core(rel.x(), rel.y(), 0.0);
      const double rn = core.norm();
      core = rn > 0.0 ? Vec3(core * (tor.major_radius / rn)) : Vec3(tor.major_radius, 0.0, 0.0);
      return make_hit(ray, t, (rel - core).normalized());
    }
    t += d;
  }
  return std::nullopt;
}

std::optional<SurfaceHit> hit_triangle(const Triangle& tri, const Ray& ray, double t_min) {
  const Vec3 e1 = tri.b - tri.a;
  const Vec3 e2 = tri.c - tri.a;
  const Vec3 p = ray.direction.cross(e2);
  const double det = e1.dot(p);
  if (std::abs(det) < 1e-15) return std::nullopt;
  const double inv = 1.0 / det;
  const Vec3 s = ray.origin - tri.a;
  const double u = s.dot(p) * inv;
  if (u < 0.0 || u > 1.0) return std::nullopt;
  const Vec3 q = s.cross(e1);
  const double v = ray.direction.dot(q) * inv;
  if (v < 0.0 || u + v > 1.0) return std::nullopt;
  const double t = e2.dot(q) * inv;
  if (t < t_min) return std::nullopt;
  return make_hit(ray, t, e1.cross(e2).normalized());
}

}  // namespace

std::optional<SurfaceHit> intersect(const Shape& shape, const Ray& ray, double t_min) {
  return std::visit(
      [&](const auto& s) -> std::optional<SurfaceHit> {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Sphere>) return hit_sphere(s, ray, t_min);
        else if constexpr (std::is_same_v<T, Box>) return hit_box(s, ray, t_min);
        else if constexpr (std::is_same_v<T, Torus>) return hit_torus(s, ray, t_min);
        else return hit_triangle(s, ray, t_min);
      },
      shape);
}

std::optional<WorldHit> World::cast(const Ray& ray, double max_distance) const {
  std::optional<WorldHit> best;
  for (std::size_t i = 0; i < surfaces.size(); ++i) {
    auto h = intersect(surfaces[i].shape, ray);
    if (!h || h->distance > max_distance) continue;
    if (!best || h->distance < best->hit.distance) {
      best = WorldHit{*h, static_cast<int>(i), surfaces[i].object_id};
    }
  }
  return best;
}

Vec3 World::shade(const WorldHit& hit) const {
  const Surface& s = surfaces.at(static_cast<std::size_t>(hit.surface));
  Vec3 albedo = s.albedo;
  if (s.checker > 0.0) {
    const Vec3 cell = (hit.hit.point / s.checker).array().floor();
    const long parity = static_cast<long>(cell.x() + cell.y() + cell.z());
    if (parity % 2 != 0) albedo *= 0.55;
  }
  static const Vec3 light = Vec3(0.35, -0.45, 0.82).normalized();
  const double diffuse = std::max(0.0, hit.hit.normal.dot(light));
  return (albedo * (0.35 + 0.65 * diffuse)).cwiseMin(1.0).cwiseMax(0.0);
}

Ray camera_ray(const CameraView& cam, double x, double y) {
  const Vec3 d_cam = cam.pixel_ray(x, y);
  return {cam.pose.center(), cam.pose.R.transpose() * d_cam};
}

Image render_depth_raycast(const World& world, const CameraView& cam) {
  return render_ground_truth(world, cam, Vec3::Zero()).depth;
}

GroundTruthRender render_ground_truth(const World& world, const CameraView& cam, const Vec3& background) {
  const int W = cam.intrinsics.width, H = cam.intrinsics.height;
  GroundTruthRender out{Image(W, H, 3), Image::nan_like(W, H), Image(W, H, 1, -1.0)};
  const Vec3 origin = cam.pose.center();
  const Mat3 Rt = cam.pose.R.transpose();
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const Vec3 d_cam = cam.pixel_ray(x, y);
      Vec3 color = background;
      if (cam.model == ProjectionModel::pinhole || std::isfinite(d_cam.z())) {
        const auto hit = world.cast({origin, Rt * d_cam});
        if (hit) {
          out.depth.at(x, y) =
              cam.model == ProjectionModel::pinhole ? hit->hit.distance * d_cam.z() : hit->hit.distance;
          out.object_id.at(x, y) = hit->object_id;
          color = world.shade(*hit);
        }
      }
      for (int c = 0; c < 3; ++c) out.color.at(x, y, c) = color[c];
    }
  }
  return out;
}

}  // namespace activesplat
