#pragma once

// Reference implementations written independently of the library, used as
// oracles by the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "activesplat/scene.hpp"

namespace oracle {

using activesplat::CameraView;
using activesplat::Gaussian3D;
using activesplat::SceneModel;
using activesplat::Vec3;

struct RayResult {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  double alpha = 0.0;
  double mask = 0.0;
};

struct Projected {
  int index;
  double z;
  double mx, my;
  Eigen::Matrix2d cov;
  double opacity;
  Vec3 color;
  double mask;
};

inline double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline Eigen::Matrix3d rot_from_quat(Eigen::Vector4d q) {
  q /= q.norm();
  Eigen::Quaterniond e(q[0], q[1], q[2], q[3]);
  return e.toRotationMatrix();
}

inline Eigen::Matrix3d rodrigues(const Vec3& w) {
  const double th = w.norm();
  if (th == 0.0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(th, w / th).toRotationMatrix();
}

// EWA projection with the pose correction (v, omega) applied as
// p_cam = Exp(omega) (R p + t) + v.
inline std::vector<Projected> project_all(const SceneModel& scene, const CameraView& cam, double dilation = 0.3) {
  const Eigen::Matrix3d Rd = rodrigues(cam.pose_delta.tail<3>());
  const Eigen::Matrix3d W = Rd * cam.pose.R;
  const Vec3 t = Rd * cam.pose.t + cam.pose_delta.head<3>();
  const auto& K = cam.intrinsics;
  std::vector<Projected> out;
  for (std::size_t i = 0; i < scene.gaussians.size(); ++i) {
    const Gaussian3D& g = scene.gaussians[i];
    const Vec3 p = W * g.mean + t;
    if (p.z() <= 0.01) continue;
    const Eigen::Matrix3d R = rot_from_quat(g.rotation);
    Eigen::Matrix3d S = Eigen::Matrix3d::Zero();
    for (int k = 0; k < 3; ++k) S(k, k) = std::exp(g.log_scale[k]);
    const Eigen::Matrix3d sigma = R * S * S * R.transpose();
    Eigen::Matrix<double, 2, 3> J;
    J << K.fx / p.z(), 0, -K.fx * p.x() / (p.z() * p.z()), 0, K.fy / p.z(), -K.fy * p.y() / (p.z() * p.z());
    Eigen::Matrix2d c = J * W * sigma * W.transpose() * J.transpose();
    c(0, 0) += dilation;
    c(1, 1) += dilation;
    if (c.determinant() < 1e-12) continue;
    out.push_back({static_cast<int>(i), p.z(), K.fx * p.x() / p.z() + K.cx, K.fy * p.y() / p.z() + K.cy, c,
                   sig(g.opacity_logit), g.color, sig(g.mask_logit)});
  }
  std::stable_sort(out.begin(), out.end(), [](const Projected& a, const Projected& b) { return a.z < b.z; });
  return out;
}

// Eq. 1 evaluated along one pixel ray, front to back.
inline RayResult composite_ray(const std::vector<Projected>& splats, double px, double py,
                               double alpha_min = 1e-12, double t_min = 1e-4) {
  RayResult r;
  double T = 1.0;
  for (const auto& s : splats) {
    if (T < t_min) break;
    const Eigen::Vector2d d(px - s.mx, py - s.my);
    const double a = s.opacity * std::exp(-0.5 * d.dot(s.cov.inverse() * d));
    if (a < alpha_min) continue;
    r.color += a * T * s.color;
    r.depth += a * T * s.z;
    r.mask += a * T * s.mask;
    r.alpha += a * T;
    T *= 1.0 - a;
  }
  return r;
}

// The same composite evaluated back to front with the "over" operator. Only
// valid when the transmittance cut-off never triggers.
inline RayResult composite_ray_back_to_front(const std::vector<Projected>& splats, double px, double py) {
  RayResult r;
  for (auto it = splats.rbegin(); it != splats.rend(); ++it) {
    const Eigen::Vector2d d(px - it->mx, py - it->my);
    const double a = it->opacity * std::exp(-0.5 * d.dot(it->cov.inverse() * d));
    if (a < 1e-12) continue;
    r.color = a * it->color + (1 - a) * r.color;
    r.depth = a * it->z + (1 - a) * r.depth;
    r.mask = a * it->mask + (1 - a) * r.mask;
    r.alpha = a + (1 - a) * r.alpha;
  }
  return r;
}

// Least squares by brute force over a (scale, offset) grid.
struct GridFit {
  double scale, offset, cost;
};

inline GridFit grid_search_affine(const std::vector<double>& mono, const std::vector<double>& sensor, double s_lo,
                                  double s_hi, double t_lo, double t_hi, int n = 201) {
  GridFit best{0, 0, std::numeric_limits<double>::infinity()};
  for (int i = 0; i < n; ++i) {
    const double s = s_lo + (s_hi - s_lo) * i / (n - 1);
    for (int j = 0; j < n; ++j) {
      const double t = t_lo + (t_hi - t_lo) * j / (n - 1);
      double c = 0.0;
      for (std::size_t k = 0; k < mono.size(); ++k) {
        const double e = sensor[k] - (s * mono[k] + t);
        c += e * e;
      }
      if (c < best.cost) best = {s, t, c};
    }
  }
  return best;
}

}  // namespace oracle
