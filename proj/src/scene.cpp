#include "activesplat/scene.hpp"

#include <stdexcept>
#include <string>

namespace activesplat {

Mat3 skew(const Vec3& v) {
  Mat3 K;
  K << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return K;
}

Mat3 so3_exp(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const Mat3 K = skew(omega);
  double a, b;
  if (theta2 < 1e-12) {
    a = 1.0 - theta2 / 6.0;
    b = 0.5 - theta2 / 24.0;
  } else {
    const double theta = std::sqrt(theta2);
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta2;
  }
  return Mat3::Identity() + a * K + b * K * K;
}

std::array<Mat3, 3> so3_exp_derivatives(const Vec3& omega) {
  std::array<Mat3, 3> d;
  const Mat3 R = so3_exp(omega);
  const double theta2 = omega.squaredNorm();
  if (theta2 < 1e-14) {
    for (int i = 0; i < 3; ++i) d[i] = skew(Vec3::Unit(i)) * R;
    return d;
  }
  // dR/dw_i = (w_i [w]x + [w x (I - R) e_i]x) R / |w|^2
  const Mat3 K = skew(omega);
  const Mat3 IminusR = Mat3::Identity() - R;
  for (int i = 0; i < 3; ++i) {
    const Vec3 v = omega.cross(IminusR.col(i));
    d[i] = (omega[i] * K + skew(v)) * R / theta2;
  }
  return d;
}

Mat3 quat_to_matrix(const Vec4& qraw) {
  const Vec4 q = qraw / qraw.norm();
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 R;
  R << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
       2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
       2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
  return R;
}

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("intrinsics: focal lengths must be positive");
  if (width < 1 || height < 1) throw std::invalid_argument("intrinsics: image size must be at least 1x1");
}

Rigid apply_pose_delta(const Rigid& pose, const Vec6& delta) {
  const Mat3 Rd = so3_exp(delta.tail<3>());
  return {Rd * pose.R, Rd * pose.t + delta.head<3>()};
}

Rigid CameraView::effective_pose() const { return apply_pose_delta(pose, pose_delta); }

Vec3 CameraView::pixel_ray(double x, double y) const {
  const auto& K = intrinsics;
  if (model == ProjectionModel::pinhole) {
    return Vec3((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0).normalized();
  }
  // Equidistant fisheye: r = f * theta.
  const double dx = (x - K.cx) / K.fx;
  const double dy = (y - K.cy) / K.fy;
  const double theta = std::hypot(dx, dy);
  if (theta < 1e-15) return Vec3::UnitZ();
  const double s = std::sin(theta) / theta;
  return Vec3(dx * s, dy * s, std::cos(theta));
}

Rigid look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = (target - eye).normalized();
  Vec3 right = forward.cross(up);
  if (right.norm() < 1e-9) right = forward.cross(Vec3::UnitY());
  right.normalize();
  const Vec3 down = forward.cross(right);
  Rigid pose;
  pose.R.row(0) = right.transpose();
  pose.R.row(1) = down.transpose();
  pose.R.row(2) = forward.transpose();
  pose.t = -pose.R * eye;
  return pose;
}

Mat3 covariance(const Gaussian3D& g) {
  const Mat3 R = quat_to_matrix(g.rotation);
  const Mat3 M = R * g.scale().asDiagonal();
  Mat3 sigma = M * M.transpose();
  return 0.5 * (sigma + sigma.transpose());
}

ParamGroup group_of_offset(int offset) {
  if (offset < param::kLogScale) return ParamGroup::mean;
  if (offset < param::kRotation) return ParamGroup::log_scale;
  if (offset < param::kOpacity) return ParamGroup::rotation;
  if (offset < param::kColor) return ParamGroup::opacity;
  if (offset < param::kMask) return ParamGroup::color;
  return ParamGroup::mask;
}

std::vector<double> SceneModel::flatten() const {
  std::vector<double> out(parameter_count());
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    const Gaussian3D& g = gaussians[i];
    double* p = out.data() + i * param::kPerGaussian;
    for (int k = 0; k < 3; ++k) {
      p[param::kMean + k] = g.mean[k];
      p[param::kLogScale + k] = g.log_scale[k];
      p[param::kColor + k] = g.color[k];
    }
    for (int k = 0; k < 4; ++k) p[param::kRotation + k] = g.rotation[k];
    p[param::kOpacity] = g.opacity_logit;
    p[param::kMask] = g.mask_logit;
  }
  return out;
}

void SceneModel::unflatten(std::span<const double> params) {
  if (params.size() % param::kPerGaussian != 0) {
    throw std::invalid_argument("unflatten: length " + std::to_string(params.size()) +
                                " is not a multiple of the per-Gaussian parameter count");
  }
  gaussians.resize(params.size() / param::kPerGaussian);
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    Gaussian3D& g = gaussians[i];
    const double* p = params.data() + i * param::kPerGaussian;
    for (int k = 0; k < 3; ++k) {
      g.mean[k] = p[param::kMean + k];
      g.log_scale[k] = p[param::kLogScale + k];
      g.color[k] = p[param::kColor + k];
    }
    for (int k = 0; k < 4; ++k) g.rotation[k] = p[param::kRotation + k];
    g.opacity_logit = p[param::kOpacity];
    g.mask_logit = p[param::kMask];
  }
}

SceneModel SceneModel::from_flat(std::span<const double> params, const Vec3& background) {
  SceneModel s;
  s.background = background;
  s.unflatten(params);
  return s;
}

void SceneModel::normalize_rotations() {
  for (auto& g : gaussians) {
    const double n = g.rotation.norm();
    if (n > 0.0) {
      g.rotation /= n;
    } else {
      g.rotation = Vec4(1.0, 0.0, 0.0, 0.0);
    }
  }
}

ProjectedGaussian2D project_gaussian(const Gaussian3D& g, const CameraView& cam) {
  ProjectedGaussian2D out;
  const Rigid pose = cam.effective_pose();
  const Vec3 p = pose.apply(g.mean);
  out.depth = p.z();
  if (p.z() <= kZNear) return out;
  const auto& K = cam.intrinsics;
  const double iz = 1.0 / p.z();
  out.mean2d = Vec2(K.fx * p.x() * iz + K.cx, K.fy * p.y() * iz + K.cy);
  Eigen::Matrix<double, 2, 3> J;
  J << K.fx * iz, 0.0, -K.fx * p.x() * iz * iz,
       0.0, K.fy * iz, -K.fy * p.y() * iz * iz;
  const Eigen::Matrix<double, 2, 3> M = J * pose.R;
  out.cov2d = M * covariance(g) * M.transpose();
  out.culled = false;
  return out;
}

}  // namespace activesplat
