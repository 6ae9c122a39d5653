#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "activesplat/image.hpp"

namespace activesplat {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double kZNear = 0.01;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Rigid world-to-camera transform: p_cam = R * p_world + t.
struct Rigid {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return R * p + t; }
  Rigid inverse() const { return {R.transpose(), -R.transpose() * t}; }
  Rigid compose(const Rigid& rhs) const { return {R * rhs.R, R * rhs.t + t}; }
  /// Camera centre in world coordinates (for a world-to-camera transform).
  Vec3 center() const { return -R.transpose() * t; }
};

/// Rotation matrix of a rotation vector (Rodrigues).
Mat3 so3_exp(const Vec3& omega);
/// Partial derivatives dR/domega_i of so3_exp, one matrix per component.
std::array<Mat3, 3> so3_exp_derivatives(const Vec3& omega);
Mat3 skew(const Vec3& v);

/// Rotation matrix of a (not necessarily normalized) quaternion (w,x,y,z).
Mat3 quat_to_matrix(const Vec4& q);

struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  void validate() const;
};

enum class ProjectionModel { pinhole, fisheye };

/// Per-view supervision payload. Depth images use NaN for invalid pixels.
struct Supervision {
  std::optional<Image> color;          // HxWx3 in [0,1]
  std::optional<Image> sensor_depth;   // metric; for depth-only views this is the touch target
  std::optional<Image> aligned_depth;  // mono depth after per-mask affine alignment
  std::optional<Image> mono_depth;     // relative monocular depth
  std::optional<Image> object_mask;    // 1 inside the object of interest
};

struct CameraView {
  int id = 0;
  Rigid pose;  // world -> camera
  Intrinsics intrinsics;
  ProjectionModel model = ProjectionModel::pinhole;
  Supervision supervision;
  bool depth_only = false;
  /// Pose correction (v, omega): translation then rotation vector.
  Vec6 pose_delta = Vec6::Zero();

  /// Pose with the correction applied: Exp(omega) * pose, translated by v.
  Rigid effective_pose() const;
  /// Unit ray direction in camera coordinates through pixel centre (x, y).
  Vec3 pixel_ray(double x, double y) const;
};

/// Folds a pose correction into a pose (SO(3) x R^3 retraction).
Rigid apply_pose_delta(const Rigid& pose, const Vec6& delta);
inline Rigid apply_pose_delta(const CameraView& cam) { return cam.effective_pose(); }

/// Builds a world-to-camera pose looking from `eye` towards `target` (camera +z
/// forward, +y down, +x right), with `up` as the world up vector.
Rigid look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ());

struct Gaussian3D {
  Vec3 mean = Vec3::Zero();
  Vec3 log_scale = Vec3::Zero();
  Vec4 rotation{1.0, 0.0, 0.0, 0.0};  // (w, x, y, z)
  double opacity_logit = 0.0;
  Vec3 color = Vec3::Constant(0.5);
  double mask_logit = 0.0;

  double opacity() const { return sigmoid(opacity_logit); }
  double mask() const { return sigmoid(mask_logit); }
  Vec3 scale() const { return log_scale.array().exp(); }

  bool operator==(const Gaussian3D&) const = default;
};

/// Sigma = R S S^T R^T with S = diag(exp(log_scale)).
Mat3 covariance(const Gaussian3D& g);

/// Offsets of each field inside the per-Gaussian parameter block.
namespace param {
inline constexpr int kMean = 0;
inline constexpr int kLogScale = 3;
inline constexpr int kRotation = 6;
inline constexpr int kOpacity = 10;
inline constexpr int kColor = 11;
inline constexpr int kMask = 14;
inline constexpr int kPerGaussian = 15;
}  // namespace param

/// Parameter groups, used to restrict Fisher scoring and learning rates.
enum class ParamGroup { mean, log_scale, rotation, opacity, color, mask };
inline constexpr int kParamGroupCount = 6;
ParamGroup group_of_offset(int offset);

struct SceneModel {
  std::vector<Gaussian3D> gaussians;
  Vec3 background = Vec3::Zero();

  std::size_t size() const { return gaussians.size(); }
  std::size_t parameter_count() const { return gaussians.size() * param::kPerGaussian; }

  std::vector<double> flatten() const;
  void unflatten(std::span<const double> params);
  static SceneModel from_flat(std::span<const double> params, const Vec3& background);

  /// Renormalizes every quaternion to unit length.
  void normalize_rotations();

  bool operator==(const SceneModel&) const = default;
};

struct ProjectedGaussian2D {
  bool culled = true;
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Zero();  // without the rasterizer's dilation
  double depth = 0.0;         // camera-frame z of the mean
};

/// EWA projection of a Gaussian into a pinhole camera (pose_delta applied).
ProjectedGaussian2D project_gaussian(const Gaussian3D& g, const CameraView& cam);

}  // namespace activesplat
