#pragma once

#include <vector>

#include "activesplat/scene.hpp"

namespace activesplat {

struct RenderSettings {
  /// Per-Gaussian pixel opacities below this are skipped. The default keeps the
  /// dropped mass far below any test tolerance; training may raise it for speed.
  double alpha_min = 1e-12;
  /// Compositing stops before a Gaussian whose incoming transmittance is below this.
  double transmittance_min = 1e-4;
  /// Isotropic screen-space dilation added to every projected covariance.
  double dilation = 0.3;
  double min_determinant = 1e-12;
  int tile_size = 16;
};

/// Training-speed settings: the usual 1/255 opacity cut-off and small tiles,
/// which shorten the per-pixel splat lists at low resolution.
inline RenderSettings fast_render_settings() {
  RenderSettings s;
  s.alpha_min = 1.0 / 255.0;
  s.tile_size = 4;
  return s;
}

struct RenderOutput {
  Image color;  // HxWx3
  Image depth;  // composited camera-frame depth, not normalized by alpha
  Image alpha;  // accumulated opacity
  Image mask;   // composited object-membership channel
};

/// One Gaussian after projection into a view. Sorted front to back.
struct Splat {
  int gaussian = 0;
  Vec2 mean2d = Vec2::Zero();
  double conic_a = 0.0, conic_b = 0.0, conic_c = 0.0;  // inverse dilated covariance
  double depth = 0.0;
  double opacity = 0.0;
  Vec3 color = Vec3::Zero();
  double mask = 0.0;
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bounds

  // Intermediates needed by the reverse pass.
  Vec3 p_base = Vec3::Zero();  // mean in the uncorrected camera frame
  Vec3 p_cam = Vec3::Zero();
  Mat3 rot_q = Mat3::Identity();
  Vec3 scale = Vec3::Ones();
  Vec4 q_unit{1.0, 0.0, 0.0, 0.0};
  double q_norm = 1.0;
  Mat2 cov2d = Mat2::Identity();  // dilated

};

/// Screen-space gradient of one splat. The conic gradient is the full-matrix
/// gradient of the symmetric inverse covariance: [[a, b], [b, c]].
struct SplatGrad {
  Vec2 mean2d = Vec2::Zero();
  double conic_a = 0.0, conic_b = 0.0, conic_c = 0.0;
  double depth = 0.0;
  double opacity = 0.0;  // w.r.t. sigmoid(opacity_logit)
  Vec3 color = Vec3::Zero();
  double mask = 0.0;     // w.r.t. sigmoid(mask_logit)

  SplatGrad& operator+=(const SplatGrad& o);
};

/// Upstream gradient of one pixel's outputs.
struct PixelUpstream {
  Vec3 color = Vec3::Zero();
  double depth = 0.0;
  double alpha = 0.0;
  double mask = 0.0;
};

struct SceneGradient {
  std::vector<double> params;  // flat, SceneModel ordering
  Vec6 pose = Vec6::Zero();
};

/// Projection of a whole scene into one view, binned into screen tiles.
class PreparedView {
public:
  PreparedView(const SceneModel& scene, const CameraView& cam, const RenderSettings& settings = {},
               bool with_jacobians = false);

  const std::vector<Splat>& splats() const { return splats_; }
  const CameraView& camera() const { return *cam_; }
  const RenderSettings& settings() const { return settings_; }
  const Vec3& background() const { return background_; }
  std::size_t gaussian_count() const { return gaussian_count_; }
  int width() const { return cam_->intrinsics.width; }
  int height() const { return cam_->intrinsics.height; }

  struct Contribution {
    int splat;
    double alpha;
    double transmittance;  // before this splat
    double falloff;        // exp(-q/2)
    double dx, dy;         // pixel minus mean2d
  };

  using GeometryJacobian = Eigen::Matrix<double, 6, 10>;
  using PoseJacobian = Eigen::Matrix<double, 6, 6>;
  /// d(mean2d, conic[a,b,c], depth) / d(mean, log_scale, rotation) and / d(pose_delta)
  /// of splat i. Only available when the view was prepared with jacobians.
  const GeometryJacobian& geometry_jacobian(std::size_t i) const { return jac_geometry_.at(i); }
  const PoseJacobian& pose_jacobian(std::size_t i) const { return jac_pose_.at(i); }

  /// Ordered contributions at a pixel; returns the final transmittance.
  double composite(int x, int y, std::vector<Contribution>& out) const;

  /// Renders the view. The per-pixel contribution lists are kept so that a
  /// following backward() does not composite again.
  RenderOutput render() const;

  /// Reverse pass for one pixel. Appends (splat, gradient) pairs.
  void pixel_backward(int x, int y, const PixelUpstream& up, std::vector<Contribution>& scratch,
                      std::vector<std::pair<int, SplatGrad>>& out) const;

  /// Reverse pass over the whole image; upstream images may be empty (zero).
  SceneGradient backward(const Image& grad_color, const Image& grad_depth, const Image& grad_alpha,
                         const Image& grad_mask) const;

  /// Gradient w.r.t. the 15 parameters of the splat's Gaussian. Requires jacobians.
  Eigen::Matrix<double, param::kPerGaussian, 1> parameter_gradient(const Splat& s, const SplatGrad& g) const;

  /// Chains accumulated screen-space gradients into parameter and pose gradients.
  void chain(const Splat& s, const SplatGrad& g, double* param_out, Vec6& pose_out) const;

private:
  const CameraView* cam_;
  RenderSettings settings_;
  Vec3 background_;
  std::size_t gaussian_count_;
  Rigid base_pose_;
  Mat3 rot_delta_;
  Mat3 world_rot_;
  std::array<Mat3, 3> rot_delta_derivs_;
  std::vector<Splat> splats_;
  std::vector<GeometryJacobian> jac_geometry_;
  std::vector<PoseJacobian> jac_pose_;
  // Compact copy of what compositing reads, in splat order.
  struct Packed {
    double mx, my, a, b, c, opacity, q_max;
    int x0, x1, y0, y1;
    double r, g, b_, depth, mask;
  };
  std::vector<Packed> packed_;
  // Contributions recorded by render(), reused by the reverse pass.
  mutable std::vector<Contribution> cache_;
  mutable std::vector<std::size_t> cache_offsets_;

  // Calls sink(splat, gradient) back to front.
  template <class Sink>
  void backward_list(const Contribution* first, const Contribution* last, const PixelUpstream& up, Sink&& sink) const;
  int tiles_x_ = 0, tiles_y_ = 0;
  std::vector<std::vector<int>> tiles_;
};

/// Renders color, depth, alpha and mask by ordered alpha compositing.
RenderOutput render(const SceneModel& scene, const CameraView& cam, const RenderSettings& settings = {});

}  // namespace activesplat
