#pragma once

#include <vector>

#include "activesplat/scene.hpp"

namespace activesplat {

enum class DepthLossMode { mse, pearson };

struct LossConfig {
  double w_photometric = 1.0;
  double lambda_ssim = 0.2;
  double w_depth = 0.5;
  DepthLossMode depth_mode = DepthLossMode::pearson;
  double w_normal = 0.05;
  double w_scale_reg = 0.01;
  double w_mask_bce = 0.1;
  double w_touch = 1.0;
  double max_aniso_ratio = 10.0;
  int touch_smooth_radius = 4;

  void validate() const;
  static LossConfig zero();
};

/// Loss value and its gradient with respect to the first (rendered) image.
struct LossTerm {
  double value = 0.0;
  Image grad;
};

/// Mean SSIM over pixels and channels: 11x11 Gaussian window (sigma 1.5),
/// C1 = 0.01^2, C2 = 0.03^2. Windows are renormalized where they leave the image.
double ssim(const Image& a, const Image& b);
/// SSIM with its gradient with respect to `a`.
LossTerm ssim_with_grad(const Image& a, const Image& b);

/// (1 - lambda) * mean|rendered - gt| + lambda * (1 - SSIM) / 2.
LossTerm loss_photometric(const Image& rendered, const Image& gt, double lambda_ssim);

/// 1 where the target depth is finite and the rendered alpha is at least 0.5.
Image depth_validity(const Image& target, const Image& alpha);

LossTerm loss_depth_mse(const Image& rendered, const Image& target, const Image& validity);

/// 1 - Pearson correlation over valid pixels; 0 when degenerate.
LossTerm loss_depth_pearson(const Image& rendered, const Image& mono, const Image& validity);

/// Camera-frame normals from a pinhole depth map by central differences,
/// oriented towards the camera. NaN where the stencil is incomplete.
Image estimate_normals(const Image& depth, const Intrinsics& K);

/// Mean of (1 - n . n_prior) over valid pixels (value only).
double loss_normal(const Image& normals, const Image& prior, const Image& validity);
/// Same loss with rendered normals derived from `rendered_depth`; gradient is
/// with respect to the rendered depth.
LossTerm loss_normal_from_depth(const Image& rendered_depth, const Intrinsics& K, const Image& prior,
                                const Image& validity);

struct ScaleRegTerm {
  double value = 0.0;
  std::vector<double> grad;  // flat parameter gradient
};
/// Mean over Gaussians of relu(max/min scale - ratio) + 0.1 * min scale.
ScaleRegTerm loss_scale_reg(const SceneModel& scene, double max_aniso_ratio);

LossTerm loss_mask_bce(const Image& rendered, const Image& gt, const Image& validity);

/// L1 to the touch depth on valid pixels plus 0.1 x total variation of the
/// rendered depth over the valid region dilated by `smooth_radius` pixels.
LossTerm loss_touch_depth(const Image& rendered, const Image& touch, const Image& validity, int smooth_radius);

/// Dilates a binary map by a Euclidean disk.
Image dilate(const Image& mask, int radius);

}  // namespace activesplat
