#pragma once

#include <functional>
#include <span>
#include <vector>

#include "activesplat/losses.hpp"
#include "activesplat/rasterizer.hpp"

namespace activesplat {

struct LossBreakdown {
  double total = 0.0;
  double photometric = 0.0;
  double depth = 0.0;
  double normal = 0.0;
  double scale_reg = 0.0;
  double mask_bce = 0.0;
  double touch = 0.0;
};

struct BackwardResult {
  LossBreakdown loss;
  std::vector<double> param_grads;  // flat, SceneModel ordering
  Vec6 pose_grad = Vec6::Zero();
};

/// Weighted training loss of one view. Terms are routed by the view: depth-only
/// views get the touch term only; other views get photometric, depth, normal and
/// mask terms when the matching supervision is present. Scale regularization
/// always applies.
LossBreakdown evaluate_loss(const SceneModel& scene, const CameraView& cam, const LossConfig& config,
                            const Supervision& targets, const RenderSettings& settings = {});

/// Exact reverse-mode gradient of evaluate_loss with respect to every scene
/// parameter and the view's pose_delta.
BackwardResult backward(const SceneModel& scene, const CameraView& cam, const LossConfig& config,
                        const Supervision& targets, const RenderSettings& settings = {});

/// Central differences of a scalar function; throws if h <= 0.
std::vector<double> finite_difference(const std::function<double(std::span<const double>)>& f,
                                      std::span<const double> x, double h);

/// Central-difference gradient of evaluate_loss: scene parameters followed by
/// the six pose_delta entries.
std::vector<double> finite_difference_oracle(const SceneModel& scene, const CameraView& cam,
                                             const LossConfig& config, const Supervision& targets, double h,
                                             const RenderSettings& settings = {});

}  // namespace activesplat
