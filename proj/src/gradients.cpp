#include "activesplat/gradients.hpp"

#include <stdexcept>

namespace activesplat {

namespace {

struct ImageGrads {
  Image color, depth, alpha, mask;
};

// Loss terms on the rendered images plus their upstream gradients.
LossBreakdown image_losses(const RenderOutput& r, const CameraView& cam, const LossConfig& cfg,
                           const Supervision& t, ImageGrads* grads) {
  LossBreakdown loss;
  const int W = cam.intrinsics.width, H = cam.intrinsics.height;
  if (grads) *grads = {Image(W, H, 3), Image(W, H, 1), Image(W, H, 1), Image(W, H, 1)};
  auto accumulate = [](Image& dst, const Image& src, double w) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += w * src[i];
  };

  if (cam.depth_only) {
    if (cfg.w_touch > 0.0 && t.sensor_depth) {
      const Image valid(W, H, 1, 1.0);
      const LossTerm l = loss_touch_depth(r.depth, *t.sensor_depth, valid, cfg.touch_smooth_radius);
      loss.touch = l.value;
      if (grads) accumulate(grads->depth, l.grad, cfg.w_touch);
    }
  } else {
    if (cfg.w_photometric > 0.0 && t.color) {
      const LossTerm l = loss_photometric(r.color, *t.color, cfg.lambda_ssim);
      loss.photometric = l.value;
      if (grads) accumulate(grads->color, l.grad, cfg.w_photometric);
    }
    if (cfg.w_depth > 0.0) {
      const Image* target = cfg.depth_mode == DepthLossMode::mse ? (t.sensor_depth ? &*t.sensor_depth : nullptr)
                                                                 : (t.mono_depth ? &*t.mono_depth : nullptr);
      if (target) {
        const Image valid = depth_validity(*target, r.alpha);
        const LossTerm l = cfg.depth_mode == DepthLossMode::mse ? loss_depth_mse(r.depth, *target, valid)
                                                                : loss_depth_pearson(r.depth, *target, valid);
        loss.depth = l.value;
        if (grads) accumulate(grads->depth, l.grad, cfg.w_depth);
      }
    }
    if (cfg.w_normal > 0.0) {
      const Image* prior_depth = t.aligned_depth ? &*t.aligned_depth : (t.sensor_depth ? &*t.sensor_depth : nullptr);
      if (prior_depth) {
        const Image prior = estimate_normals(*prior_depth, cam.intrinsics);
        Image valid(W, H, 1);
        for (std::size_t i = 0; i < valid.size(); ++i) valid[i] = r.alpha[i] >= 0.5 ? 1.0 : 0.0;
        const LossTerm l = loss_normal_from_depth(r.depth, cam.intrinsics, prior, valid);
        loss.normal = l.value;
        if (grads) accumulate(grads->depth, l.grad, cfg.w_normal);
      }
    }
    if (cfg.w_mask_bce > 0.0 && t.object_mask) {
      const LossTerm l = loss_mask_bce(r.mask, *t.object_mask, Image());
      loss.mask_bce = l.value;
      if (grads) accumulate(grads->mask, l.grad, cfg.w_mask_bce);
    }
  }
  return loss;
}

void finish_total(LossBreakdown& l, const LossConfig& cfg) {
  l.total = cfg.w_photometric * l.photometric + cfg.w_depth * l.depth + cfg.w_normal * l.normal +
            cfg.w_scale_reg * l.scale_reg + cfg.w_mask_bce * l.mask_bce + cfg.w_touch * l.touch;
}

}  // namespace

LossBreakdown evaluate_loss(const SceneModel& scene, const CameraView& cam, const LossConfig& config,
                            const Supervision& targets, const RenderSettings& settings) {
  const RenderOutput r = render(scene, cam, settings);
  LossBreakdown loss = image_losses(r, cam, config, targets, nullptr);
  if (config.w_scale_reg > 0.0) loss.scale_reg = loss_scale_reg(scene, config.max_aniso_ratio).value;
  finish_total(loss, config);
  return loss;
}

BackwardResult backward(const SceneModel& scene, const CameraView& cam, const LossConfig& config,
                        const Supervision& targets, const RenderSettings& settings) {
  config.validate();
  const PreparedView view(scene, cam, settings);
  const RenderOutput r = view.render();
  ImageGrads g;
  BackwardResult out;
  out.loss = image_losses(r, cam, config, targets, &g);
  SceneGradient sg = view.backward(g.color, g.depth, g.alpha, g.mask);
  out.param_grads = std::move(sg.params);
  out.pose_grad = sg.pose;
  if (config.w_scale_reg > 0.0) {
    const ScaleRegTerm s = loss_scale_reg(scene, config.max_aniso_ratio);
    out.loss.scale_reg = s.value;
    for (std::size_t i = 0; i < s.grad.size(); ++i) out.param_grads[i] += config.w_scale_reg * s.grad[i];
  }
  finish_total(out.loss, config);
  return out;
}

std::vector<double> finite_difference(const std::function<double(std::span<const double>)>& f,
                                      std::span<const double> x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_difference: step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = probe[i];
    probe[i] = x0 + h;
    const double fp = f(probe);
    probe[i] = x0 - h;
    const double fm = f(probe);
    probe[i] = x0;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

std::vector<double> finite_difference_oracle(const SceneModel& scene, const CameraView& cam,
                                             const LossConfig& config, const Supervision& targets, double h,
                                             const RenderSettings& settings) {
  std::vector<double> x = scene.flatten();
  const std::size_t n = x.size();
  for (int k = 0; k < 6; ++k) x.push_back(cam.pose_delta[k]);
  CameraView probe_cam = cam;
  probe_cam.supervision = {};
  auto f = [&](std::span<const double> v) {
    const SceneModel s = SceneModel::from_flat(v.first(n), scene.background);
    for (int k = 0; k < 6; ++k) probe_cam.pose_delta[k] = v[n + k];
    return evaluate_loss(s, probe_cam, config, targets, settings).total;
  };
  return finite_difference(f, x, h);
}

}  // namespace activesplat
