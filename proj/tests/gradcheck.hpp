#pragma once

#include <string>
#include <vector>

#include "activesplat/gradients.hpp"
#include "test_util.hpp"

namespace gradcheck {

using namespace activesplat;

enum class Term { photometric, depth_mse, pearson, normal, scale_reg, mask_bce, touch };

inline const std::vector<Term>& all_terms() {
  static const std::vector<Term> t{Term::photometric, Term::depth_mse, Term::pearson, Term::normal,
                                   Term::scale_reg,   Term::mask_bce,  Term::touch};
  return t;
}

inline std::string term_name(Term t) {
  switch (t) {
    case Term::photometric: return "photometric";
    case Term::depth_mse: return "depth_mse";
    case Term::pearson: return "pearson";
    case Term::normal: return "normal";
    case Term::scale_reg: return "scale_reg";
    case Term::mask_bce: return "mask_bce";
    case Term::touch: return "touch";
  }
  return "?";
}

// A loss configuration with only the one term switched on.
inline LossConfig single_term(Term t) {
  LossConfig c = LossConfig::zero();
  switch (t) {
    case Term::photometric: c.w_photometric = 1.0; c.lambda_ssim = 0.2; break;
    case Term::depth_mse: c.w_depth = 1.0; c.depth_mode = DepthLossMode::mse; break;
    case Term::pearson: c.w_depth = 1.0; c.depth_mode = DepthLossMode::pearson; break;
    case Term::normal: c.w_normal = 1.0; break;
    case Term::scale_reg: c.w_scale_reg = 1.0; c.max_aniso_ratio = 1.3; break;
    case Term::mask_bce: c.w_mask_bce = 1.0; break;
    case Term::touch: c.w_touch = 1.0; c.touch_smooth_radius = 2; break;
  }
  return c;
}

struct Problem {
  SceneModel scene;
  CameraView cam;
  Supervision targets;
};

inline Problem make_problem(Rng& rng, Term term) {
  Problem p;
  p.scene = testutil::random_scene(rng, 1 + static_cast<int>(rng.index(5)));
  p.cam = testutil::front_camera(14, 10);
  for (int k = 0; k < 3; ++k) p.cam.pose_delta[k] = rng.uniform(-0.02, 0.02);
  for (int k = 3; k < 6; ++k) p.cam.pose_delta[k] = rng.uniform(-0.05, 0.05);
  const int W = p.cam.intrinsics.width, H = p.cam.intrinsics.height;
  Supervision& t = p.targets;
  t.color = testutil::random_image(rng, W, H, 3);
  Image depth = testutil::random_image(rng, W, H, 1, 1.6, 2.4);
  // A smooth ramp keeps the normal prior well defined.
  Image smooth(W, H, 1);
  const double gx = rng.uniform(-0.03, 0.03), gy = rng.uniform(-0.03, 0.03);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) smooth.at(x, y) = 2.0 + gx * x + gy * y;
  t.mono_depth = testutil::random_image(rng, W, H, 1, 0.2, 1.0);
  t.aligned_depth = smooth;
  t.sensor_depth = depth;
  Image mask(W, H, 1);
  for (auto& v : mask.data()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
  t.object_mask = mask;
  if (term == Term::touch) {
    // Touch targets sit behind the rendered surface, like a contact patch seen
    // from the standoff, so the L1 residual keeps one sign.
    p.cam.depth_only = true;
    t.color.reset();
    Image far = smooth;
    for (auto& v : far.data()) v += 1.0;
    t.sensor_depth = far;
  }
  // Denser opacities for depth-type terms so that enough pixels pass alpha >= 0.5.
  if (term == Term::depth_mse || term == Term::pearson || term == Term::normal) {
    for (auto& g : p.scene.gaussians) {
      g.opacity_logit = rng.uniform(1.0, 3.0);
      g.log_scale = g.log_scale.array() + std::log(1.8);
    }
  }
  p.cam.supervision = t;
  return p;
}

struct Comparison {
  double worst_rel = 0.0;  // over entries of magnitude above 1e-6
  double worst_abs = 0.0;
  bool pass = true;
  std::size_t compared = 0;
  std::size_t kinks = 0;  // entries whose stencil crosses a non-differentiable point
};

// Everything at which the chosen term is non-differentiable: signs of the L1
// residuals and TV differences, the alpha >= 0.5 validity switch, and the
// ordering and relu arm of the scale regularizer.
inline std::vector<int> kink_signature(const SceneModel& scene, const CameraView& cam, const Supervision& t,
                                       Term term) {
  std::vector<int> sig;
  auto sgn = [](double v) { return (v > 0) - (v < 0); };
  if (term == Term::scale_reg) {
    for (const auto& g : scene.gaussians) {
      const Vec3 s = g.scale();
      int imin = 0, imax = 0;
      s.minCoeff(&imin);
      s.maxCoeff(&imax);
      sig.push_back(imin);
      sig.push_back(imax);
      sig.push_back(sgn(s.maxCoeff() / s.minCoeff() - single_term(term).max_aniso_ratio));
    }
    return sig;
  }
  const RenderOutput r = render(scene, cam);
  const int W = cam.intrinsics.width, H = cam.intrinsics.height;
  if (term == Term::photometric) {
    for (std::size_t i = 0; i < r.color.size(); ++i) sig.push_back(sgn(r.color[i] - (*t.color)[i]));
  } else if (term == Term::touch) {
    for (std::size_t i = 0; i < r.depth.size(); ++i) sig.push_back(sgn(r.depth[i] - (*t.sensor_depth)[i]));
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        if (x + 1 < W) sig.push_back(sgn(r.depth.at(x + 1, y) - r.depth.at(x, y)));
        if (y + 1 < H) sig.push_back(sgn(r.depth.at(x, y + 1) - r.depth.at(x, y)));
      }
    }
  } else if (term == Term::mask_bce) {
    for (double m : r.mask.data()) sig.push_back((m < 1e-6) - (m > 1 - 1e-6));
  } else {
    for (double a : r.alpha.data()) sig.push_back(a >= 0.5);
  }
  return sig;
}

// True when the central-difference stencil of entry i crosses a kink.
inline bool straddles_kink(const SceneModel& scene, const CameraView& cam, const Supervision& t, Term term,
                           std::size_t i, double h) {
  auto shifted = [&](double d) {
    SceneModel s = scene;
    CameraView c = cam;
    if (i < scene.parameter_count()) {
      std::vector<double> f = s.flatten();
      f[i] += d;
      s.unflatten(f);
    } else {
      c.pose_delta[static_cast<int>(i - scene.parameter_count())] += d;
    }
    return kink_signature(s, c, t, term);
  };
  return shifted(h) != shifted(-h);
}

// Passes when every entry agrees to 1e-4 relative or 1e-7 absolute.
// Entries whose stencil crosses a kink are counted but not scored.
inline Comparison check(const Problem& p, Term term, double h = 1e-5, double rel_tol = 1e-4, double abs_floor = 1e-7) {
  const LossConfig cfg = single_term(term);
  const BackwardResult b = backward(p.scene, p.cam, cfg, p.targets);
  const std::vector<double> fd = finite_difference_oracle(p.scene, p.cam, cfg, p.targets, h);
  Comparison c;
  for (std::size_t i = 0; i < fd.size(); ++i) {
    const double a = i < b.param_grads.size() ? b.param_grads[i] : b.pose_grad[i - b.param_grads.size()];
    const double err = std::abs(a - fd[i]);
    const double scale = std::max(std::abs(a), std::abs(fd[i]));
    const bool bad = err > abs_floor && err > rel_tol * scale;
    if (bad && straddles_kink(p.scene, p.cam, p.targets, term, i, h)) {
      ++c.kinks;
      continue;
    }
    if (scale > 1e-6) c.worst_rel = std::max(c.worst_rel, err / scale);
    c.worst_abs = std::max(c.worst_abs, err);
    if (bad) c.pass = false;
    ++c.compared;
  }
  return c;
}

}  // namespace gradcheck
