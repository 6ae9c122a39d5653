#include "activesplat/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "activesplat/depth_alignment.hpp"
#include "activesplat/random.hpp"

namespace activesplat {

double LearningRates::for_group(ParamGroup g) const {
  switch (g) {
    case ParamGroup::mean: return mean;
    case ParamGroup::log_scale: return log_scale;
    case ParamGroup::rotation: return rotation;
    case ParamGroup::opacity: return opacity;
    case ParamGroup::color: return color;
    case ParamGroup::mask: return mask;
  }
  return 0.0;
}

void TrainConfig::validate() const {
  if (total_steps < 0) throw std::invalid_argument("total_steps must be non-negative");
  if (view_add_interval <= 0 || touch_add_interval <= 0 || prune_interval <= 0) {
    throw std::invalid_argument("intervals must be positive");
  }
  for (double r : {lr.mean, lr.log_scale, lr.rotation, lr.opacity, lr.color, lr.mask, lr.pose}) {
    if (!(r > 0.0)) throw std::invalid_argument("learning rates must be positive");
  }
  if (!(scene_extent > 0.0) || !(mean_lr_final_factor > 0.0)) {
    throw std::invalid_argument("scene_extent and mean_lr_final_factor must be positive");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps > 0.0)) {
    throw std::invalid_argument("invalid Adam constants");
  }
  if (lift_fraction < 0.0 || lift_fraction > 1.0) throw std::invalid_argument("lift_fraction must be in [0,1]");
  loss.validate();
}

void OptimizerState::fit(std::size_t gaussians, std::size_t views) {
  const std::size_t n = gaussians * param::kPerGaussian;
  if (m.size() < n) {
    m.resize(n, 0.0);
    v.resize(n, 0.0);
    gaussian_steps.resize(gaussians, 0);
  }
  if (pose_m.size() < views) {
    pose_m.resize(views, Vec6::Zero());
    pose_v.resize(views, Vec6::Zero());
    pose_steps.resize(views, 0);
  }
}

void OptimizerState::retain(const std::vector<bool>& keep) {
  std::size_t dst = 0;
  for (std::size_t i = 0; i < keep.size() && i < gaussian_steps.size(); ++i) {
    if (!keep[i]) continue;
    for (int j = 0; j < param::kPerGaussian; ++j) {
      m[dst * param::kPerGaussian + j] = m[i * param::kPerGaussian + j];
      v[dst * param::kPerGaussian + j] = v[i * param::kPerGaussian + j];
    }
    gaussian_steps[dst] = gaussian_steps[i];
    ++dst;
  }
  gaussian_steps.resize(dst);
  m.resize(dst * param::kPerGaussian);
  v.resize(dst * param::kPerGaussian);
}

namespace {

std::string describe(const LossBreakdown& l) {
  std::ostringstream os;
  os << "total=" << l.total << " photometric=" << l.photometric << " depth=" << l.depth << " normal=" << l.normal
     << " scale_reg=" << l.scale_reg << " mask_bce=" << l.mask_bce << " touch=" << l.touch;
  return os.str();
}

}  // namespace

StepResult train_step(SceneModel& scene, std::vector<CameraView>& views, const TrainConfig& config,
                      OptimizerState& state) {
  if (views.empty()) throw std::invalid_argument("train_step needs at least one view");
  state.fit(scene.size(), views.size());
  const std::size_t vi = state.next_view % views.size();
  state.next_view = vi + 1;
  CameraView& cam = views[vi];

  const BackwardResult r = backward(scene, cam, config.loss, cam.supervision, config.render);
  bool finite = std::isfinite(r.loss.total);
  for (double g : r.param_grads) finite = finite && std::isfinite(g);
  if (!finite) {
    std::ostringstream os;
    os << "non-finite loss or gradient at step " << state.step << " on view " << cam.id << ": "
       << describe(r.loss) << "; gaussians=" << scene.size();
    throw TrainingDiverged(os.str());
  }
  ++state.step;

  const double progress =
      config.total_steps > 0 ? std::min(1.0, static_cast<double>(state.step - 1) / config.total_steps) : 0.0;
  std::array<double, kParamGroupCount> lr_by_offset_group{};
  for (int g = 0; g < kParamGroupCount; ++g) lr_by_offset_group[g] = config.lr.for_group(static_cast<ParamGroup>(g));
  lr_by_offset_group[static_cast<int>(ParamGroup::mean)] =
      config.lr.mean * config.scene_extent * std::pow(config.mean_lr_final_factor, progress);
  std::array<double, param::kPerGaussian> lr{};
  for (int j = 0; j < param::kPerGaussian; ++j) lr[j] = lr_by_offset_group[static_cast<int>(group_of_offset(j))];

  std::vector<double> params = scene.flatten();
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const long t = ++state.gaussian_steps[i];
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
    for (int j = 0; j < param::kPerGaussian; ++j) {
      const std::size_t k = i * param::kPerGaussian + j;
      const double g = r.param_grads[k];
      state.m[k] = config.beta1 * state.m[k] + (1.0 - config.beta1) * g;
      state.v[k] = config.beta2 * state.v[k] + (1.0 - config.beta2) * g * g;
      params[k] -= lr[j] * (state.m[k] / bc1) / (std::sqrt(state.v[k] / bc2) + config.eps);
    }
  }
  scene.unflatten(params);
  scene.normalize_rotations();
  for (auto& g : scene.gaussians) g.color = g.color.cwiseMax(0.0).cwiseMin(1.0);

  if (config.optimize_poses) {
    const long t = ++state.pose_steps[vi];
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
    for (int j = 0; j < 6; ++j) {
      const double g = r.pose_grad[j];
      state.pose_m[vi][j] = config.beta1 * state.pose_m[vi][j] + (1.0 - config.beta1) * g;
      state.pose_v[vi][j] = config.beta2 * state.pose_v[vi][j] + (1.0 - config.beta2) * g * g;
      cam.pose_delta[j] -=
          config.lr.pose * (state.pose_m[vi][j] / bc1) / (std::sqrt(state.pose_v[vi][j] / bc2) + config.eps);
    }
  }
  return {cam.id, r.loss};
}

std::size_t prune(SceneModel& scene, double threshold, OptimizerState* state) {
  std::vector<bool> keep(scene.size());
  std::vector<Gaussian3D> kept;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    keep[i] = scene.gaussians[i].opacity() >= threshold;
    if (keep[i]) kept.push_back(scene.gaussians[i]);
  }
  const std::size_t removed = scene.size() - kept.size();
  scene.gaussians = std::move(kept);
  if (state != nullptr) state->retain(keep);
  return removed;
}

std::vector<int> selection_steps(int total_steps, int interval) {
  std::vector<int> out;
  if (interval <= 0) return out;
  for (int s = interval; s < total_steps; s += interval) out.push_back(s);
  return out;
}

namespace {

// Seeds Gaussians where the new view's aligned depth lands on empty space.
void lift_new_view(SceneModel& scene, const CameraView& view, const TrainConfig& config, std::uint64_t seed) {
  const auto& sup = view.supervision;
  const Image* depth = sup.aligned_depth ? &*sup.aligned_depth : sup.sensor_depth ? &*sup.sensor_depth : nullptr;
  if (depth == nullptr || config.lift_fraction <= 0.0) return;
  Image uncovered = *depth;
  const RenderOutput r = render(scene, view, config.render);
  for (std::size_t i = 0; i < uncovered.size(); ++i) {
    if (r.alpha[i] >= 0.5) uncovered[i] = std::numeric_limits<double>::quiet_NaN();
  }
  const Image* mask = sup.object_mask ? &*sup.object_mask : nullptr;
  for (auto& g : lift_depth(uncovered, view, config.lift_fraction, seed, mask)) scene.gaussians.push_back(g);
}

HessianDiagonal empty_diag(const SceneModel& scene, FisherChannel ch) {
  HessianDiagonal h;
  h.values.assign(scene.parameter_count(), 0.0);
  h.channel = ch;
  return h;
}

}  // namespace

TrainingRun run_training(SceneModel scene, std::vector<CameraView> views, const TrainingSchedule& schedule) {
  const TrainConfig& config = schedule.config;
  config.validate();
  if (views.empty()) throw std::invalid_argument("run_training needs at least one initial view");
  TrainingRun run{std::move(scene), std::move(views), {}, {}};

  const std::vector<int> events = selection_steps(config.total_steps, config.view_add_interval);
  std::size_t next_event = 0;
  LossBreakdown last;
  for (int step = 0; step < config.total_steps; ++step) {
    if (next_event < events.size() && events[next_event] == step) {
      const int event_index = static_cast<int>(next_event++);
      TrainingEvent ev;
      ev.step = step;
      ev.losses = last;
      const std::vector<CandidateView> candidates =
          schedule.candidates ? schedule.candidates(event_index) : std::vector<CandidateView>{};
      SelectionParams params = schedule.selection;
      params.seed = derive_seed(config.seed, 0x5e1ec7 + static_cast<std::uint64_t>(event_index));
      const SelectionMode mode = params.mode;
      const bool need_color = mode == SelectionMode::color || mode == SelectionMode::combined;
      const bool need_depth = mode == SelectionMode::depth || mode == SelectionMode::combined;
      const HessianDiagonal h_color =
          need_color ? accumulate_train_hessian(run.scene, run.views, FisherChannel::color, params.fisher)
                     : empty_diag(run.scene, FisherChannel::color);
      const HessianDiagonal h_depth =
          need_depth ? accumulate_train_hessian(run.scene, run.views, FisherChannel::depth, params.fisher)
                     : empty_diag(run.scene, FisherChannel::depth);
      try {
        Selection sel = select_next_view(candidates, run.scene, h_color, h_depth, params);
        CameraView added = schedule.payload ? schedule.payload(sel.chosen) : sel.chosen.cam;
        added.id = sel.chosen.id;
        lift_new_view(run.scene, added, config, derive_seed(config.seed, 0x11f7 + event_index));
        run.views.push_back(std::move(added));
        ev.event = "select_view";
        ev.view_id = sel.chosen.id;
        ev.scores = std::move(sel.scores);
      } catch (const NoFeasibleView&) {
        ev.event = "no_feasible_view";
      }
      run.events.push_back(std::move(ev));
    }
    if (step > 0 && step % config.prune_interval == 0) {
      const std::size_t removed = prune(run.scene, config.prune_opacity_threshold, &run.state);
      if (removed > 0) {
        TrainingEvent ev;
        ev.step = step;
        ev.event = "prune";
        ev.removed = removed;
        ev.losses = last;
        run.events.push_back(std::move(ev));
      }
    }
    last = train_step(run.scene, run.views, config, run.state).loss;
  }
  TrainingEvent end;
  end.step = config.total_steps;
  end.event = "end";
  end.losses = last;
  run.events.push_back(std::move(end));
  return run;
}

void run_touch_refinement(TrainingRun& run, const TrainConfig& config, const TouchSchedule& schedule) {
  config.validate();
  if (run.views.empty()) throw std::invalid_argument("touch refinement needs trained views");
  const int start_step = static_cast<int>(run.state.step);
  int added = 0;
  int attempts = 0;
  LossBreakdown last;
  int step = start_step;
  // Each attempt selects a touch, then trains touch_add_interval steps.
  while (added < schedule.touches && attempts < 2 * schedule.touches) {
    const int event_index = attempts++;
    TrainingEvent ev;
    ev.step = step;
    ev.losses = last;
    try {
      const std::vector<Rigid> poses = schedule.candidates(event_index);
      FisherOptions fo;
      fo.render = schedule.camera.render;
      const HessianDiagonal h_depth = accumulate_train_hessian(run.scene, run.views, FisherChannel::depth, fo);
      const TouchSelection sel = select_next_touch(poses, run.scene, h_depth, schedule.camera);
      ev.touch_scores = sel.scores;
      const TouchSample sample = schedule.sample(poses[sel.index], event_index);
      const int view_id = 100000 + event_index;
      TouchViewResult tv = add_touch_view(run.scene, sample, view_id, schedule.camera,
                                          derive_seed(config.seed, 0x70c4 + static_cast<std::uint64_t>(event_index)));
      run.views.push_back(std::move(tv.view));
      ev.event = "select_touch";
      ev.view_id = view_id;
      ev.candidate_index = static_cast<int>(sel.index);
      ++added;
    } catch (const NoFeasibleTouch&) {
      ev.event = "no_feasible_touch";
    } catch (const EmptyTouch&) {
      ev.event = "empty_touch";
    }
    run.events.push_back(std::move(ev));
    for (int k = 0; k < config.touch_add_interval; ++k, ++step) {
      last = train_step(run.scene, run.views, config, run.state).loss;
    }
  }
  TrainingEvent end;
  end.step = step;
  end.event = "touch_end";
  end.losses = last;
  run.events.push_back(std::move(end));
}

}  // namespace activesplat
