#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "activesplat/fisher.hpp"
#include "activesplat/gradients.hpp"
#include "activesplat/touch.hpp"

namespace activesplat {

struct LearningRates {
  double mean = 1.6e-4;  // multiplied by the scene extent
  double log_scale = 5e-3;
  double rotation = 1e-3;
  double opacity = 5e-2;
  double color = 2.5e-3;
  double mask = 2.5e-3;
  double pose = 1e-4;

  double for_group(ParamGroup g) const;
};

struct TrainConfig {
  int total_steps = 6000;
  int view_add_interval = 2000;
  int touch_add_interval = 100;
  LearningRates lr;
  double scene_extent = 1.0;
  /// The mean learning rate decays exponentially to this fraction at total_steps.
  double mean_lr_final_factor = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-15;
  double prune_opacity_threshold = 0.005;
  int prune_interval = 500;
  bool optimize_poses = true;
  /// Fraction of low-alpha aligned-depth pixels lifted into Gaussians when a view is added.
  double lift_fraction = 0.05;
  std::uint64_t seed = 0;
  LossConfig loss;
  RenderSettings render = fast_render_settings();

  void validate() const;
};

class TrainingDiverged : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Adam moments. Gaussian rows carry their own step count so Gaussians added
/// mid-training get the usual bias correction.
struct OptimizerState {
  std::vector<double> m, v;
  std::vector<long> gaussian_steps;
  std::vector<Vec6> pose_m, pose_v;
  std::vector<long> pose_steps;
  long step = 0;
  std::size_t next_view = 0;

  /// Grows the state to match the scene and view list (new rows are zero).
  void fit(std::size_t gaussians, std::size_t views);
  /// Drops the rows of removed Gaussians; `keep` is indexed by Gaussian.
  void retain(const std::vector<bool>& keep);
};

struct StepResult {
  int view_id = 0;
  LossBreakdown loss;
};

/// One round-robin optimization step over `views`.
StepResult train_step(SceneModel& scene, std::vector<CameraView>& views, const TrainConfig& config,
                      OptimizerState& state);

/// Removes Gaussians with opacity below the threshold; returns the count.
std::size_t prune(SceneModel& scene, double threshold, OptimizerState* state = nullptr);

struct TrainingEvent {
  int step = 0;
  std::string event;
  int view_id = -1;
  std::size_t removed = 0;  // prune events
  int candidate_index = -1;  // touch events
  std::vector<CandidateScore> scores;
  std::vector<double> touch_scores;
  LossBreakdown losses;
};

/// Candidate set offered at a view-selection event (event index from 0).
using CandidateProvider = std::function<std::vector<CandidateView>(int event_index)>;
/// Fills the supervision payload of a chosen candidate.
using PayloadProvider = std::function<CameraView(const CandidateView& chosen)>;

struct TrainingSchedule {
  TrainConfig config;
  SelectionParams selection;
  CandidateProvider candidates;
  PayloadProvider payload;
};

struct TrainingRun {
  SceneModel scene;
  std::vector<CameraView> views;
  OptimizerState state;
  std::vector<TrainingEvent> events;
};

/// Step numbers (strictly inside the run) at which a view is selected.
std::vector<int> selection_steps(int total_steps, int interval);

/// Trains from the initial views, selecting and appending a view at every
/// selection step. NoFeasibleView is logged and training continues.
TrainingRun run_training(SceneModel scene, std::vector<CameraView> views, const TrainingSchedule& schedule);

using TouchCandidateProvider = std::function<std::vector<Rigid>(int event_index)>;
using TouchSampler = std::function<TouchSample(const Rigid& pose, int event_index)>;

struct TouchSchedule {
  int touches = 10;
  TouchCameraConfig camera;
  TouchCandidateProvider candidates;
  TouchSampler sample;
};

/// Touch phase after vision training: every touch_add_interval steps a touch
/// is selected, simulated and added, until `touches` have been added. Training
/// continues on all views.
void run_touch_refinement(TrainingRun& run, const TrainConfig& config, const TouchSchedule& schedule);

}  // namespace activesplat
