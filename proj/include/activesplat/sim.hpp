#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "activesplat/depth_alignment.hpp"
#include "activesplat/trainer.hpp"

namespace activesplat {

/// Ground-truth world for the closed-loop harness.
struct SyntheticScene {
  std::string name;
  World world;
  int object_id = 1;  // the object of interest
  Vec3 center = Vec3::Zero();
  Vec3 bounds_min = Vec3::Constant(-1.0);
  Vec3 bounds_max = Vec3::Constant(1.0);
  Vec3 background = Vec3::Constant(0.9);
  std::uint64_t seed = 0;

  /// Throws unless every surface lies within the bounds and exactly one object is flagged.
  void validate() const;
};

/// Bunny stand-in (union of spheres) with two distractors on a checkered table.
SyntheticScene make_bunny_proxy(std::uint64_t seed = 0);
/// Block with a square cavity in its top face, on a table.
SyntheticScene make_hole_object(std::uint64_t seed = 0);
/// Known names: "bunny-proxy", "hole-object".
SyntheticScene make_scene(const std::string& name, std::uint64_t seed);

struct ViewSphereParams {
  Vec3 center = Vec3::Zero();
  double r_min = 0.4;
  double r_max = 0.6;
  double min_elevation_deg = 10.0;
  double max_elevation_deg = 80.0;
  Intrinsics intrinsics{70.0, 70.0, 31.5, 31.5, 64, 64};
};

/// Look-at cameras on a spherical shell above the horizon, ids from `first_id`.
std::vector<CameraView> sample_view_sphere(const ViewSphereParams& params, int n, std::uint64_t seed,
                                           int first_id = 0);
std::vector<CameraView> sample_view_sphere(const Vec3& center, double r_min, double r_max, int n,
                                           std::uint64_t seed);

/// d' = d + N(0, (a + b d^2)^2), with `dropout` of valid pixels set to NaN.
Image simulate_sensor_depth(const Image& gt_depth, double a, double b, std::uint64_t seed, double dropout = 0.02);

/// Per-segment affine distortion of the true depth times a smooth field of
/// relative amplitude `field_amplitude`. `segments` holds integer segment ids.
Image simulate_mono_depth(const Image& gt_depth, const Image& segments, std::uint64_t seed,
                          double field_amplitude = 0.03);

struct SensorModel {
  double noise_a = 0.001;
  double noise_b = 0.005;
  double dropout = 0.02;
  double mono_field = 0.03;
};

/// Renders the ground truth for `cam` and attaches color, sensor depth, mono
/// depth, aligned depth and the object mask.
CameraView capture_view(const SyntheticScene& scene, CameraView cam, const SensorModel& sensor, std::uint64_t seed);

struct Metrics {
  double psnr = 0.0;
  double ssim = 0.0;
  double d_abs = 0.0;
  double d_abs_o = 0.0;
};

struct HeldoutView {
  CameraView cam;
  GroundTruthRender gt;
};

std::vector<HeldoutView> make_heldout(const SyntheticScene& scene, const std::vector<CameraView>& cams);

/// Averages over held-out views. PSNR is capped at 99 dB; D-ABS-O averages
/// only views in which the object is visible.
Metrics compute_metrics(const SceneModel& model, const std::vector<HeldoutView>& heldout, int object_id,
                        const RenderSettings& settings = {});

struct ExperimentSpec {
  std::string scene = "bunny-proxy";
  std::vector<std::string> modes{"random", "depth"};
  std::vector<std::uint64_t> seeds{0};
  int steps = 6000;
  int view_add_interval = 2000;
  int n_start_views = 8;
  int n_candidates = 10;
  double alpha = 0.1;
  double beta = 1.0;
  int n_heldout = 30;
  double infeasible_rate = 0.2;
  double lift_fraction = 0.08;
  ViewSphereParams views;
  SensorModel sensor;
  LossConfig loss = harness_loss();

  void validate() const;
  /// Default weights with the depth term on metric sensor depth.
  static LossConfig harness_loss() {
    LossConfig c;
    c.depth_mode = DepthLossMode::mse;
    return c;
  }
};

SelectionMode parse_mode(const std::string& name);
std::string mode_name(SelectionMode mode);

struct RunReport {
  std::string mode;
  std::uint64_t seed = 0;
  Metrics metrics;
  std::vector<TrainingEvent> events;
  SceneModel scene;
  std::vector<int> training_view_ids;
  std::vector<std::vector<int>> candidate_ids;  // per selection event
};

struct ModeAggregate {
  std::string mode;
  Metrics mean;
  Metrics stddev;
};

struct ExperimentReport {
  std::vector<RunReport> runs;
  std::vector<ModeAggregate> aggregates;
};

/// World, starting views (with payloads), held-out set and initial model of one seed.
struct SeedSetup {
  SyntheticScene world;
  ViewSphereParams views;  // centred on the object
  std::vector<CameraView> start_views;
  std::vector<HeldoutView> heldout;
  SceneModel initial;
};
SeedSetup prepare_seed(const ExperimentSpec& spec, std::uint64_t seed);

/// Candidate set of one selection event; identical for every mode of a seed.
std::vector<CandidateView> event_candidates(const ExperimentSpec& spec, const SeedSetup& setup, std::uint64_t seed,
                                            int event_index);

TrainConfig experiment_train_config(const ExperimentSpec& spec, std::uint64_t seed);

RunReport run_single(const ExperimentSpec& spec, const SeedSetup& setup, std::uint64_t seed, const std::string& mode);
ExperimentReport run_experiment(const ExperimentSpec& spec);

struct TouchExperimentSpec {
  std::uint64_t seed = 0;
  int vision_steps = 2000;
  int n_start_views = 8;
  int touches = 10;
  int touch_interval = 100;
  int n_touch_candidates = 9;
  double lift_fraction = 0.08;
  ViewSphereParams views;
  SensorModel sensor;
  TouchSensorSpec sensor_spec;
  TouchCameraConfig camera;
};

struct TouchExperimentReport {
  Metrics before;
  Metrics after;
  bool first_touch_covers_hole = false;
  std::vector<double> first_touch_scores;
  std::vector<TrainingEvent> events;
  SceneModel scene;  // after the touch phase
};

/// Touch candidates above the top face of the hole object; candidate 0..n-1.
/// `covers_hole` marks candidates whose sensor footprint overlaps the cavity.
std::vector<Rigid> touch_candidates(const SyntheticScene& scene, int n, std::uint64_t seed,
                                    std::vector<bool>* covers_hole = nullptr);

TouchExperimentReport run_touch_experiment(const TouchExperimentSpec& spec);

}  // namespace activesplat
