#include <gtest/gtest.h>

#include "activesplat/serialization.hpp"
#include "activesplat/trainer.hpp"
#include "test_util.hpp"

using namespace activesplat;

namespace {

// Views of `truth` supervised by its own renders, seen from a few angles.
std::vector<CameraView> supervised_views(const SceneModel& truth, int n) {
  std::vector<CameraView> views;
  for (int i = 0; i < n; ++i) {
    const double a = 0.4 * (i - (n - 1) / 2.0);
    CameraView cam;
    cam.id = i;
    cam.intrinsics = testutil::small_intrinsics(16, 12);
    cam.pose = look_at(Vec3(2 * std::sin(a), 0.3, -2 * std::cos(a)), Vec3::Zero(), Vec3::UnitY());
    const RenderOutput r = render(truth, cam);
    cam.supervision.color = r.color;
    cam.supervision.sensor_depth = r.depth;
    views.push_back(cam);
  }
  return views;
}

TrainConfig photometric_config() {
  TrainConfig c;
  c.total_steps = 100;
  c.loss = LossConfig::zero();
  c.loss.w_photometric = 1.0;
  c.loss.lambda_ssim = 0.0;
  c.optimize_poses = false;
  c.render = RenderSettings{};
  return c;
}

}  // namespace

TEST(TrainStep, ZeroLearningRateLeavesParametersUntouched) {
  Rng rng(1);
  const SceneModel truth = testutil::random_scene(rng, 4);
  SceneModel s = testutil::random_scene(rng, 4);
  auto views = supervised_views(truth, 2);
  TrainConfig c = photometric_config();
  c.lr = LearningRates{0, 0, 0, 0, 0, 0, 0};
  c.optimize_poses = true;
  OptimizerState state;
  const SceneModel before = s;
  for (int i = 0; i < 5; ++i) train_step(s, views, c, state);
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(s.gaussians[i].mean, before.gaussians[i].mean);
    EXPECT_EQ(s.gaussians[i].log_scale, before.gaussians[i].log_scale);
    EXPECT_EQ(s.gaussians[i].opacity_logit, before.gaussians[i].opacity_logit);
  }
  for (const auto& v : views) EXPECT_EQ(v.pose_delta, Vec6::Zero());
  EXPECT_EQ(state.step, 5);
}

TEST(TrainStep, RoundRobinOverViews) {
  Rng rng(2);
  const SceneModel truth = testutil::random_scene(rng, 3);
  SceneModel s = testutil::random_scene(rng, 3);
  auto views = supervised_views(truth, 3);
  OptimizerState state;
  std::vector<int> ids;
  for (int i = 0; i < 7; ++i) ids.push_back(train_step(s, views, photometric_config(), state).view_id);
  EXPECT_EQ(ids, (std::vector<int>{0, 1, 2, 0, 1, 2, 0}));
}

TEST(TrainStep, PhotometricLossMostlyDecreases) {
  Rng rng(3);
  const SceneModel truth = testutil::random_scene(rng, 5);
  SceneModel s = truth;
  for (auto& g : s.gaussians) g.color = Vec3::Constant(0.5);
  std::vector<CameraView> views = supervised_views(truth, 1);
  TrainConfig c = photometric_config();
  OptimizerState state;
  std::vector<double> losses;
  for (int i = 0; i < 100; ++i) losses.push_back(train_step(s, views, c, state).loss.total);
  int up = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) up += losses[i] > losses[i - 1];
  EXPECT_LE(up, 5);
  EXPECT_LT(losses.back(), 0.5 * losses.front());
}

TEST(TrainStep, NonFiniteLossThrows) {
  Rng rng(4);
  SceneModel s = testutil::random_scene(rng, 2);
  auto views = supervised_views(s, 1);
  views[0].supervision.color->at(3, 3, 0) = std::numeric_limits<double>::quiet_NaN();
  OptimizerState state;
  try {
    train_step(s, views, photometric_config(), state);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_NE(std::string(e.what()).find("view 0"), std::string::npos);
  }
  std::vector<CameraView> empty;
  EXPECT_THROW(train_step(s, empty, photometric_config(), state), std::invalid_argument);
}

TEST(Prune, RemovesLowOpacityAndKeepsStateAligned) {
  SceneModel s;
  for (double logit : {-8.0, 1.0, -6.0, 0.0, -5.0}) {
    Gaussian3D g;
    g.opacity_logit = logit;
    g.mean = Vec3(logit, 0, 1);
    s.gaussians.push_back(g);
  }
  OptimizerState state;
  state.fit(s.size(), 1);
  for (std::size_t i = 0; i < s.size(); ++i) {
    state.gaussian_steps[i] = static_cast<long>(i) + 10;
    for (int j = 0; j < param::kPerGaussian; ++j) state.m[i * param::kPerGaussian + j] = static_cast<double>(i);
  }
  // sigmoid(-6) = 0.0025 and sigmoid(-5) = 0.0067 straddle 0.005
  EXPECT_EQ(prune(s, 0.005, &state), 2u);
  ASSERT_EQ(s.size(), 3u);
  EXPECT_EQ(s.gaussians[0].opacity_logit, 1.0);
  EXPECT_EQ(s.gaussians[1].opacity_logit, 0.0);
  EXPECT_EQ(s.gaussians[2].opacity_logit, -5.0);
  EXPECT_EQ(state.gaussian_steps, (std::vector<long>{11, 13, 14}));
  EXPECT_EQ(state.m.size(), 3u * param::kPerGaussian);
  EXPECT_EQ(state.m[0], 1.0);
  EXPECT_EQ(state.m[param::kPerGaussian], 3.0);
  EXPECT_EQ(state.m[2 * param::kPerGaussian], 4.0);
  EXPECT_EQ(prune(s, 0.0, nullptr), 0u);
}

TEST(Prune, ThresholdProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    SceneModel s = testutil::random_scene(rng, 20);
    for (auto& g : s.gaussians) g.opacity_logit = rng.uniform(-8, 2);
    const SceneModel before = s;
    const double thr = rng.uniform(0.001, 0.5);
    const std::size_t removed = prune(s, thr);
    std::size_t expected = 0;
    for (const auto& g : before.gaussians) expected += g.opacity() < thr;
    EXPECT_EQ(removed, expected);
    for (const auto& g : s.gaussians) EXPECT_GE(g.opacity(), thr);
  }
}

TEST(SelectionSteps, Examples) {
  EXPECT_EQ(selection_steps(15000, 2000), (std::vector<int>{2000, 4000, 6000, 8000, 10000, 12000, 14000}));
  EXPECT_EQ(selection_steps(6000, 2000), (std::vector<int>{2000, 4000}));
  EXPECT_TRUE(selection_steps(100, 200).empty());
  EXPECT_TRUE(selection_steps(100, 0).empty());
}

namespace {

struct SmallLoop {
  SceneModel truth;
  std::vector<CameraView> start;
  std::vector<CandidateView> pool;
};

SmallLoop small_loop() {
  Rng rng(9);
  SmallLoop l;
  l.truth = testutil::random_scene(rng, 6);
  l.start = supervised_views(l.truth, 2);
  auto more = supervised_views(l.truth, 7);
  for (int i = 2; i < 7; ++i) {
    CandidateView c;
    c.id = 10 + i;
    c.cam = more[i];
    c.cam.id = c.id;
    c.feasible = i != 4;
    l.pool.push_back(c);
  }
  return l;
}

TrainingRun run_small(SelectionMode mode, std::uint64_t seed) {
  const SmallLoop l = small_loop();
  TrainingSchedule sched;
  sched.config = photometric_config();
  sched.config.total_steps = 120;
  sched.config.view_add_interval = 40;
  sched.config.prune_interval = 50;
  sched.config.seed = seed;
  sched.selection.mode = mode;
  sched.candidates = [pool = l.pool](int) { return pool; };
  Rng rng(10);
  return run_training(testutil::random_scene(rng, 6), l.start, sched);
}

}  // namespace

TEST(RunTraining, EventsAndAddedViews) {
  const TrainingRun run = run_small(SelectionMode::depth, 1);
  std::vector<int> selects;
  for (const auto& e : run.events) {
    if (e.event == "select_view") {
      selects.push_back(e.step);
      EXPECT_NE(e.view_id, 14);  // infeasible
      EXPECT_EQ(e.scores.size(), 5u);
    }
  }
  EXPECT_EQ(selects, (std::vector<int>{40, 80}));
  EXPECT_EQ(run.views.size(), 4u);
  EXPECT_EQ(run.events.back().event, "end");
  EXPECT_EQ(run.events.back().step, 120);
  EXPECT_EQ(run.state.step, 120);
}

TEST(RunTraining, Deterministic) {
  const TrainingRun a = run_small(SelectionMode::depth, 3);
  const TrainingRun b = run_small(SelectionMode::depth, 3);
  EXPECT_EQ(event_log(a.events), event_log(b.events));
  EXPECT_EQ(scene_to_json(a.scene).dump(), scene_to_json(b.scene).dump());
}

TEST(RunTraining, ModesShareTrajectoryUntilFirstSelection) {
  const TrainingRun a = run_small(SelectionMode::random, 4);
  const TrainingRun b = run_small(SelectionMode::depth, 4);
  ASSERT_FALSE(a.events.empty());
  // Everything logged before the first selection is identical.
  std::size_t i = 0;
  for (; i < a.events.size() && a.events[i].event != "select_view"; ++i)
    EXPECT_EQ(event_log_line(a.events[i]), event_log_line(b.events[i]));
  EXPECT_EQ(a.events[i].step, b.events[i].step);
  EXPECT_EQ(a.events[i].losses.total, b.events[i].losses.total);
}

TEST(RunTraining, NoFeasibleViewIsLogged) {
  SmallLoop l = small_loop();
  for (auto& c : l.pool) c.feasible = false;
  TrainingSchedule sched;
  sched.config = photometric_config();
  sched.config.total_steps = 60;
  sched.config.view_add_interval = 30;
  sched.candidates = [pool = l.pool](int) { return pool; };
  const TrainingRun run = run_training(l.truth, l.start, sched);
  ASSERT_EQ(run.events.front().event, "no_feasible_view");
  EXPECT_EQ(run.views.size(), 2u);
}
