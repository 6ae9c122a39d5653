#include "activesplat/sim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "activesplat/losses.hpp"
#include "activesplat/random.hpp"

namespace activesplat {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void extent_of(const Shape& shape, Vec3& lo, Vec3& hi) {
  std::visit(
      [&](const auto& s) {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, Sphere>) {
          lo = s.center.array() - s.radius;
          hi = s.center.array() + s.radius;
        } else if constexpr (std::is_same_v<T, Box>) {
          lo = s.min;
          hi = s.max;
        } else if constexpr (std::is_same_v<T, Torus>) {
          const double r = s.major_radius + s.minor_radius;
          lo = s.center - Vec3(r, r, s.minor_radius);
          hi = s.center + Vec3(r, r, s.minor_radius);
        } else {
          lo = s.a.cwiseMin(s.b).cwiseMin(s.c);
          hi = s.a.cwiseMax(s.b).cwiseMax(s.c);
        }
      },
      shape);
}

Surface table_surface(double half, double checker) {
  return {Box{Vec3(-half, -half, -0.02), Vec3(half, half, 0.0)}, Vec3(0.75, 0.7, 0.6), 0, checker};
}

}  // namespace

void SyntheticScene::validate() const {
  bool has_object = false;
  for (const auto& s : world.surfaces) {
    Vec3 lo, hi;
    extent_of(s.shape, lo, hi);
    if ((lo.array() < bounds_min.array() - 1e-12).any() || (hi.array() > bounds_max.array() + 1e-12).any()) {
      throw std::invalid_argument("surface outside the scene bounds");
    }
    has_object = has_object || s.object_id == object_id;
  }
  if (!has_object) throw std::invalid_argument("scene has no object of interest");
}

SyntheticScene make_bunny_proxy(std::uint64_t seed) {
  SyntheticScene s;
  s.name = "bunny-proxy";
  s.seed = seed;
  s.object_id = 1;
  s.center = Vec3(0.0, 0.0, 0.07);
  s.bounds_min = Vec3(-0.3, -0.3, -0.02);
  s.bounds_max = Vec3(0.3, 0.3, 0.3);
  auto& w = s.world.surfaces;
  w.push_back(table_surface(0.3, 0.04));
  const Vec3 fur(0.82, 0.72, 0.55);
  w.push_back({Sphere{Vec3(0.0, 0.0, 0.06), 0.06}, fur, 1, 0.02});
  w.push_back({Sphere{Vec3(0.05, 0.0, 0.12), 0.035}, fur, 1, 0.0});
  w.push_back({Sphere{Vec3(0.06, 0.018, 0.165), 0.014}, Vec3(0.9, 0.6, 0.6), 1, 0.0});
  w.push_back({Sphere{Vec3(0.06, -0.018, 0.165), 0.014}, Vec3(0.9, 0.6, 0.6), 1, 0.0});
  w.push_back({Sphere{Vec3(-0.06, 0.0, 0.04), 0.02}, Vec3(0.95, 0.95, 0.92), 1, 0.0});
  w.push_back({Box{Vec3(0.12, 0.08, 0.0), Vec3(0.19, 0.15, 0.05)}, Vec3(0.2, 0.35, 0.75), 2, 0.0});
  w.push_back({Torus{Vec3(-0.14, -0.1, 0.015), 0.04, 0.015}, Vec3(0.3, 0.7, 0.3), 3, 0.0});
  s.validate();
  return s;
}

SyntheticScene make_hole_object(std::uint64_t seed) {
  SyntheticScene s;
  s.name = "hole-object";
  s.seed = seed;
  s.object_id = 1;
  s.center = Vec3(0.0, 0.0, 0.03);
  s.bounds_min = Vec3(-0.2, -0.2, -0.02);
  s.bounds_max = Vec3(0.2, 0.2, 0.1);
  auto& w = s.world.surfaces;
  w.push_back(table_surface(0.2, 0.03));
  const Vec3 c(0.55, 0.4, 0.8);
  // 12 x 12 x 6 cm block with a 4 x 4 x 2 cm cavity in the top face.
  w.push_back({Box{Vec3(-0.06, -0.06, 0.0), Vec3(0.06, 0.06, 0.04)}, c, 1, 0.015});
  w.push_back({Box{Vec3(-0.06, -0.06, 0.04), Vec3(-0.02, 0.06, 0.06)}, c, 1, 0.015});
  w.push_back({Box{Vec3(0.02, -0.06, 0.04), Vec3(0.06, 0.06, 0.06)}, c, 1, 0.015});
  w.push_back({Box{Vec3(-0.02, -0.06, 0.04), Vec3(0.02, -0.02, 0.06)}, c, 1, 0.015});
  w.push_back({Box{Vec3(-0.02, 0.02, 0.04), Vec3(0.02, 0.06, 0.06)}, c, 1, 0.015});
  s.validate();
  return s;
}

SyntheticScene make_scene(const std::string& name, std::uint64_t seed) {
  if (name == "bunny-proxy") return make_bunny_proxy(seed);
  if (name == "hole-object") return make_hole_object(seed);
  throw std::invalid_argument("unknown scene '" + name + "'");
}

std::vector<CameraView> sample_view_sphere(const ViewSphereParams& p, int n, std::uint64_t seed, int first_id) {
  if (!(p.r_min > 0.0) || p.r_max < p.r_min) throw std::invalid_argument("need 0 < r_min <= r_max");
  if (p.min_elevation_deg > p.max_elevation_deg) throw std::invalid_argument("elevation range is empty");
  p.intrinsics.validate();
  Rng rng(seed);
  std::vector<CameraView> out;
  for (int i = 0; i < n; ++i) {
    const double r = rng.uniform(p.r_min, p.r_max);
    const double el = rng.uniform(p.min_elevation_deg, p.max_elevation_deg) * std::numbers::pi / 180.0;
    const double az = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const Vec3 eye = p.center + r * Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    CameraView cam;
    cam.id = first_id + i;
    cam.pose = look_at(eye, p.center);
    cam.intrinsics = p.intrinsics;
    out.push_back(std::move(cam));
  }
  return out;
}

std::vector<CameraView> sample_view_sphere(const Vec3& center, double r_min, double r_max, int n,
                                           std::uint64_t seed) {
  ViewSphereParams p;
  p.center = center;
  p.r_min = r_min;
  p.r_max = r_max;
  return sample_view_sphere(p, n, seed);
}

Image simulate_sensor_depth(const Image& gt, double a, double b, std::uint64_t seed, double dropout) {
  if (a < 0.0 || b < 0.0) throw std::invalid_argument("noise coefficients must be non-negative");
  Rng rng(seed);
  Image out = gt;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double d = gt[i];
    if (!std::isfinite(d)) continue;
    const double noise = rng.normal(0.0, a + b * d * d);
    out[i] = rng.uniform() < dropout ? kNaN : d + noise;
  }
  return out;
}

Image simulate_mono_depth(const Image& gt, const Image& segments, std::uint64_t seed, double field_amplitude) {
  if (!gt.same_size(segments)) throw std::invalid_argument("segments must match the depth image");
  Rng phase(derive_seed(seed, 7));
  const double p1 = phase.uniform(0.0, 2.0 * std::numbers::pi);
  const double p2 = phase.uniform(0.0, 2.0 * std::numbers::pi);
  Image out = Image::nan_like(gt.width(), gt.height());
  for (int y = 0; y < gt.height(); ++y) {
    for (int x = 0; x < gt.width(); ++x) {
      const double d = gt.at(x, y);
      if (!std::isfinite(d)) continue;
      const long seg = std::lround(segments.at(x, y));
      Rng affine(derive_seed(seed, static_cast<std::uint64_t>(seg + 1000)));
      const double s = affine.uniform(0.5, 2.0);
      const double t = affine.uniform(-0.5, 0.5);
      const double field = 1.0 + field_amplitude * std::sin(2.0 * std::numbers::pi * x / gt.width() + p1) *
                                     std::sin(2.0 * std::numbers::pi * y / gt.height() + p2);
      out.at(x, y) = (s * d + t) * field;
    }
  }
  return out;
}

CameraView capture_view(const SyntheticScene& scene, CameraView cam, const SensorModel& sensor, std::uint64_t seed) {
  const GroundTruthRender gt = render_ground_truth(scene.world, cam, scene.background);
  MaskedDepthFrame frame;
  frame.sensor_depth =
      simulate_sensor_depth(gt.depth, sensor.noise_a, sensor.noise_b, derive_seed(seed, 1), sensor.dropout);
  frame.mono_depth = simulate_mono_depth(gt.depth, gt.object_id, derive_seed(seed, 2), sensor.mono_field);
  std::set<int> ids;
  for (std::size_t i = 0; i < gt.object_id.size(); ++i) {
    if (gt.object_id[i] >= 0) ids.insert(static_cast<int>(gt.object_id[i]));
  }
  for (int id : ids) {
    if (id == scene.object_id) frame.object_mask_index = static_cast<int>(frame.masks.size());
    frame.masks.push_back(object_mask_from_ids(gt.object_id, id));
  }
  cam.supervision.color = gt.color;
  cam.supervision.aligned_depth = align_frame(frame);
  cam.supervision.sensor_depth = std::move(frame.sensor_depth);
  cam.supervision.mono_depth = std::move(frame.mono_depth);
  cam.supervision.object_mask = object_mask_from_ids(gt.object_id, scene.object_id);
  return cam;
}

std::vector<HeldoutView> make_heldout(const SyntheticScene& scene, const std::vector<CameraView>& cams) {
  std::vector<HeldoutView> out;
  for (const auto& c : cams) out.push_back({c, render_ground_truth(scene.world, c, scene.background)});
  return out;
}

Metrics compute_metrics(const SceneModel& model, const std::vector<HeldoutView>& heldout, int object_id,
                        const RenderSettings& settings) {
  if (heldout.empty()) throw std::invalid_argument("compute_metrics needs held-out views");
  Metrics m;
  int object_views = 0;
  for (const auto& h : heldout) {
    const RenderOutput r = render(model, h.cam, settings);
    double se = 0.0;
    for (std::size_t i = 0; i < r.color.size(); ++i) se += (r.color[i] - h.gt.color[i]) * (r.color[i] - h.gt.color[i]);
    const double mse = se / static_cast<double>(r.color.size());
    m.psnr += mse > 0.0 ? std::min(99.0, 10.0 * std::log10(1.0 / mse)) : 99.0;
    m.ssim += ssim(r.color, h.gt.color);
    double err = 0.0, err_o = 0.0;
    long n = 0, n_o = 0;
    for (std::size_t i = 0; i < r.depth.size(); ++i) {
      if (!std::isfinite(h.gt.depth[i])) continue;
      const double e = std::abs(r.depth[i] - h.gt.depth[i]);
      err += e;
      ++n;
      if (static_cast<int>(h.gt.object_id[i]) == object_id) {
        err_o += e;
        ++n_o;
      }
    }
    m.d_abs += n > 0 ? err / n : 0.0;
    if (n_o > 0) {
      m.d_abs_o += err_o / n_o;
      ++object_views;
    }
  }
  const double k = static_cast<double>(heldout.size());
  m.psnr /= k;
  m.ssim /= k;
  m.d_abs /= k;
  m.d_abs_o = object_views > 0 ? m.d_abs_o / object_views : 0.0;
  return m;
}

void ExperimentSpec::validate() const {
  make_scene(scene, 0);
  if (modes.empty() || seeds.empty()) throw std::invalid_argument("experiment needs modes and seeds");
  for (const auto& m : modes) parse_mode(m);
  if (steps < 0 || view_add_interval <= 0) throw std::invalid_argument("invalid schedule");
  if (n_start_views < 1 || n_candidates < 1 || n_heldout < 1) throw std::invalid_argument("view counts must be positive");
  if (infeasible_rate < 0.0 || infeasible_rate > 1.0) throw std::invalid_argument("infeasible_rate must be in [0,1]");
  loss.validate();
}

SelectionMode parse_mode(const std::string& name) {
  if (name == "random") return SelectionMode::random;
  if (name == "color") return SelectionMode::color;
  if (name == "depth") return SelectionMode::depth;
  if (name == "combined") return SelectionMode::combined;
  throw std::invalid_argument("unknown selection mode '" + name + "'");
}

std::string mode_name(SelectionMode mode) {
  switch (mode) {
    case SelectionMode::random: return "random";
    case SelectionMode::color: return "color";
    case SelectionMode::depth: return "depth";
    case SelectionMode::combined: return "combined";
  }
  return "?";
}

namespace {

SceneModel lift_views(const std::vector<CameraView>& views, double fraction, std::uint64_t seed,
                      const Vec3& background) {
  SceneModel model;
  model.background = background;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const auto& sup = views[i].supervision;
    const Image* mask = sup.object_mask ? &*sup.object_mask : nullptr;
    for (auto& g : lift_depth(*sup.aligned_depth, views[i], fraction, derive_seed(seed, 200 + i), mask)) {
      model.gaussians.push_back(g);
    }
  }
  return model;
}

}  // namespace

SeedSetup prepare_seed(const ExperimentSpec& spec, std::uint64_t seed) {
  SeedSetup s;
  s.world = make_scene(spec.scene, seed);
  s.views = spec.views;
  s.views.center = s.world.center;
  s.start_views = sample_view_sphere(s.views, spec.n_start_views, derive_seed(seed, 1), 0);
  for (auto& v : s.start_views) v = capture_view(s.world, v, spec.sensor, derive_seed(seed, 100 + v.id));
  s.heldout = make_heldout(s.world, sample_view_sphere(s.views, spec.n_heldout, derive_seed(seed, 2), 1000000));
  s.initial = lift_views(s.start_views, spec.lift_fraction, seed, s.world.background);
  return s;
}

std::vector<CandidateView> event_candidates(const ExperimentSpec& spec, const SeedSetup& setup, std::uint64_t seed,
                                            int event_index) {
  const int first_id = 1000 + event_index * spec.n_candidates;
  const auto cams = sample_view_sphere(setup.views, spec.n_candidates,
                                       derive_seed(seed, 300 + static_cast<std::uint64_t>(event_index)), first_id);
  Rng feasibility(derive_seed(seed, 400 + static_cast<std::uint64_t>(event_index)));
  std::vector<CandidateView> out;
  for (const auto& c : cams) out.push_back({c.id, c, feasibility.uniform() >= spec.infeasible_rate});
  return out;
}

TrainConfig experiment_train_config(const ExperimentSpec& spec, std::uint64_t seed) {
  TrainConfig c;
  c.total_steps = spec.steps;
  c.view_add_interval = spec.view_add_interval;
  c.seed = seed;
  c.lift_fraction = spec.lift_fraction;
  c.loss = spec.loss;
  c.scene_extent = spec.views.r_max;
  return c;
}

RunReport run_single(const ExperimentSpec& spec, const SeedSetup& setup, std::uint64_t seed, const std::string& mode) {
  TrainingSchedule schedule;
  schedule.config = experiment_train_config(spec, seed);
  schedule.selection.mode = parse_mode(mode);
  schedule.selection.alpha = spec.alpha;
  schedule.selection.beta = spec.beta;
  schedule.selection.fisher.render = schedule.config.render;
  RunReport report;
  report.mode = mode;
  report.seed = seed;
  schedule.candidates = [&](int k) {
    auto c = event_candidates(spec, setup, seed, k);
    std::vector<int> ids;
    for (const auto& v : c) ids.push_back(v.id);
    report.candidate_ids.push_back(std::move(ids));
    return c;
  };
  schedule.payload = [&](const CandidateView& chosen) {
    return capture_view(setup.world, chosen.cam, spec.sensor, derive_seed(seed, 100 + chosen.id));
  };
  TrainingRun run = run_training(setup.initial, setup.start_views, schedule);
  for (const auto& v : run.views) {
    for (const auto& h : setup.heldout) {
      if (h.cam.id == v.id) throw std::logic_error("held-out view entered training");
    }
    report.training_view_ids.push_back(v.id);
  }
  report.metrics = compute_metrics(run.scene, setup.heldout, setup.world.object_id);
  report.events = std::move(run.events);
  report.scene = std::move(run.scene);
  return report;
}

namespace {

void accumulate(Metrics& sum, const Metrics& m, double w) {
  sum.psnr += w * m.psnr;
  sum.ssim += w * m.ssim;
  sum.d_abs += w * m.d_abs;
  sum.d_abs_o += w * m.d_abs_o;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  ExperimentReport report;
  for (auto seed : spec.seeds) {
    const SeedSetup setup = prepare_seed(spec, seed);
    for (const auto& mode : spec.modes) report.runs.push_back(run_single(spec, setup, seed, mode));
  }
  for (const auto& mode : spec.modes) {
    ModeAggregate agg;
    agg.mode = mode;
    std::vector<const Metrics*> ms;
    for (const auto& r : report.runs) {
      if (r.mode == mode) ms.push_back(&r.metrics);
    }
    const double n = static_cast<double>(ms.size());
    for (auto* m : ms) accumulate(agg.mean, *m, 1.0 / n);
    for (auto* m : ms) {
      agg.stddev.psnr += (m->psnr - agg.mean.psnr) * (m->psnr - agg.mean.psnr) / n;
      agg.stddev.ssim += (m->ssim - agg.mean.ssim) * (m->ssim - agg.mean.ssim) / n;
      agg.stddev.d_abs += (m->d_abs - agg.mean.d_abs) * (m->d_abs - agg.mean.d_abs) / n;
      agg.stddev.d_abs_o += (m->d_abs_o - agg.mean.d_abs_o) * (m->d_abs_o - agg.mean.d_abs_o) / n;
    }
    agg.stddev.psnr = std::sqrt(agg.stddev.psnr);
    agg.stddev.ssim = std::sqrt(agg.stddev.ssim);
    agg.stddev.d_abs = std::sqrt(agg.stddev.d_abs);
    agg.stddev.d_abs_o = std::sqrt(agg.stddev.d_abs_o);
    report.aggregates.push_back(agg);
  }
  return report;
}

std::vector<Rigid> touch_candidates(const SyntheticScene& scene, int n, std::uint64_t seed,
                                    std::vector<bool>* covers_hole) {
  // A 3 x 3 grid over the top face, jittered, in seeded order; the centre sits over the cavity.
  Rng rng(seed);
  std::vector<Vec2> xy;
  for (int j = -1; j <= 1; ++j) {
    for (int i = -1; i <= 1; ++i) {
      xy.emplace_back(0.04 * i + rng.uniform(-0.005, 0.005), 0.04 * j + rng.uniform(-0.005, 0.005));
    }
  }
  rng.shuffle(xy);
  xy.resize(std::min<std::size_t>(xy.size(), static_cast<std::size_t>(std::max(n, 0))));
  double top = -1e30;
  for (const auto& s : scene.world.surfaces) {
    if (s.object_id != scene.object_id) continue;
    Vec3 lo, hi;
    extent_of(s.shape, lo, hi);
    top = std::max(top, hi.z());
  }
  std::vector<Rigid> out;
  if (covers_hole != nullptr) covers_hole->clear();
  for (const auto& p : xy) {
    const Vec3 eye(p.x(), p.y(), top + 0.005);
    Rigid pose;
    pose.R << 1, 0, 0, 0, -1, 0, 0, 0, -1;
    pose.t = -pose.R * eye;
    out.push_back(pose);
    if (covers_hole != nullptr) covers_hole->push_back(std::abs(p.x()) < 0.02 && std::abs(p.y()) < 0.02);
  }
  return out;
}

TouchExperimentReport run_touch_experiment(const TouchExperimentSpec& spec) {
  const SyntheticScene world = make_hole_object(spec.seed);
  ExperimentSpec vision;
  vision.scene = "hole-object";
  vision.modes = {"depth"};
  vision.seeds = {spec.seed};
  vision.steps = spec.vision_steps;
  vision.view_add_interval = spec.vision_steps + 1;
  vision.n_start_views = spec.n_start_views;
  vision.lift_fraction = spec.lift_fraction;
  vision.views = spec.views;
  vision.sensor = spec.sensor;
  const SeedSetup setup = prepare_seed(vision, spec.seed);

  TrainingSchedule schedule;
  schedule.config = experiment_train_config(vision, spec.seed);
  TrainingRun run = run_training(setup.initial, setup.start_views, schedule);

  TouchExperimentReport report;
  report.before = compute_metrics(run.scene, setup.heldout, world.object_id);

  TouchSchedule touch;
  touch.touches = spec.touches;
  touch.camera = spec.camera;
  std::vector<std::vector<bool>> covers;
  touch.candidates = [&](int k) {
    std::vector<bool> c;
    auto poses = touch_candidates(world, spec.n_touch_candidates,
                                  derive_seed(spec.seed, 700 + static_cast<std::uint64_t>(k)), &c);
    covers.push_back(std::move(c));
    return poses;
  };
  touch.sample = [&](const Rigid& pose, int k) {
    return simulate_touch(world.world, pose, spec.sensor_spec, derive_seed(spec.seed, 800 + static_cast<std::uint64_t>(k)));
  };
  TrainConfig config = schedule.config;
  config.touch_add_interval = spec.touch_interval;
  const std::size_t first_event = run.events.size();
  run_touch_refinement(run, config, touch);
  for (std::size_t i = first_event; i < run.events.size(); ++i) {
    const auto& ev = run.events[i];
    if (ev.event != "select_touch") continue;
    const std::size_t k = i - first_event;
    report.first_touch_covers_hole = covers[k][static_cast<std::size_t>(ev.candidate_index)];
    report.first_touch_scores = ev.touch_scores;
    break;
  }
  report.after = compute_metrics(run.scene, setup.heldout, world.object_id);
  report.events = std::move(run.events);
  report.scene = std::move(run.scene);
  return report;
}

}  // namespace activesplat
