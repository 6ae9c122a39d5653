#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "activesplat/random.hpp"
#include "activesplat/serialization.hpp"

namespace fs = std::filesystem;
using namespace activesplat;

namespace {

// Bad input: exit code 1.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string scene, camera, candidates, config, out = ".", mode = "depth";
  std::uint64_t seed = 0;
  std::optional<double> alpha, beta;
  std::optional<int> steps;
  bool quiet = false;
};

void require_file(const std::string& flag, const std::string& path) {
  if (path.empty()) throw ValidationError(flag + " is required");
  if (!fs::exists(path)) throw ValidationError(flag + ": no such file '" + path + "'");
}

Json read_config(const Options& o) {
  if (o.config.empty()) return Json::object();
  require_file("--config", o.config);
  try {
    return Json::parse(read_text(o.config));
  } catch (const Json::exception& e) {
    throw ValidationError("--config: " + std::string(e.what()));
  }
}

void log(const Options& o, const std::string& msg) {
  if (!o.quiet) std::cerr << msg << "\n";
}

void finish(const Options& o, const std::string& cmd, Json config, const std::vector<std::string>& outputs) {
  config["flags"] = {{"scene", o.scene}, {"camera", o.camera}, {"candidates", o.candidates}, {"config", o.config},
                     {"mode", o.mode}};
  if (o.alpha) config["flags"]["alpha"] = *o.alpha;
  if (o.beta) config["flags"]["beta"] = *o.beta;
  if (o.steps) config["flags"]["steps"] = *o.steps;
  write_text(fs::path(o.out) / "manifest.json", manifest(cmd, config, o.seed, outputs).dump(1) + "\n");
}

SelectionParams selection_params(const Options& o) {
  SelectionParams p;
  p.mode = parse_mode(o.mode);
  if (o.alpha) p.alpha = *o.alpha;
  if (o.beta) p.beta = *o.beta;
  p.seed = o.seed;
  return p;
}

void cmd_render(const Options& o) {
  require_file("--scene", o.scene);
  require_file("--camera", o.camera);
  const SceneModel scene = load_scene(o.scene);
  const auto cams = load_cameras(o.camera);
  std::vector<std::string> outputs;
  for (const auto& cam : cams) {
    const RenderOutput r = render(scene, cam);
    const std::string suffix = cams.size() > 1 ? "_" + std::to_string(cam.id) : "";
    const fs::path dir(o.out);
    fs::create_directories(dir);
    write_ppm(dir / ("color" + suffix + ".ppm"), r.color);
    write_depth(dir / ("depth" + suffix + ".depth"), r.depth);
    write_pgm(dir / ("alpha" + suffix + ".pgm"), r.alpha);
    write_pgm(dir / ("mask" + suffix + ".pgm"), r.mask);
    for (const char* f : {"color", "depth", "alpha", "mask"}) {
      outputs.push_back(std::string(f) + suffix + (std::string(f) == "color" ? ".ppm" : std::string(f) == "depth" ? ".depth" : ".pgm"));
    }
    log(o, "rendered camera " + std::to_string(cam.id));
  }
  finish(o, "render", {{"scene_hash", content_hash(read_text(o.scene))}, {"camera_hash", content_hash(read_text(o.camera))}},
         outputs);
}

// --config: {"sensor_depth": file, "mono_depth": file, "masks": [files], "object_mask_index": k}
void cmd_align(const Options& o) {
  const Json cfg = read_config(o);
  if (!cfg.contains("sensor_depth") || !cfg.contains("mono_depth")) {
    throw ValidationError("--config must name sensor_depth and mono_depth files");
  }
  const fs::path base = fs::path(o.config).parent_path();
  MaskedDepthFrame frame;
  frame.sensor_depth = read_depth(base / cfg.at("sensor_depth").get<std::string>());
  frame.mono_depth = read_depth(base / cfg.at("mono_depth").get<std::string>());
  std::vector<fs::path> mask_files;
  for (const auto& m : cfg.value("masks", Json::array())) mask_files.push_back(base / m.get<std::string>());
  frame.masks = propagate_object_mask(mask_files);
  if (cfg.contains("object_mask_index")) frame.object_mask_index = cfg.at("object_mask_index").get<int>();
  const AffineAlignment a = fit_frame(frame);
  const Image aligned = apply_alignment(frame, a);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  write_depth(dir / "aligned.depth", aligned);
  Json fits = Json::array();
  for (const auto& m : a.per_mask) {
    fits.push_back(m ? Json{{"scale", m->scale}, {"offset", m->offset}} : Json(nullptr));
  }
  write_text(dir / "alignment.json",
             Json{{"global", {{"scale", a.global.scale}, {"offset", a.global.offset}}}, {"masks", fits}}.dump(1) + "\n");
  finish(o, "align", cfg, {"aligned.depth", "alignment.json"});
}

void cmd_train(const Options& o) {
  require_file("--scene", o.scene);
  require_file("--camera", o.camera);
  TrainConfig config = train_config_from_json(read_config(o));
  if (o.steps) config.total_steps = *o.steps;
  config.seed = o.seed;
  config.validate();
  TrainingSchedule schedule;
  schedule.config = config;
  schedule.selection = selection_params(o);
  std::vector<CandidateView> pool;
  if (!o.candidates.empty()) {
    require_file("--candidates", o.candidates);
    pool = load_candidates(o.candidates);
  }
  std::set<int> used;
  schedule.candidates = [&](int) {
    std::vector<CandidateView> out;
    for (const auto& c : pool) {
      if (!used.count(c.id)) out.push_back(c);
    }
    return out;
  };
  schedule.payload = [&](const CandidateView& c) {
    used.insert(c.id);
    return c.cam;
  };
  log(o, "training " + std::to_string(config.total_steps) + " steps");
  const TrainingRun run = run_training(load_scene(o.scene), load_cameras(o.camera), schedule);
  const fs::path dir(o.out);
  save_scene(dir / "scene.json", run.scene);
  write_text(dir / "events.jsonl", event_log(run.events));
  finish(o, "train", train_config_to_json(config), {"scene.json", "events.jsonl"});
}

HessianDiagonal train_diag(const SceneModel& scene, const std::vector<CameraView>& views, FisherChannel ch) {
  if (views.empty()) {
    HessianDiagonal h;
    h.values.assign(scene.parameter_count(), 0.0);
    h.channel = ch;
    return h;
  }
  return accumulate_train_hessian(scene, views, ch);
}

void cmd_select_view(const Options& o) {
  require_file("--scene", o.scene);
  require_file("--candidates", o.candidates);
  const SceneModel scene = load_scene(o.scene);
  const auto candidates = load_candidates(o.candidates);
  std::vector<CameraView> train;
  if (!o.camera.empty()) {
    require_file("--camera", o.camera);
    train = load_cameras(o.camera);
  }
  SelectionParams p = selection_params(o);
  // Report every channel even when the mode ranks by one of them.
  const SelectionMode ranking = p.mode;
  if (p.mode != SelectionMode::random) p.mode = SelectionMode::combined;
  const HessianDiagonal hc = train_diag(scene, train, FisherChannel::color);
  const HessianDiagonal hd = train_diag(scene, train, FisherChannel::depth);
  Selection sel = select_next_view(candidates, scene, hc, hd, p);
  if (ranking == SelectionMode::color || ranking == SelectionMode::depth) {
    sel.chosen = candidates[best_feasible(
        sel.scores, ranking == SelectionMode::color ? &CandidateScore::color : &CandidateScore::depth)];
  }
  const std::string csv = scores_csv(sel.scores);
  std::cout << csv << "chosen," << sel.chosen.id << "\n";
  write_text(fs::path(o.out) / "scores.csv", csv);
  finish(o, "select-view", {{"scene_hash", content_hash(read_text(o.scene))}, {"chosen", sel.chosen.id}}, {"scores.csv"});
}

void cmd_select_touch(const Options& o) {
  require_file("--scene", o.scene);
  require_file("--candidates", o.candidates);
  const SceneModel scene = load_scene(o.scene);
  std::vector<Rigid> poses;
  const Json j = Json::parse(read_text(o.candidates));
  if (!j.contains("candidates")) throw ValidationError("--candidates: expected {\"candidates\": [...]}");
  for (const auto& c : j.at("candidates")) {
    Json cam = c;
    cam["intrinsics"] = {{"fx", 1}, {"fy", 1}, {"cx", 0}, {"cy", 0}, {"width", 1}, {"height", 1}};
    poses.push_back(camera_from_json(cam).pose);
  }
  std::vector<CameraView> train;
  if (!o.camera.empty()) {
    require_file("--camera", o.camera);
    train = load_cameras(o.camera);
  }
  const TouchCameraConfig touch;
  FisherOptions fo;
  fo.render = touch.render;
  HessianDiagonal hd = train.empty() ? train_diag(scene, train, FisherChannel::depth)
                                     : accumulate_train_hessian(scene, train, FisherChannel::depth, fo);
  const TouchSelection sel = select_next_touch(poses, scene, hd, touch);
  std::ostringstream csv;
  csv << "# activesplat-touch-scores v1\nindex,score\n" << std::setprecision(17);
  for (std::size_t i = 0; i < sel.scores.size(); ++i) csv << i << ',' << sel.scores[i] << '\n';
  std::cout << csv.str() << "chosen," << sel.index << "\n";
  write_text(fs::path(o.out) / "touch_scores.csv", csv.str());
  finish(o, "select-touch", {{"scene_hash", content_hash(read_text(o.scene))}, {"chosen", sel.index}},
         {"touch_scores.csv"});
}

Json camera_entry(const CameraView& cam, const std::string& prefix, bool with_payload) {
  Json j = camera_to_json(cam);
  if (with_payload) {
    j["color"] = prefix + "_color.ppm";
    j["sensor_depth"] = prefix + "_sensor.depth";
    j["aligned_depth"] = prefix + "_aligned.depth";
    j["mono_depth"] = prefix + "_mono.depth";
    j["object_mask"] = prefix + "_mask.pgm";
  }
  return j;
}

void write_payload(const fs::path& dir, const std::string& prefix, const CameraView& v) {
  const auto& s = v.supervision;
  write_ppm(dir / (prefix + "_color.ppm"), *s.color);
  write_depth(dir / (prefix + "_sensor.depth"), *s.sensor_depth);
  write_depth(dir / (prefix + "_aligned.depth"), *s.aligned_depth);
  write_depth(dir / (prefix + "_mono.depth"), *s.mono_depth);
  write_pgm(dir / (prefix + "_mask.pgm"), *s.object_mask);
}

// --scene names a synthetic world; --config may set n_views, n_candidates, n_heldout, lift_fraction.
void cmd_simulate(const Options& o) {
  if (o.scene.empty()) throw ValidationError("--scene is required (bunny-proxy or hole-object)");
  const Json cfg = read_config(o);
  ExperimentSpec spec;
  spec.scene = o.scene;
  spec.n_start_views = cfg.value("n_views", spec.n_start_views);
  spec.n_candidates = cfg.value("n_candidates", spec.n_candidates);
  spec.n_heldout = cfg.value("n_heldout", 5);
  spec.lift_fraction = cfg.value("lift_fraction", spec.lift_fraction);
  spec.validate();
  const SeedSetup setup = prepare_seed(spec, o.seed);
  const fs::path dir(o.out);
  fs::create_directories(dir);
  Json views = Json::array();
  for (const auto& v : setup.start_views) {
    const std::string prefix = "view" + std::to_string(v.id);
    write_payload(dir, prefix, v);
    views.push_back(camera_entry(v, prefix, true));
  }
  Json cands = Json::array();
  for (const auto& c : event_candidates(spec, setup, o.seed, 0)) {
    const CameraView v = capture_view(setup.world, c.cam, spec.sensor, derive_seed(o.seed, 100 + c.id));
    const std::string prefix = "cand" + std::to_string(c.id);
    write_payload(dir, prefix, v);
    Json e = camera_entry(v, prefix, true);
    e["feasible"] = c.feasible;
    cands.push_back(e);
  }
  Json held = Json::array();
  for (const auto& h : setup.heldout) {
    const std::string prefix = "heldout" + std::to_string(h.cam.id);
    write_ppm(dir / (prefix + "_color.ppm"), h.gt.color);
    write_depth(dir / (prefix + "_depth.depth"), h.gt.depth);
    write_pgm(dir / (prefix + "_mask.pgm"), object_mask_from_ids(h.gt.object_id, setup.world.object_id));
    Json e = camera_to_json(h.cam);
    e["color"] = prefix + "_color.ppm";
    e["sensor_depth"] = prefix + "_depth.depth";
    e["object_mask"] = prefix + "_mask.pgm";
    held.push_back(e);
  }
  write_text(dir / "cameras.json", Json{{"cameras", views}}.dump(1) + "\n");
  write_text(dir / "candidates.json", Json{{"candidates", cands}}.dump(1) + "\n");
  write_text(dir / "heldout.json", Json{{"cameras", held}}.dump(1) + "\n");
  save_scene(dir / "init_scene.json", setup.initial);
  log(o, "wrote " + std::to_string(views.size()) + " views, " + std::to_string(cands.size()) + " candidates");
  finish(o, "simulate", experiment_spec_to_json(spec), {"cameras.json", "candidates.json", "heldout.json", "init_scene.json"});
}

void cmd_experiment(const Options& o) {
  ExperimentSpec spec = experiment_spec_from_json(read_config(o));
  if (!o.scene.empty()) spec.scene = o.scene;
  if (o.steps) spec.steps = *o.steps;
  if (o.alpha) spec.alpha = *o.alpha;
  if (o.beta) spec.beta = *o.beta;
  if (!o.config.empty() && o.seed != 0) spec.seeds = {o.seed};
  spec.validate();
  const fs::path dir(o.out);
  fs::create_directories(dir);
  ExperimentReport report;
  std::ostringstream csv;
  csv << "# activesplat-runs v1\nmode,seed,psnr,ssim,d_abs,d_abs_o\n" << std::setprecision(17);
  std::vector<std::string> outputs{"runs.csv", "aggregate.json"};
  for (auto seed : spec.seeds) {
    const SeedSetup setup = prepare_seed(spec, seed);
    for (const auto& mode : spec.modes) {
      log(o, "seed " + std::to_string(seed) + " mode " + mode);
      RunReport r = run_single(spec, setup, seed, mode);
      const std::string tag = mode + "_" + std::to_string(seed);
      write_text(dir / ("events_" + tag + ".jsonl"), event_log(r.events));
      save_scene(dir / ("scene_" + tag + ".json"), r.scene);
      outputs.push_back("events_" + tag + ".jsonl");
      outputs.push_back("scene_" + tag + ".json");
      csv << mode << ',' << seed << ',' << r.metrics.psnr << ',' << r.metrics.ssim << ',' << r.metrics.d_abs << ','
          << r.metrics.d_abs_o << '\n';
      report.runs.push_back(std::move(r));
    }
  }
  write_text(dir / "runs.csv", csv.str());
  Json agg = Json::array();
  for (const auto& mode : spec.modes) {
    std::vector<Metrics> ms;
    for (const auto& r : report.runs) {
      if (r.mode == mode) ms.push_back(r.metrics);
    }
    Metrics mean;
    for (const auto& m : ms) {
      mean.psnr += m.psnr / ms.size();
      mean.ssim += m.ssim / ms.size();
      mean.d_abs += m.d_abs / ms.size();
      mean.d_abs_o += m.d_abs_o / ms.size();
    }
    Metrics sd;
    for (const auto& m : ms) {
      sd.psnr += (m.psnr - mean.psnr) * (m.psnr - mean.psnr) / ms.size();
      sd.ssim += (m.ssim - mean.ssim) * (m.ssim - mean.ssim) / ms.size();
      sd.d_abs += (m.d_abs - mean.d_abs) * (m.d_abs - mean.d_abs) / ms.size();
      sd.d_abs_o += (m.d_abs_o - mean.d_abs_o) * (m.d_abs_o - mean.d_abs_o) / ms.size();
    }
    sd.psnr = std::sqrt(sd.psnr);
    sd.ssim = std::sqrt(sd.ssim);
    sd.d_abs = std::sqrt(sd.d_abs);
    sd.d_abs_o = std::sqrt(sd.d_abs_o);
    agg.push_back({{"mode", mode}, {"runs", ms.size()}, {"mean", metrics_to_json(mean)}, {"std", metrics_to_json(sd)}});
  }
  write_text(dir / "aggregate.json", agg.dump(1) + "\n");
  std::cout << csv.str();
  finish(o, "experiment", experiment_spec_to_json(spec), outputs);
}

void cmd_eval(const Options& o) {
  require_file("--scene", o.scene);
  require_file("--camera", o.camera);
  const SceneModel scene = load_scene(o.scene);
  std::vector<HeldoutView> heldout;
  for (const auto& cam : load_cameras(o.camera)) {
    const auto& s = cam.supervision;
    if (!s.color || !s.sensor_depth) throw ValidationError("eval cameras need color and sensor_depth files");
    GroundTruthRender gt{*s.color, *s.sensor_depth, Image(cam.intrinsics.width, cam.intrinsics.height, 1, 0.0)};
    for (std::size_t i = 0; i < gt.object_id.size(); ++i) {
      if (!std::isfinite(gt.depth[i])) {
        gt.object_id[i] = -1.0;
      } else if (s.object_mask && (*s.object_mask)[i] > 0.5) {
        gt.object_id[i] = 1.0;
      }
    }
    heldout.push_back({cam, gt});
  }
  const Metrics m = compute_metrics(scene, heldout, 1);
  const Json j = metrics_to_json(m);
  std::cout << j.dump(1) << "\n";
  write_text(fs::path(o.out) / "metrics.json", j.dump(1) + "\n");
  finish(o, "eval", {{"scene_hash", content_hash(read_text(o.scene))}, {"camera_hash", content_hash(read_text(o.camera))}},
         {"metrics.json"});
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active Gaussian splatting toolkit"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON configuration file");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--seed", o.seed, "Random seed");
    sub->add_flag("--quiet", o.quiet, "Suppress progress messages");
  };
  std::map<std::string, std::function<void(const Options&)>> handlers{
      {"render", cmd_render}, {"align", cmd_align},           {"train", cmd_train},           {"select-view", cmd_select_view},
      {"select-touch", cmd_select_touch}, {"simulate", cmd_simulate}, {"experiment", cmd_experiment}, {"eval", cmd_eval}};
  auto* render = app.add_subcommand("render", "Render a scene from cameras");
  render->add_option("--scene", o.scene)->required();
  render->add_option("--camera", o.camera)->required();
  auto* align = app.add_subcommand("align", "Align monocular depth to sensor depth per mask");
  auto* train = app.add_subcommand("train", "Train a scene on views");
  train->add_option("--scene", o.scene)->required();
  train->add_option("--camera", o.camera)->required();
  train->add_option("--candidates", o.candidates);
  train->add_option("--mode", o.mode);
  train->add_option("--alpha", o.alpha);
  train->add_option("--beta", o.beta);
  train->add_option("--steps", o.steps);
  auto* select = app.add_subcommand("select-view", "Score candidate views");
  select->add_option("--scene", o.scene)->required();
  select->add_option("--candidates", o.candidates)->required();
  select->add_option("--camera", o.camera, "Training views for the train Hessian");
  select->add_option("--mode", o.mode);
  select->add_option("--alpha", o.alpha);
  select->add_option("--beta", o.beta);
  auto* touch = app.add_subcommand("select-touch", "Score candidate touch poses");
  touch->add_option("--scene", o.scene)->required();
  touch->add_option("--candidates", o.candidates)->required();
  touch->add_option("--camera", o.camera, "Training views for the train Hessian");
  auto* simulate = app.add_subcommand("simulate", "Write a synthetic dataset");
  simulate->add_option("--scene", o.scene, "bunny-proxy or hole-object")->required();
  auto* experiment = app.add_subcommand("experiment", "Run the closed-loop A/B experiment");
  experiment->add_option("--scene", o.scene);
  experiment->add_option("--mode", o.mode);
  experiment->add_option("--steps", o.steps);
  experiment->add_option("--alpha", o.alpha);
  experiment->add_option("--beta", o.beta);
  auto* eval = app.add_subcommand("eval", "Evaluate a scene on held-out views");
  eval->add_option("--scene", o.scene)->required();
  eval->add_option("--camera", o.camera)->required();
  for (auto* s : {render, align, train, select, touch, simulate, experiment, eval}) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }
  try {
    for (auto* s : app.get_subcommands()) handlers.at(s->get_name())(o);
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}
