#include "activesplat/serialization.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

namespace activesplat {

namespace fs = std::filesystem;
using OJson = nlohmann::ordered_json;

namespace {

template <class V>
Json vec_json(const V& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

template <int N>
Eigen::Matrix<double, N, 1> json_vec(const Json& j, const char* what) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(N)) {
    throw FormatError(std::string(what) + ": expected an array of " + std::to_string(N) + " numbers");
  }
  Eigen::Matrix<double, N, 1> v;
  for (int i = 0; i < N; ++i) v[i] = j.at(static_cast<std::size_t>(i)).get<double>();
  return v;
}

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const char* what) {
  if (!j.is_object()) throw FormatError(std::string(what) + ": expected an object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!ok.count(it.key())) throw FormatError(std::string(what) + ": unknown key '" + it.key() + "'");
  }
}

template <class T>
void read_opt(const Json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

Json rigid_json(const Rigid& r) {
  Json R = Json::array();
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) R.push_back(r.R(i, k));
  }
  return {{"R", R}, {"t", vec_json(r.t)}};
}

Rigid json_rigid(const Json& j) {
  check_keys(j, {"R", "t"}, "pose");
  const auto& R = j.at("R");
  if (!R.is_array() || R.size() != 9) throw FormatError("pose.R: expected 9 numbers");
  Rigid r;
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 3; ++k) r.R(i, k) = R.at(static_cast<std::size_t>(3 * i + k)).get<double>();
  }
  r.t = json_vec<3>(j.at("t"), "pose.t");
  if ((r.R * r.R.transpose() - Mat3::Identity()).norm() > 1e-6) throw FormatError("pose.R is not orthonormal");
  return r;
}

Json intrinsics_json(const Intrinsics& K) {
  return {{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy}, {"width", K.width}, {"height", K.height}};
}

Intrinsics json_intrinsics(const Json& j) {
  check_keys(j, {"fx", "fy", "cx", "cy", "width", "height"}, "intrinsics");
  Intrinsics K{j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
               j.at("cy").get<double>(), j.at("width").get<int>(), j.at("height").get<int>()};
  K.validate();
  return K;
}

Json to_plain(const OJson& j) { return Json::parse(j.dump()); }

}  // namespace

Json scene_to_json(const SceneModel& scene) {
  Json gs = Json::array();
  for (const auto& g : scene.gaussians) {
    gs.push_back({{"mean", vec_json(g.mean)},
                  {"log_scale", vec_json(g.log_scale)},
                  {"rotation", vec_json(g.rotation)},
                  {"opacity_logit", g.opacity_logit},
                  {"color", vec_json(g.color)},
                  {"mask_logit", g.mask_logit}});
  }
  return {{"format", "activesplat-scene"},
          {"version", kSceneFormatVersion},
          {"background", vec_json(scene.background)},
          {"gaussians", gs}};
}

SceneModel scene_from_json(const Json& j) {
  check_keys(j, {"format", "version", "background", "gaussians"}, "scene");
  if (j.value("format", "") != "activesplat-scene") throw FormatError("scene: not an activesplat scene file");
  if (j.value("version", 0) != kSceneFormatVersion) throw FormatError("scene: unsupported version");
  SceneModel s;
  if (j.contains("background")) s.background = json_vec<3>(j.at("background"), "background");
  for (const auto& g : j.at("gaussians")) {
    check_keys(g, {"mean", "log_scale", "rotation", "opacity_logit", "color", "mask_logit"}, "gaussian");
    Gaussian3D out;
    out.mean = json_vec<3>(g.at("mean"), "mean");
    out.log_scale = json_vec<3>(g.at("log_scale"), "log_scale");
    out.rotation = json_vec<4>(g.at("rotation"), "rotation");
    if (out.rotation.norm() == 0.0) throw FormatError("rotation quaternion is zero");
    out.opacity_logit = g.at("opacity_logit").get<double>();
    out.color = json_vec<3>(g.at("color"), "color");
    out.mask_logit = g.value("mask_logit", 0.0);
    s.gaussians.push_back(out);
  }
  return s;
}

void save_scene(const fs::path& path, const SceneModel& scene) { write_text(path, scene_to_json(scene).dump(1) + "\n"); }

SceneModel load_scene(const fs::path& path) {
  try {
    return scene_from_json(Json::parse(read_text(path)));
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Json camera_to_json(const CameraView& cam) {
  return {{"id", cam.id},
          {"model", cam.model == ProjectionModel::pinhole ? "pinhole" : "fisheye"},
          {"intrinsics", intrinsics_json(cam.intrinsics)},
          {"pose", rigid_json(cam.pose)},
          {"pose_delta", vec_json(cam.pose_delta)},
          {"depth_only", cam.depth_only}};
}

CameraView camera_from_json(const Json& j, const fs::path& base_dir) {
  check_keys(j,
             {"id", "model", "intrinsics", "pose", "eye", "target", "pose_delta", "depth_only", "feasible", "color",
              "sensor_depth", "aligned_depth", "mono_depth", "object_mask"},
             "camera");
  CameraView cam;
  read_opt(j, "id", cam.id);
  const std::string model = j.value("model", "pinhole");
  if (model == "pinhole") {
    cam.model = ProjectionModel::pinhole;
  } else if (model == "fisheye") {
    cam.model = ProjectionModel::fisheye;
  } else {
    throw FormatError("camera: unknown model '" + model + "'");
  }
  cam.intrinsics = json_intrinsics(j.at("intrinsics"));
  if (j.contains("pose")) {
    cam.pose = json_rigid(j.at("pose"));
  } else if (j.contains("eye") && j.contains("target")) {
    cam.pose = look_at(json_vec<3>(j.at("eye"), "eye"), json_vec<3>(j.at("target"), "target"));
  } else {
    throw FormatError("camera: needs 'pose' or 'eye' and 'target'");
  }
  if (j.contains("pose_delta")) cam.pose_delta = json_vec<6>(j.at("pose_delta"), "pose_delta");
  read_opt(j, "depth_only", cam.depth_only);
  auto file = [&](const char* key) { return base_dir / j.at(key).get<std::string>(); };
  if (j.contains("color")) cam.supervision.color = read_ppm(file("color"));
  if (j.contains("sensor_depth")) cam.supervision.sensor_depth = read_depth(file("sensor_depth"));
  if (j.contains("aligned_depth")) cam.supervision.aligned_depth = read_depth(file("aligned_depth"));
  if (j.contains("mono_depth")) cam.supervision.mono_depth = read_depth(file("mono_depth"));
  if (j.contains("object_mask")) cam.supervision.object_mask = read_pgm(file("object_mask"));
  return cam;
}

std::vector<CameraView> load_cameras(const fs::path& path) {
  try {
    const Json j = Json::parse(read_text(path));
    const fs::path base = path.parent_path();
    std::vector<CameraView> out;
    if (j.is_object() && j.contains("cameras")) {
      for (const auto& c : j.at("cameras")) out.push_back(camera_from_json(c, base));
    } else {
      out.push_back(camera_from_json(j, base));
    }
    return out;
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::vector<CandidateView> load_candidates(const fs::path& path) {
  try {
    const Json j = Json::parse(read_text(path));
    if (!j.is_object() || !j.contains("candidates")) throw FormatError(path.string() + ": expected {\"candidates\": [...]}");
    std::vector<CandidateView> out;
    for (const auto& c : j.at("candidates")) {
      CandidateView v;
      v.cam = camera_from_json(c, path.parent_path());
      v.id = v.cam.id;
      v.feasible = c.value("feasible", true);
      out.push_back(std::move(v));
    }
    return out;
  } catch (const Json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

Json loss_config_to_json(const LossConfig& c) {
  return {{"w_photometric", c.w_photometric},
          {"lambda_ssim", c.lambda_ssim},
          {"w_depth", c.w_depth},
          {"depth_mode", c.depth_mode == DepthLossMode::mse ? "mse" : "pearson"},
          {"w_normal", c.w_normal},
          {"w_scale_reg", c.w_scale_reg},
          {"w_mask_bce", c.w_mask_bce},
          {"w_touch", c.w_touch},
          {"max_aniso_ratio", c.max_aniso_ratio},
          {"touch_smooth_radius", c.touch_smooth_radius}};
}

LossConfig loss_config_from_json(const Json& j, LossConfig c) {
  check_keys(j,
             {"w_photometric", "lambda_ssim", "w_depth", "depth_mode", "w_normal", "w_scale_reg", "w_mask_bce",
              "w_touch", "max_aniso_ratio", "touch_smooth_radius"},
             "loss");
  read_opt(j, "w_photometric", c.w_photometric);
  read_opt(j, "lambda_ssim", c.lambda_ssim);
  read_opt(j, "w_depth", c.w_depth);
  if (j.contains("depth_mode")) {
    const auto m = j.at("depth_mode").get<std::string>();
    if (m == "mse") {
      c.depth_mode = DepthLossMode::mse;
    } else if (m == "pearson") {
      c.depth_mode = DepthLossMode::pearson;
    } else {
      throw FormatError("loss.depth_mode must be 'mse' or 'pearson'");
    }
  }
  read_opt(j, "w_normal", c.w_normal);
  read_opt(j, "w_scale_reg", c.w_scale_reg);
  read_opt(j, "w_mask_bce", c.w_mask_bce);
  read_opt(j, "w_touch", c.w_touch);
  read_opt(j, "max_aniso_ratio", c.max_aniso_ratio);
  read_opt(j, "touch_smooth_radius", c.touch_smooth_radius);
  c.validate();
  return c;
}

Json train_config_to_json(const TrainConfig& c) {
  return {{"total_steps", c.total_steps},
          {"view_add_interval", c.view_add_interval},
          {"touch_add_interval", c.touch_add_interval},
          {"lr",
           {{"mean", c.lr.mean},
            {"log_scale", c.lr.log_scale},
            {"rotation", c.lr.rotation},
            {"opacity", c.lr.opacity},
            {"color", c.lr.color},
            {"mask", c.lr.mask},
            {"pose", c.lr.pose}}},
          {"scene_extent", c.scene_extent},
          {"mean_lr_final_factor", c.mean_lr_final_factor},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"prune_opacity_threshold", c.prune_opacity_threshold},
          {"prune_interval", c.prune_interval},
          {"optimize_poses", c.optimize_poses},
          {"lift_fraction", c.lift_fraction},
          {"seed", c.seed},
          {"loss", loss_config_to_json(c.loss)}};
}

TrainConfig train_config_from_json(const Json& j, TrainConfig c) {
  check_keys(j,
             {"total_steps", "view_add_interval", "touch_add_interval", "lr", "scene_extent", "mean_lr_final_factor",
              "beta1", "beta2", "eps", "prune_opacity_threshold", "prune_interval", "optimize_poses", "lift_fraction",
              "seed", "loss"},
             "train config");
  read_opt(j, "total_steps", c.total_steps);
  read_opt(j, "view_add_interval", c.view_add_interval);
  read_opt(j, "touch_add_interval", c.touch_add_interval);
  if (j.contains("lr")) {
    const Json& lr = j.at("lr");
    check_keys(lr, {"mean", "log_scale", "rotation", "opacity", "color", "mask", "pose"}, "lr");
    read_opt(lr, "mean", c.lr.mean);
    read_opt(lr, "log_scale", c.lr.log_scale);
    read_opt(lr, "rotation", c.lr.rotation);
    read_opt(lr, "opacity", c.lr.opacity);
    read_opt(lr, "color", c.lr.color);
    read_opt(lr, "mask", c.lr.mask);
    read_opt(lr, "pose", c.lr.pose);
  }
  read_opt(j, "scene_extent", c.scene_extent);
  read_opt(j, "mean_lr_final_factor", c.mean_lr_final_factor);
  read_opt(j, "beta1", c.beta1);
  read_opt(j, "beta2", c.beta2);
  read_opt(j, "eps", c.eps);
  read_opt(j, "prune_opacity_threshold", c.prune_opacity_threshold);
  read_opt(j, "prune_interval", c.prune_interval);
  read_opt(j, "optimize_poses", c.optimize_poses);
  read_opt(j, "lift_fraction", c.lift_fraction);
  read_opt(j, "seed", c.seed);
  if (j.contains("loss")) c.loss = loss_config_from_json(j.at("loss"), c.loss);
  c.validate();
  return c;
}

Json experiment_spec_to_json(const ExperimentSpec& s) {
  return {{"scene", s.scene},
          {"modes", s.modes},
          {"seeds", s.seeds},
          {"steps", s.steps},
          {"view_add_interval", s.view_add_interval},
          {"n_start_views", s.n_start_views},
          {"n_candidates", s.n_candidates},
          {"alpha", s.alpha},
          {"beta", s.beta},
          {"n_heldout", s.n_heldout},
          {"infeasible_rate", s.infeasible_rate},
          {"lift_fraction", s.lift_fraction},
          {"loss", loss_config_to_json(s.loss)}};
}

ExperimentSpec experiment_spec_from_json(const Json& j) {
  check_keys(j,
             {"scene", "modes", "seeds", "steps", "view_add_interval", "n_start_views", "n_candidates", "alpha", "beta",
              "n_heldout", "infeasible_rate", "lift_fraction", "loss"},
             "experiment");
  ExperimentSpec s;
  read_opt(j, "scene", s.scene);
  read_opt(j, "modes", s.modes);
  read_opt(j, "seeds", s.seeds);
  read_opt(j, "steps", s.steps);
  read_opt(j, "view_add_interval", s.view_add_interval);
  read_opt(j, "n_start_views", s.n_start_views);
  read_opt(j, "n_candidates", s.n_candidates);
  read_opt(j, "alpha", s.alpha);
  read_opt(j, "beta", s.beta);
  read_opt(j, "n_heldout", s.n_heldout);
  read_opt(j, "infeasible_rate", s.infeasible_rate);
  read_opt(j, "lift_fraction", s.lift_fraction);
  if (j.contains("loss")) s.loss = loss_config_from_json(j.at("loss"), s.loss);
  s.validate();
  return s;
}

Json metrics_to_json(const Metrics& m) {
  return {{"psnr", m.psnr}, {"ssim", m.ssim}, {"d_abs", m.d_abs}, {"d_abs_o", m.d_abs_o}};
}

std::string scores_csv(const std::vector<CandidateScore>& scores) {
  std::ostringstream os;
  os << "# activesplat-scores v" << kScoreCsvFormatVersion << "\n";
  os << "id,color,depth,combined,feasible\n";
  os << std::setprecision(17);
  for (const auto& s : scores) {
    os << s.id << ',' << s.color << ',' << s.depth << ',' << s.combined << ',' << (s.feasible ? 1 : 0) << '\n';
  }
  return os.str();
}

std::string event_log_line(const TrainingEvent& e) {
  OJson j;
  j["step"] = e.step;
  j["event"] = e.event;
  j["view_id"] = e.view_id;
  OJson scores = OJson::array();
  for (const auto& s : e.scores) {
    scores.push_back({{"id", s.id}, {"feasible", s.feasible}, {"color", s.color}, {"depth", s.depth},
                      {"combined", s.combined}});
  }
  j["scores"] = scores;
  j["losses"] = {{"total", e.losses.total},       {"photometric", e.losses.photometric},
                 {"depth", e.losses.depth},       {"normal", e.losses.normal},
                 {"scale_reg", e.losses.scale_reg}, {"mask_bce", e.losses.mask_bce},
                 {"touch", e.losses.touch}};
  if (e.event == "prune") j["removed"] = e.removed;
  if (!e.touch_scores.empty()) {
    OJson ts = OJson::array();
    for (double v : e.touch_scores) {
      if (std::isfinite(v)) {
        ts.push_back(v);
      } else {
        ts.push_back(nullptr);
      }
    }
    j["touch_scores"] = ts;
    j["candidate_index"] = e.candidate_index;
  }
  return j.dump();
}

std::string event_log(const std::vector<TrainingEvent>& events) {
  std::string out;
  for (const auto& e : events) out += event_log_line(e) + "\n";
  return out;
}

void save_touch_sample(const fs::path& depth_path, const TouchSample& sample) {
  write_depth(depth_path, sample.fisheye_depth);
  const TouchSensorSpec& s = sample.spec;
  Json j = {{"pose", rigid_json(sample.pose)},
            {"sensor",
             {{"width", s.width},
              {"height", s.height},
              {"focal", s.focal},
              {"cx", s.cx},
              {"cy", s.cy},
              {"max_theta", s.max_theta},
              {"max_range", s.max_range},
              {"noise_sigma", s.noise_sigma},
              {"r_max", s.r_max},
              {"z_min", s.z_min},
              {"z_max", s.z_max}}}};
  write_text(fs::path(depth_path.string() + ".json"), j.dump(1) + "\n");
}

TouchSample load_touch_sample(const fs::path& depth_path) {
  TouchSample out;
  out.fisheye_depth = read_depth(depth_path);
  try {
    const Json j = Json::parse(read_text(fs::path(depth_path.string() + ".json")));
    out.pose = json_rigid(j.at("pose"));
    const Json& s = j.at("sensor");
    read_opt(s, "width", out.spec.width);
    read_opt(s, "height", out.spec.height);
    read_opt(s, "focal", out.spec.focal);
    read_opt(s, "cx", out.spec.cx);
    read_opt(s, "cy", out.spec.cy);
    read_opt(s, "max_theta", out.spec.max_theta);
    read_opt(s, "max_range", out.spec.max_range);
    read_opt(s, "noise_sigma", out.spec.noise_sigma);
    read_opt(s, "r_max", out.spec.r_max);
    read_opt(s, "z_min", out.spec.z_min);
    read_opt(s, "z_max", out.spec.z_max);
  } catch (const Json::exception& e) {
    throw FormatError(depth_path.string() + ".json: " + e.what());
  }
  if (out.fisheye_depth.width() != out.spec.width || out.fisheye_depth.height() != out.spec.height) {
    throw FormatError("touch sample size does not match its sensor description");
  }
  return out;
}

std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

Json manifest(const std::string& subcommand, const Json& config, std::uint64_t seed,
              const std::vector<std::string>& outputs) {
  OJson j;
  j["format"] = "activesplat-manifest";
  j["version"] = kManifestFormatVersion;
  j["subcommand"] = subcommand;
  j["seed"] = seed;
  j["config_hash"] = content_hash(subcommand + "\n" + std::to_string(seed) + "\n" + config.dump());
  j["formats"] = {{"scene", kSceneFormatVersion},
                  {"event_log", kEventLogFormatVersion},
                  {"scores_csv", kScoreCsvFormatVersion},
                  {"depth", depth_header(0, 0).substr(0, 7)},
                  {"image", "PPM P6 / PGM P5, 8-bit"}};
  j["config"] = config;
  j["outputs"] = outputs;
  return to_plain(j);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace activesplat
