#include "activesplat/touch.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "activesplat/random.hpp"

namespace activesplat {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Vec3 fisheye_ray(const TouchSensorSpec& spec, int x, int y, double* theta_out) {
  const double dx = x - spec.cx, dy = y - spec.cy;
  const double r = std::hypot(dx, dy);
  const double theta = r / spec.focal;
  *theta_out = theta;
  if (r < 1e-15) return Vec3::UnitZ();
  const double s = std::sin(theta) / r;
  return Vec3(dx * s, dy * s, std::cos(theta));
}

struct Projected {
  double u, v, depth;
};

bool project(const CameraView& cam, const Vec3& p, Projected& out) {
  const Intrinsics& K = cam.intrinsics;
  if (cam.model == ProjectionModel::pinhole) {
    if (p.z() <= kZNear) return false;
    out = {K.fx * p.x() / p.z() + K.cx, K.fy * p.y() / p.z() + K.cy, p.z()};
    return true;
  }
  const double rho = std::hypot(p.x(), p.y());
  const double theta = std::atan2(rho, p.z());
  const double k = rho > 0.0 ? theta / rho : 0.0;
  out = {K.fx * p.x() * k + K.cx, K.fy * p.y() * k + K.cy, p.norm()};
  return true;
}

}  // namespace

TouchSample simulate_touch(const World& world, const Rigid& pose, const TouchSensorSpec& spec, std::uint64_t seed) {
  TouchSample sample{pose, Image::nan_like(spec.width, spec.height), spec};
  Rng rng(seed);
  const Vec3 origin = pose.center();
  const Mat3 Rt = pose.R.transpose();
  bool any = false;
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      double theta = 0.0;
      const Vec3 dir = fisheye_ray(spec, x, y, &theta);
      if (theta > spec.max_theta) continue;
      const auto hit = world.cast({origin, Rt * dir}, spec.max_range);
      if (!hit) continue;
      sample.fisheye_depth.at(x, y) = hit->hit.distance + rng.normal(0.0, spec.noise_sigma);
      any = true;
    }
  }
  if (!any) throw EmptyTouch("touch sensor registered no contact");
  return sample;
}

TouchPoints backproject_and_filter(const TouchSample& sample) {
  const TouchSensorSpec& spec = sample.spec;
  TouchPoints out;
  out.grid_width = sample.fisheye_depth.width();
  out.grid_height = sample.fisheye_depth.height();
  for (int y = 0; y < out.grid_height; ++y) {
    for (int x = 0; x < out.grid_width; ++x) {
      const double d = sample.fisheye_depth.at(x, y);
      if (!std::isfinite(d)) continue;
      if (std::hypot(x - spec.cx, y - spec.cy) > spec.r_max) continue;
      double theta = 0.0;
      const Vec3 p = d * fisheye_ray(spec, x, y, &theta);
      if (p.z() < spec.z_min || p.z() > spec.z_max) continue;
      out.points.push_back(p);
      out.pixels.emplace_back(x, y);
    }
  }
  return out;
}

TouchRaster triangulate_and_rasterize(const TouchPoints& pts, const Rigid& sensor_to_target,
                                      const CameraView& target) {
  const int W = target.intrinsics.width, H = target.intrinsics.height;
  TouchRaster out{Image::nan_like(W, H), Image(W, H, 1), 0};
  std::vector<int> lookup(static_cast<std::size_t>(pts.grid_width) * pts.grid_height, -1);
  for (std::size_t i = 0; i < pts.pixels.size(); ++i) {
    const auto [x, y] = pts.pixels[i];
    lookup[static_cast<std::size_t>(y) * pts.grid_width + x] = static_cast<int>(i);
  }
  auto at = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= pts.grid_width || y >= pts.grid_height) return -1;
    return lookup[static_cast<std::size_t>(y) * pts.grid_width + x];
  };

  std::vector<Projected> proj(pts.points.size());
  std::vector<bool> ok(pts.points.size());
  for (std::size_t i = 0; i < pts.points.size(); ++i) {
    ok[i] = project(target, sensor_to_target.apply(pts.points[i]), proj[i]);
  }

  auto raster = [&](int ia, int ib, int ic) {
    if (ia < 0 || ib < 0 || ic < 0 || !ok[ia] || !ok[ib] || !ok[ic]) return;
    const Projected &a = proj[ia], &b = proj[ib], &c = proj[ic];
    const double area = (b.u - a.u) * (c.v - a.v) - (b.v - a.v) * (c.u - a.u);
    if (std::abs(area) < 1e-18) return;
    ++out.triangles;
    const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({a.u, b.u, c.u}) - 1e-9)));
    const int x1 = std::min(W - 1, static_cast<int>(std::floor(std::max({a.u, b.u, c.u}) + 1e-9)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({a.v, b.v, c.v}) - 1e-9)));
    const int y1 = std::min(H - 1, static_cast<int>(std::floor(std::max({a.v, b.v, c.v}) + 1e-9)));
    constexpr double kEdgeTol = 1e-9;
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double wa = ((b.u - x) * (c.v - y) - (b.v - y) * (c.u - x)) / area;
        const double wb = ((c.u - x) * (a.v - y) - (c.v - y) * (a.u - x)) / area;
        const double wc = 1.0 - wa - wb;
        if (wa < -kEdgeTol || wb < -kEdgeTol || wc < -kEdgeTol) continue;
        const double ca = std::clamp(wa, 0.0, 1.0), cb = std::clamp(wb, 0.0, 1.0), cc = std::clamp(wc, 0.0, 1.0);
        const double d = (ca * a.depth + cb * b.depth + cc * c.depth) / (ca + cb + cc);
        double& dst = out.depth.at(x, y);
        if (!std::isfinite(dst) || d < dst) dst = d;
      }
    }
  };

  for (int y = 0; y + 1 < pts.grid_height; ++y) {
    for (int x = 0; x + 1 < pts.grid_width; ++x) {
      const int p00 = at(x, y), p10 = at(x + 1, y), p01 = at(x, y + 1), p11 = at(x + 1, y + 1);
      raster(p00, p10, p01);
      raster(p10, p11, p01);
    }
  }
  if (out.triangles == 0) throw EmptyTouch("touch points form no triangles");
  for (std::size_t i = 0; i < out.depth.size(); ++i) out.valid[i] = std::isfinite(out.depth[i]) ? 1.0 : 0.0;
  return out;
}

CameraView touch_camera(const Rigid& sensor_pose, const TouchCameraConfig& config, double distance) {
  CameraView cam;
  cam.intrinsics = config.intrinsics;
  cam.pose = sensor_pose;
  cam.pose.t.z() += distance;
  cam.depth_only = true;
  return cam;
}

RetreatedView retreat_touch_view(const CameraView& cam, const SceneModel& scene, const TouchCameraConfig& config) {
  for (int step = 0; step <= config.retreat_max_steps; ++step) {
    CameraView probe = cam;
    probe.pose.t.z() += step * config.retreat_step;
    const RenderOutput r = render(scene, probe, config.render);
    double mean_alpha = 0.0;
    for (std::size_t i = 0; i < r.alpha.size(); ++i) mean_alpha += r.alpha[i];
    mean_alpha /= static_cast<double>(r.alpha.size());
    if (mean_alpha > config.retreat_min_alpha) return {probe, step};
  }
  throw RetreatFailed("no rendered surface within the retreat limit");
}

std::vector<bool> object_gaussians(const SceneModel& scene) {
  std::vector<bool> out(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) out[i] = scene.gaussians[i].mask() > 0.5;
  return out;
}

TouchSelection select_next_touch(const std::vector<Rigid>& candidate_poses, const SceneModel& scene,
                                 const HessianDiagonal& train_depth, const TouchCameraConfig& config,
                                 double lambda_prior) {
  if (train_depth.values.size() != scene.parameter_count()) {
    throw std::invalid_argument("select_next_touch: train diagonal does not match the scene");
  }
  // The pseudo touch view sees only the object; other Gaussians are ignored entirely.
  const std::vector<bool> is_object = object_gaussians(scene);
  SceneModel object_scene;
  object_scene.background = scene.background;
  std::vector<std::size_t> object_index;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (is_object[i]) {
      object_scene.gaussians.push_back(scene.gaussians[i]);
      object_index.push_back(i);
    }
  }
  if (object_scene.size() == 0) throw NoFeasibleTouch("scene has no object Gaussians");

  FisherOptions opts;
  opts.lambda_prior = lambda_prior;
  opts.render = config.render;
  TouchSelection out;
  out.scores.assign(candidate_poses.size(), std::numeric_limits<double>::quiet_NaN());
  out.retreated.resize(candidate_poses.size());
  bool found = false;
  for (std::size_t c = 0; c < candidate_poses.size(); ++c) {
    RetreatedView rv;
    try {
      rv = retreat_touch_view(touch_camera(candidate_poses[c], config, 0.0), object_scene, config);
    } catch (const RetreatFailed&) {
      continue;
    }
    const HessianDiagonal acq = compute_hessian_diag(object_scene, rv.cam, FisherChannel::depth, opts);
    double score = 0.0;
    for (std::size_t k = 0; k < object_index.size(); ++k) {
      const std::size_t base = object_index[k] * param::kPerGaussian;
      for (int j = 0; j < param::kPerGaussian; ++j) {
        score += acq.values[k * param::kPerGaussian + j] / (train_depth.values[base + j] + train_depth.lambda_prior);
      }
    }
    out.scores[c] = score;
    out.retreated[c] = rv.cam;
    if (!found || score > out.scores[out.index]) {
      out.index = c;
      found = true;
    }
  }
  if (!found) throw NoFeasibleTouch("every touch candidate failed to retreat to a visible surface");
  return out;
}

TouchViewResult add_touch_view(SceneModel& scene, const TouchSample& sample, int view_id,
                               const TouchCameraConfig& config, std::uint64_t seed) {
  const TouchPoints pts = backproject_and_filter(sample);
  if (pts.points.empty()) throw EmptyTouch("no touch points survived filtering");
  TouchViewResult out;
  out.view = touch_camera(sample.pose, config, config.standoff);
  out.view.id = view_id;
  Rigid sensor_to_target;
  sensor_to_target.t = Vec3(0.0, 0.0, config.standoff);
  const TouchRaster raster = triangulate_and_rasterize(pts, sensor_to_target, out.view);
  out.view.supervision.sensor_depth = raster.depth;

  // One Gaussian per 4x4 block of tactile pixels, at the block centroid.
  std::map<std::pair<int, int>, std::vector<std::size_t>> blocks;
  for (std::size_t i = 0; i < pts.points.size(); ++i) {
    blocks[{pts.pixels[i].second / 4, pts.pixels[i].first / 4}].push_back(i);
  }
  std::vector<int> lookup(static_cast<std::size_t>(pts.grid_width) * pts.grid_height, -1);
  for (std::size_t i = 0; i < pts.pixels.size(); ++i) {
    lookup[static_cast<std::size_t>(pts.pixels[i].second) * pts.grid_width + pts.pixels[i].first] =
        static_cast<int>(i);
  }
  const Rigid to_world = sample.pose.inverse();
  Rng rng(seed);
  for (const auto& [key, members] : blocks) {
    Vec3 centroid = Vec3::Zero();
    for (auto i : members) centroid += pts.points[i];
    centroid /= static_cast<double>(members.size());
    double spacing = 0.0;
    int pairs = 0;
    for (auto i : members) {
      const auto [x, y] = pts.pixels[i];
      for (const auto& [nx, ny] : {std::pair{x + 1, y}, std::pair{x, y + 1}}) {
        if (nx >= pts.grid_width || ny >= pts.grid_height) continue;
        const int j = lookup[static_cast<std::size_t>(ny) * pts.grid_width + nx];
        if (j < 0) continue;
        spacing += (pts.points[i] - pts.points[static_cast<std::size_t>(j)]).norm();
        ++pairs;
      }
    }
    spacing = pairs > 0 ? spacing / pairs : centroid.norm() / sample.spec.focal;
    Gaussian3D g;
    g.mean = to_world.apply(centroid);
    g.log_scale = Vec3::Constant(std::log(std::max(spacing, 1e-5)));
    g.opacity_logit = 0.0;
    g.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    g.mask_logit = logit(0.99);
    scene.gaussians.push_back(g);
    ++out.added_gaussians;
  }
  return out;
}

}  // namespace activesplat
