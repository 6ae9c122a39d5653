#include "activesplat/depth_alignment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "activesplat/random.hpp"

namespace activesplat {

namespace {

bool inside(const Image& mask, std::size_t i) { return mask.empty() || mask[i] != 0.0; }

void check_frame(const MaskedDepthFrame& f) {
  if (!f.sensor_depth.same_size(f.mono_depth)) throw std::invalid_argument("align_frame: depth sizes differ");
  for (const auto& m : f.masks) {
    if (!m.same_size(f.sensor_depth)) throw std::invalid_argument("align_frame: mask size differs from depth");
  }
}

}  // namespace

Affine align_mask(const Image& sensor, const Image& mono, const Image& mask) {
  if (!sensor.same_size(mono) || (!mask.empty() && !mask.same_size(sensor))) {
    throw std::invalid_argument("align_mask: image sizes differ");
  }
  double n = 0.0, mean_m = 0.0, mean_s = 0.0;
  for (std::size_t i = 0; i < sensor.size(); ++i) {
    if (!inside(mask, i) || !std::isfinite(sensor[i]) || !std::isfinite(mono[i])) continue;
    n += 1.0;
    mean_m += mono[i];
    mean_s += sensor[i];
  }
  if (n < 2.0) throw DegenerateMask("fewer than two valid pixels in mask");
  mean_m /= n;
  mean_s /= n;
  double var = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < sensor.size(); ++i) {
    if (!inside(mask, i) || !std::isfinite(sensor[i]) || !std::isfinite(mono[i])) continue;
    const double dm = mono[i] - mean_m;
    var += dm * dm;
    cov += dm * (sensor[i] - mean_s);
  }
  if (var / n < 1e-12) throw DegenerateMask("monocular depth is constant inside mask");
  const double s = cov / var;
  return {s, mean_s - s * mean_m};
}

AffineAlignment fit_frame(const MaskedDepthFrame& frame) {
  check_frame(frame);
  const Image& sensor = frame.sensor_depth;
  std::size_t valid = 0;
  for (std::size_t i = 0; i < sensor.size(); ++i) valid += std::isfinite(sensor[i]) ? 1 : 0;
  if (valid == 0) throw std::runtime_error("align_frame: sensor depth has no valid pixels");

  AffineAlignment out;
  try {
    out.global = align_mask(sensor, frame.mono_depth, Image());
  } catch (const DegenerateMask&) {
    // Offset-only fallback when the whole frame cannot support a scale.
    double sum = 0.0, n = 0.0;
    for (std::size_t i = 0; i < sensor.size(); ++i) {
      if (std::isfinite(sensor[i]) && std::isfinite(frame.mono_depth[i])) {
        sum += sensor[i] - frame.mono_depth[i];
        n += 1.0;
      }
    }
    out.global = {1.0, n > 0.0 ? sum / n : 0.0};
  }
  for (const auto& m : frame.masks) {
    try {
      out.per_mask.emplace_back(align_mask(sensor, frame.mono_depth, m));
    } catch (const DegenerateMask&) {
      out.per_mask.emplace_back(std::nullopt);
    }
  }
  return out;
}

Image apply_alignment(const MaskedDepthFrame& frame, const AffineAlignment& alignment) {
  const Image& mono = frame.mono_depth;
  // Masks ordered by area so the most specific one claims a pixel first.
  std::vector<std::size_t> order(frame.masks.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> area(frame.masks.size(), 0);
  for (std::size_t k = 0; k < frame.masks.size(); ++k) {
    for (std::size_t i = 0; i < frame.masks[k].size(); ++i) area[k] += frame.masks[k][i] != 0.0 ? 1 : 0;
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return area[a] < area[b]; });

  Image out = Image::nan_like(mono.width(), mono.height());
  for (std::size_t i = 0; i < mono.size(); ++i) {
    if (!std::isfinite(mono[i])) continue;
    const Affine* fit = &alignment.global;
    for (std::size_t k : order) {
      if (frame.masks[k][i] != 0.0) {
        if (alignment.per_mask[k]) fit = &*alignment.per_mask[k];
        break;
      }
    }
    out[i] = fit->apply(mono[i]);
  }
  return out;
}

Image align_frame(const MaskedDepthFrame& frame) { return apply_alignment(frame, fit_frame(frame)); }

std::vector<Gaussian3D> lift_depth(const Image& aligned_depth, const CameraView& cam, double fraction,
                                   std::uint64_t seed, const Image* object_mask) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("lift_depth: fraction must lie in (0,1]");
  const Intrinsics& K = cam.intrinsics;
  std::vector<std::size_t> valid;
  for (std::size_t i = 0; i < aligned_depth.size(); ++i) {
    if (std::isfinite(aligned_depth[i]) && aligned_depth[i] > 0.0) valid.push_back(i);
  }
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(valid.size())));
  Rng rng(seed);
  rng.shuffle(valid);
  valid.resize(std::min(count, valid.size()));
  std::sort(valid.begin(), valid.end());

  const Rigid to_world = cam.effective_pose().inverse();
  std::vector<Gaussian3D> out;
  out.reserve(valid.size());
  for (std::size_t i : valid) {
    const int x = static_cast<int>(i % static_cast<std::size_t>(aligned_depth.width()));
    const int y = static_cast<int>(i / static_cast<std::size_t>(aligned_depth.width()));
    const double d = aligned_depth[i];
    const Vec3 p_cam = d * Vec3((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
    Gaussian3D g;
    g.mean = to_world.apply(p_cam);
    g.log_scale = Vec3::Constant(std::log(1.5 * d / K.fx));
    g.opacity_logit = 0.0;
    g.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    const bool in_object = object_mask && object_mask->at(x, y) > 0.5;
    g.mask_logit = logit(in_object ? 0.99 : 0.01);
    out.push_back(g);
  }
  return out;
}

Image object_mask_from_ids(const Image& object_ids, int object_id) {
  Image m(object_ids.width(), object_ids.height(), 1);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = object_ids[i] == object_id ? 1.0 : 0.0;
  return m;
}

std::vector<Image> propagate_object_mask(const World& world, const std::vector<CameraView>& cams, int prompt_x,
                                         int prompt_y) {
  if (cams.empty()) return {};
  const auto first = world.cast(camera_ray(cams.front(), prompt_x, prompt_y));
  const int object_id = first ? first->object_id : -2;
  std::vector<Image> out;
  out.reserve(cams.size());
  for (const auto& cam : cams) {
    const auto gt = render_ground_truth(world, cam, Vec3::Zero());
    out.push_back(object_mask_from_ids(gt.object_id, object_id));
  }
  return out;
}

std::vector<Image> propagate_object_mask(const std::vector<std::filesystem::path>& mask_files) {
  std::vector<Image> out;
  for (const auto& f : mask_files) {
    if (!std::filesystem::exists(f)) throw std::runtime_error("missing mask file: " + f.string());
    out.push_back(read_pgm(f));
  }
  return out;
}

}  // namespace activesplat
