#include "activesplat/losses.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace activesplat {

namespace {

constexpr int kWindow = 11;
constexpr int kHalf = kWindow / 2;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWindow>& gaussian_window() {
  static const std::array<double, kWindow> w = [] {
    std::array<double, kWindow> g{};
    double sum = 0.0;
    for (int i = 0; i < kWindow; ++i) {
      const double d = i - kHalf;
      g[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      sum += g[i];
    }
    for (auto& v : g) v /= sum;
    return g;
  }();
  return w;
}

// Separable correlation of a single-channel plane with the window, zero outside.
std::vector<double> blur(const std::vector<double>& in, int W, int H) {
  const auto& g = gaussian_window();
  std::vector<double> tmp(in.size(), 0.0), out(in.size(), 0.0);
  for (int y = 0; y < H; ++y) {
    const double* row = in.data() + static_cast<std::size_t>(y) * W;
    double* dst = tmp.data() + static_cast<std::size_t>(y) * W;
    for (int x = 0; x < W; ++x) {
      const int k0 = std::max(-kHalf, -x), k1 = std::min(kHalf, W - 1 - x);
      double s = 0.0;
      for (int k = k0; k <= k1; ++k) s += g[k + kHalf] * row[x + k];
      dst[x] = s;
    }
  }
  // Row-wise so the inner loop runs over contiguous memory; the per-pixel sum order is unchanged.
  for (int y = 0; y < H; ++y) {
    double* dst = out.data() + static_cast<std::size_t>(y) * W;
    const int k0 = std::max(-kHalf, -y), k1 = std::min(kHalf, H - 1 - y);
    for (int k = k0; k <= k1; ++k) {
      const double w = g[k + kHalf];
      const double* src = tmp.data() + static_cast<std::size_t>(y + k) * W;
      for (int x = 0; x < W; ++x) dst[x] += w * src[x];
    }
  }
  return out;
}

// Window weight that falls inside the image, per pixel.
std::vector<double> window_mass(int W, int H) {
  return blur(std::vector<double>(static_cast<std::size_t>(W) * H, 1.0), W, H);
}

std::vector<double> channel(const Image& img, int c) {
  std::vector<double> out(img.pixel_count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = img[i * img.channels() + c];
  return out;
}

void require_same(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw std::invalid_argument(std::string(what) + ": image dimensions differ");
}

bool valid_at(const Image& validity, std::size_t i) { return validity.empty() || validity[i] != 0.0; }

LossTerm ssim_impl(const Image& a, const Image& b, bool want_grad) {
  require_same(a, b, "ssim");
  const int W = a.width(), H = a.height(), C = a.channels();
  const std::size_t N = a.pixel_count();
  const std::vector<double> Z = window_mass(W, H);
  LossTerm out;
  if (want_grad) out.grad = Image(W, H, C);
  double total = 0.0;
  for (int c = 0; c < C; ++c) {
    const auto x = channel(a, c), y = channel(b, c);
    std::vector<double> xx(N), yy(N), xy(N);
    for (std::size_t i = 0; i < N; ++i) {
      xx[i] = x[i] * x[i];
      yy[i] = y[i] * y[i];
      xy[i] = x[i] * y[i];
    }
    auto mx = blur(x, W, H), my = blur(y, W, H), exx = blur(xx, W, H), eyy = blur(yy, W, H), exy = blur(xy, W, H);
    std::vector<double> dmu(N), dvar(N), dcov(N);
    for (std::size_t i = 0; i < N; ++i) {
      const double z = Z[i];
      const double mux = mx[i] / z, muy = my[i] / z;
      const double vx = exx[i] / z - mux * mux;
      const double vy = eyy[i] / z - muy * muy;
      const double cxy = exy[i] / z - mux * muy;
      const double n1 = 2.0 * mux * muy + kC1, n2 = 2.0 * cxy + kC2;
      const double d1 = mux * mux + muy * muy + kC1, d2 = vx + vy + kC2;
      const double s = (n1 * n2) / (d1 * d2);
      total += s;
      if (want_grad) {
        const double ds_dmux = 2.0 * muy * n2 / (d1 * d2) - s * 2.0 * mux / d1;
        const double ds_dvx = -s / d2;
        const double ds_dcxy = 2.0 * n1 / (d1 * d2);
        dmu[i] = (ds_dmux - 2.0 * mux * ds_dvx - muy * ds_dcxy) / z;
        dvar[i] = ds_dvx / z;
        dcov[i] = ds_dcxy / z;
      }
    }
    if (want_grad) {
      const auto bmu = blur(dmu, W, H), bvar = blur(dvar, W, H), bcov = blur(dcov, W, H);
      const double norm = 1.0 / (static_cast<double>(N) * C);
      for (std::size_t i = 0; i < N; ++i) {
        out.grad[i * C + c] = norm * (bmu[i] + 2.0 * x[i] * bvar[i] + y[i] * bcov[i]);
      }
    }
  }
  out.value = total / (static_cast<double>(N) * C);
  return out;
}

}  // namespace

void LossConfig::validate() const {
  for (double w : {w_photometric, w_depth, w_normal, w_scale_reg, w_mask_bce, w_touch, max_aniso_ratio}) {
    if (!(w >= 0.0)) throw std::invalid_argument("loss weights must be non-negative");
  }
  if (!(lambda_ssim >= 0.0 && lambda_ssim <= 1.0)) throw std::invalid_argument("lambda_ssim must lie in [0,1]");
  if (touch_smooth_radius < 0) throw std::invalid_argument("touch_smooth_radius must be non-negative");
}

LossConfig LossConfig::zero() {
  LossConfig c;
  c.w_photometric = c.w_depth = c.w_normal = c.w_scale_reg = c.w_mask_bce = c.w_touch = 0.0;
  return c;
}

double ssim(const Image& a, const Image& b) { return ssim_impl(a, b, false).value; }
LossTerm ssim_with_grad(const Image& a, const Image& b) { return ssim_impl(a, b, true); }

LossTerm loss_photometric(const Image& rendered, const Image& gt, double lambda_ssim) {
  require_same(rendered, gt, "loss_photometric");
  LossTerm out;
  out.grad = Image(rendered.width(), rendered.height(), rendered.channels());
  const double n = static_cast<double>(rendered.size());
  double l1 = 0.0;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    const double d = rendered[i] - gt[i];
    l1 += std::abs(d);
    out.grad[i] = (1.0 - lambda_ssim) * ((d > 0.0) - (d < 0.0)) / n;
  }
  out.value = (1.0 - lambda_ssim) * l1 / n;
  if (lambda_ssim > 0.0) {
    const LossTerm s = ssim_with_grad(rendered, gt);
    out.value += lambda_ssim * (1.0 - s.value) / 2.0;
    for (std::size_t i = 0; i < rendered.size(); ++i) out.grad[i] -= 0.5 * lambda_ssim * s.grad[i];
  }
  return out;
}

Image depth_validity(const Image& target, const Image& alpha) {
  if (!target.same_size(alpha)) throw std::invalid_argument("depth_validity: size mismatch");
  Image v(target.width(), target.height(), 1);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (std::isfinite(target[i]) && alpha[i] >= 0.5) ? 1.0 : 0.0;
  return v;
}

LossTerm loss_depth_mse(const Image& rendered, const Image& target, const Image& validity) {
  require_same(rendered, target, "loss_depth_mse");
  LossTerm out;
  out.grad = Image(rendered.width(), rendered.height(), 1);
  std::size_t n = 0;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    if (valid_at(validity, i) && std::isfinite(target[i])) ++n;
  }
  if (n == 0) return out;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    if (!valid_at(validity, i) || !std::isfinite(target[i])) continue;
    const double d = rendered[i] - target[i];
    out.value += d * d;
    out.grad[i] = 2.0 * d / static_cast<double>(n);
  }
  out.value /= static_cast<double>(n);
  return out;
}

LossTerm loss_depth_pearson(const Image& rendered, const Image& mono, const Image& validity) {
  require_same(rendered, mono, "loss_depth_pearson");
  LossTerm out;
  out.grad = Image(rendered.width(), rendered.height(), 1);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    if (valid_at(validity, i) && std::isfinite(mono[i]) && std::isfinite(rendered[i])) idx.push_back(i);
  }
  if (idx.size() < 2) return out;
  const double n = static_cast<double>(idx.size());
  double ma = 0.0, mb = 0.0;
  for (auto i : idx) {
    ma += rendered[i];
    mb += mono[i];
  }
  ma /= n;
  mb /= n;
  double saa = 0.0, sbb = 0.0, sab = 0.0;
  for (auto i : idx) {
    const double a = rendered[i] - ma, b = mono[i] - mb;
    saa += a * a;
    sbb += b * b;
    sab += a * b;
  }
  if (std::sqrt(saa / n) < 1e-8 || std::sqrt(sbb / n) < 1e-8) return out;
  const double denom = std::sqrt(saa * sbb);
  const double rho = sab / denom;
  out.value = 1.0 - rho;
  for (auto i : idx) {
    const double a = rendered[i] - ma, b = mono[i] - mb;
    out.grad[i] = -(b / denom - rho * a / saa);
  }
  return out;
}

namespace {

Vec3 backproject(const Intrinsics& K, int x, int y, double d) {
  return d * Vec3((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0);
}

struct NormalStencil {
  bool ok = false;
  Vec3 pu, pv, c;
  double sign = 1.0;
};

NormalStencil normal_stencil(const Image& depth, const Intrinsics& K, int x, int y) {
  NormalStencil s;
  const int W = depth.width(), H = depth.height();
  if (x < 1 || y < 1 || x > W - 2 || y > H - 2) return s;
  const double d0 = depth.at(x, y), dl = depth.at(x - 1, y), dr = depth.at(x + 1, y);
  const double du = depth.at(x, y - 1), dd = depth.at(x, y + 1);
  if (!std::isfinite(d0) || !std::isfinite(dl) || !std::isfinite(dr) || !std::isfinite(du) || !std::isfinite(dd)) {
    return s;
  }
  s.pu = 0.5 * (backproject(K, x + 1, y, dr) - backproject(K, x - 1, y, dl));
  s.pv = 0.5 * (backproject(K, x, y + 1, dd) - backproject(K, x, y - 1, du));
  s.c = s.pu.cross(s.pv);
  if (!(s.c.norm() > 1e-300)) return s;
  s.sign = s.c.z() > 0.0 ? -1.0 : 1.0;
  s.ok = true;
  return s;
}

}  // namespace

Image estimate_normals(const Image& depth, const Intrinsics& K) {
  Image n = Image::nan_like(depth.width(), depth.height(), 3);
  for (int y = 0; y < depth.height(); ++y) {
    for (int x = 0; x < depth.width(); ++x) {
      const auto s = normal_stencil(depth, K, x, y);
      if (!s.ok) continue;
      const Vec3 v = s.sign * s.c.normalized();
      for (int c = 0; c < 3; ++c) n.at(x, y, c) = v[c];
    }
  }
  return n;
}

double loss_normal(const Image& normals, const Image& prior, const Image& validity) {
  require_same(normals, prior, "loss_normal");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t p = 0; p < normals.pixel_count(); ++p) {
    if (!valid_at(validity, p)) continue;
    const Vec3 a(normals[3 * p], normals[3 * p + 1], normals[3 * p + 2]);
    const Vec3 b(prior[3 * p], prior[3 * p + 1], prior[3 * p + 2]);
    if (!a.allFinite() || !b.allFinite()) continue;
    sum += 1.0 - a.dot(b);
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

LossTerm loss_normal_from_depth(const Image& rendered_depth, const Intrinsics& K, const Image& prior,
                                const Image& validity) {
  const int W = rendered_depth.width(), H = rendered_depth.height();
  LossTerm out;
  out.grad = Image(W, H, 1);
  struct Item {
    int x, y;
    NormalStencil s;
    Vec3 prior;
  };
  std::vector<Item> items;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * W + x;
      if (!valid_at(validity, p)) continue;
      const Vec3 b(prior.at(x, y, 0), prior.at(x, y, 1), prior.at(x, y, 2));
      if (!b.allFinite()) continue;
      auto s = normal_stencil(rendered_depth, K, x, y);
      if (!s.ok) continue;
      items.push_back({x, y, s, b});
    }
  }
  if (items.empty()) return out;
  const double inv_n = 1.0 / static_cast<double>(items.size());
  for (const auto& it : items) {
    const double len = it.s.c.norm();
    const Vec3 chat = it.s.c / len;
    out.value += 1.0 - it.s.sign * chat.dot(it.prior);
    const Vec3 g_n = -it.prior * inv_n;
    const Vec3 g_c = it.s.sign * (g_n - chat * chat.dot(g_n)) / len;
    const Vec3 g_pu = it.s.pv.cross(g_c);
    const Vec3 g_pv = g_c.cross(it.s.pu);
    auto add = [&](int x, int y, const Vec3& gP) {
      out.grad.at(x, y) += gP.dot(Vec3((x - K.cx) / K.fx, (y - K.cy) / K.fy, 1.0));
    };
    add(it.x + 1, it.y, 0.5 * g_pu);
    add(it.x - 1, it.y, -0.5 * g_pu);
    add(it.x, it.y + 1, 0.5 * g_pv);
    add(it.x, it.y - 1, -0.5 * g_pv);
  }
  out.value *= inv_n;
  return out;
}

ScaleRegTerm loss_scale_reg(const SceneModel& scene, double max_aniso_ratio) {
  constexpr double kFlatWeight = 0.1;
  ScaleRegTerm out;
  out.grad.assign(scene.parameter_count(), 0.0);
  if (scene.size() == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const Vec3& ls = scene.gaussians[i].log_scale;
    int imax = 0, imin = 0;
    for (int k = 1; k < 3; ++k) {
      if (ls[k] > ls[imax]) imax = k;
      if (ls[k] < ls[imin]) imin = k;
    }
    const double ratio = std::exp(ls[imax] - ls[imin]);
    const double min_scale = std::exp(ls[imin]);
    double* g = out.grad.data() + i * param::kPerGaussian + param::kLogScale;
    if (ratio > max_aniso_ratio) {
      out.value += ratio - max_aniso_ratio;
      g[imax] += ratio * inv_n;
      g[imin] -= ratio * inv_n;
    }
    out.value += kFlatWeight * min_scale;
    g[imin] += kFlatWeight * min_scale * inv_n;
  }
  out.value *= inv_n;
  return out;
}

LossTerm loss_mask_bce(const Image& rendered, const Image& gt, const Image& validity) {
  require_same(rendered, gt, "loss_mask_bce");
  constexpr double kEps = 1e-6;
  LossTerm out;
  out.grad = Image(rendered.width(), rendered.height(), 1);
  std::size_t n = 0;
  for (std::size_t i = 0; i < rendered.size(); ++i) n += valid_at(validity, i) ? 1 : 0;
  if (n == 0) return out;
  for (std::size_t i = 0; i < rendered.size(); ++i) {
    if (!valid_at(validity, i)) continue;
    const double m = std::clamp(rendered[i], kEps, 1.0 - kEps);
    const double g = gt[i];
    out.value += -(g * std::log(m) + (1.0 - g) * std::log(1.0 - m));
    if (rendered[i] > kEps && rendered[i] < 1.0 - kEps) {
      out.grad[i] = -(g / m - (1.0 - g) / (1.0 - m)) / static_cast<double>(n);
    }
  }
  out.value /= static_cast<double>(n);
  return out;
}

Image dilate(const Image& mask, int radius) {
  const int W = mask.width(), H = mask.height();
  Image out(W, H, 1);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (mask.at(x, y) == 0.0) continue;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
          if (dx * dx + dy * dy > radius * radius) continue;
          const int xx = x + dx, yy = y + dy;
          if (xx >= 0 && yy >= 0 && xx < W && yy < H) out.at(xx, yy) = 1.0;
        }
      }
    }
  }
  return out;
}

LossTerm loss_touch_depth(const Image& rendered, const Image& touch, const Image& validity, int smooth_radius) {
  require_same(rendered, touch, "loss_touch_depth");
  constexpr double kSmoothWeight = 0.1;
  const int W = rendered.width(), H = rendered.height();
  LossTerm out;
  out.grad = Image(W, H, 1);
  Image valid(W, H, 1);
  std::size_t n = 0;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (valid_at(validity, i) && std::isfinite(touch[i])) {
      valid[i] = 1.0;
      ++n;
    }
  }
  if (n == 0) return out;
  for (std::size_t i = 0; i < valid.size(); ++i) {
    if (valid[i] == 0.0) continue;
    const double d = rendered[i] - touch[i];
    out.value += std::abs(d) / static_cast<double>(n);
    out.grad[i] += ((d > 0.0) - (d < 0.0)) / static_cast<double>(n);
  }
  const Image region = dilate(valid, smooth_radius);
  std::size_t m = 0;
  for (std::size_t i = 0; i < region.size(); ++i) m += region[i] != 0.0 ? 1 : 0;
  const double w = kSmoothWeight / static_cast<double>(m);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      if (region.at(x, y) == 0.0) continue;
      const double d0 = rendered.at(x, y);
      auto edge = [&](int xx, int yy) {
        if (xx >= W || yy >= H) return;
        const double diff = rendered.at(xx, yy) - d0;
        const double s = (diff > 0.0) - (diff < 0.0);
        out.value += w * std::abs(diff);
        out.grad.at(xx, yy) += w * s;
        out.grad.at(x, y) -= w * s;
      };
      edge(x + 1, y);
      edge(x, y + 1);
    }
  }
  return out;
}

}  // namespace activesplat
