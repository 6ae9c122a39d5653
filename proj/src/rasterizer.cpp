#include "activesplat/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace activesplat {

namespace {

using Mat23 = Eigen::Matrix<double, 2, 3>;

// dR/d(w,x,y,z) of the rotation matrix of a unit quaternion.
std::array<Mat3, 4> quat_matrix_derivatives(const Vec4& q) {
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  std::array<Mat3, 4> d;
  d[0] << 0, -z, y,
          z, 0, -x,
          -y, x, 0;
  d[1] << 0, y, z,
          y, -2 * x, -w,
          z, w, -2 * x;
  d[2] << -2 * y, x, w,
          x, 0, z,
          -w, z, -2 * y;
  d[3] << -2 * z, -w, x,
          w, -2 * z, y,
          x, y, 0;
  for (auto& m : d) m *= 2.0;
  return d;
}

}  // namespace

SplatGrad& SplatGrad::operator+=(const SplatGrad& o) {
  mean2d += o.mean2d;
  conic_a += o.conic_a;
  conic_b += o.conic_b;
  conic_c += o.conic_c;
  depth += o.depth;
  opacity += o.opacity;
  color += o.color;
  mask += o.mask;
  return *this;
}

PreparedView::PreparedView(const SceneModel& scene, const CameraView& cam, const RenderSettings& settings,
                           bool with_jacobians)
    : cam_(&cam), settings_(settings), background_(scene.background), gaussian_count_(scene.size()) {
  const Intrinsics& K = cam.intrinsics;
  K.validate();
  if (cam.model != ProjectionModel::pinhole) {
    throw std::invalid_argument("Gaussian rasterization supports pinhole cameras only");
  }
  base_pose_ = cam.pose;
  const Vec3 omega = cam.pose_delta.tail<3>();
  rot_delta_ = so3_exp(omega);
  rot_delta_derivs_ = so3_exp_derivatives(omega);
  world_rot_ = rot_delta_ * base_pose_.R;
  const Vec3 t_eff = rot_delta_ * base_pose_.t + cam.pose_delta.head<3>();

  splats_.reserve(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const Gaussian3D& g = scene.gaussians[i];
    Splat s;
    s.gaussian = static_cast<int>(i);
    s.p_base = base_pose_.apply(g.mean);
    s.p_cam = world_rot_ * g.mean + t_eff;
    const double z = s.p_cam.z();
    if (!(z > kZNear)) continue;
    s.opacity = g.opacity();
    if (!(s.opacity >= settings_.alpha_min)) continue;

    s.q_norm = g.rotation.norm();
    s.q_unit = g.rotation / s.q_norm;
    s.rot_q = quat_to_matrix(s.q_unit);
    s.scale = g.scale();
    const Mat3 A = s.rot_q * s.scale.asDiagonal();
    const Mat3 sigma = A * A.transpose();

    const double iz = 1.0 / z;
    Mat23 J;
    J << K.fx * iz, 0.0, -K.fx * s.p_cam.x() * iz * iz,
         0.0, K.fy * iz, -K.fy * s.p_cam.y() * iz * iz;
    const Mat23 M = J * world_rot_;
    Mat2 cov = M * sigma * M.transpose();
    cov(0, 1) = cov(1, 0) = 0.5 * (cov(0, 1) + cov(1, 0));
    cov(0, 0) += settings_.dilation;
    cov(1, 1) += settings_.dilation;
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(0, 1);
    if (!(det >= settings_.min_determinant) || !std::isfinite(det)) continue;
    s.cov2d = cov;
    s.conic_a = cov(1, 1) / det;
    s.conic_b = -cov(0, 1) / det;
    s.conic_c = cov(0, 0) / det;

    s.mean2d = Vec2(K.fx * s.p_cam.x() * iz + K.cx, K.fy * s.p_cam.y() * iz + K.cy);
    s.depth = z;
    s.color = g.color;
    s.mask = g.mask();

    // Every pixel with alpha >= alpha_min lies inside this radius.
    const double mahal = std::sqrt(2.0 * std::log(s.opacity / settings_.alpha_min));
    const double mid = 0.5 * (cov(0, 0) + cov(1, 1));
    const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
    const double r = mahal * std::sqrt(lambda_max);
    if (!std::isfinite(r) || !s.mean2d.allFinite()) continue;
    const double fx0 = std::ceil(s.mean2d.x() - r), fx1 = std::floor(s.mean2d.x() + r);
    const double fy0 = std::ceil(s.mean2d.y() - r), fy1 = std::floor(s.mean2d.y() + r);
    if (fx1 < 0 || fy1 < 0 || fx0 > K.width - 1 || fy0 > K.height - 1) continue;
    s.x0 = static_cast<int>(std::max(0.0, fx0));
    s.x1 = static_cast<int>(std::min<double>(K.width - 1, fx1));
    s.y0 = static_cast<int>(std::max(0.0, fy0));
    s.y1 = static_cast<int>(std::min<double>(K.height - 1, fy1));
    if (s.x0 > s.x1 || s.y0 > s.y1) continue;
    splats_.push_back(s);
  }

  std::vector<std::size_t> order(splats_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [this](std::size_t a, std::size_t b) {
    if (splats_[a].depth != splats_[b].depth) return splats_[a].depth < splats_[b].depth;
    return splats_[a].gaussian < splats_[b].gaussian;
  });
  std::vector<Splat> sorted;
  sorted.reserve(splats_.size());
  for (std::size_t i : order) sorted.push_back(std::move(splats_[i]));
  splats_ = std::move(sorted);

  if (with_jacobians) {
    jac_geometry_.assign(splats_.size(), GeometryJacobian::Zero());
    jac_pose_.assign(splats_.size(), PoseJacobian::Zero());
    for (std::size_t si = 0; si < splats_.size(); ++si) {
      const Splat& s = splats_[si];
      for (int k = 0; k < 6; ++k) {
        SplatGrad unit;
        switch (k) {
          case 0: unit.mean2d.x() = 1.0; break;
          case 1: unit.mean2d.y() = 1.0; break;
          case 2: unit.conic_a = 1.0; break;
          case 3: unit.conic_b = 1.0; break;
          case 4: unit.conic_c = 1.0; break;
          default: unit.depth = 1.0; break;
        }
        double out[param::kPerGaussian] = {};
        Vec6 pose = Vec6::Zero();
        chain(s, unit, out, pose);
        for (int j = 0; j < 10; ++j) jac_geometry_[si](k, j) = out[j];
        jac_pose_[si].row(k) = pose.transpose();
      }
    }
  }

  packed_.reserve(splats_.size());
  for (const Splat& s : splats_) {
    // Beyond q_max the pixel alpha is below alpha_min; the margin keeps the exact test authoritative.
    const double q_max = 2.0 * std::log(s.opacity / settings_.alpha_min) + 1e-9;
    packed_.push_back({s.mean2d.x(), s.mean2d.y(), s.conic_a, s.conic_b, s.conic_c, s.opacity, q_max, s.x0, s.x1,
                       s.y0, s.y1, s.color.x(), s.color.y(), s.color.z(), s.depth, s.mask});
  }

  const int ts = settings_.tile_size;
  tiles_x_ = (K.width + ts - 1) / ts;
  tiles_y_ = (K.height + ts - 1) / ts;
  tiles_.assign(static_cast<std::size_t>(tiles_x_) * tiles_y_, {});
  for (std::size_t si = 0; si < splats_.size(); ++si) {
    const Splat& s = splats_[si];
    for (int ty = s.y0 / ts; ty <= s.y1 / ts; ++ty) {
      for (int tx = s.x0 / ts; tx <= s.x1 / ts; ++tx) {
        tiles_[static_cast<std::size_t>(ty) * tiles_x_ + tx].push_back(static_cast<int>(si));
      }
    }
  }
}

double PreparedView::composite(int x, int y, std::vector<Contribution>& out) const {
  out.clear();
  const int ts = settings_.tile_size;
  const auto& list = tiles_[static_cast<std::size_t>(y / ts) * tiles_x_ + x / ts];
  double T = 1.0;
  for (int si : list) {
    if (T < settings_.transmittance_min) break;
    const Packed& s = packed_[si];
    if (x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1) continue;
    const double dx = x - s.mx;
    const double dy = y - s.my;
    const double q = s.a * dx * dx + 2.0 * s.b * dx * dy + s.c * dy * dy;
    if (q > s.q_max) continue;
    const double falloff = std::exp(-0.5 * q);
    const double alpha = s.opacity * falloff;
    if (alpha < settings_.alpha_min) continue;
    out.push_back({si, alpha, T, falloff, dx, dy});
    T *= 1.0 - alpha;
  }
  return T;
}

RenderOutput PreparedView::render() const {
  const int W = width(), H = height();
  RenderOutput out{Image(W, H, 3), Image(W, H, 1), Image(W, H, 1), Image(W, H, 1)};
  std::vector<Contribution> contrib;
  cache_.clear();
  cache_offsets_.assign(1, 0);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double Tf = composite(x, y, contrib);
      double c0 = 0.0, c1 = 0.0, c2 = 0.0, d = 0.0, m = 0.0;
      for (const auto& k : contrib) {
        const Packed& s = packed_[k.splat];
        const double w = k.alpha * k.transmittance;
        c0 += w * s.r;
        c1 += w * s.g;
        c2 += w * s.b_;
        d += w * s.depth;
        m += w * s.mask;
      }
      out.color.at(x, y, 0) = c0 + Tf * background_.x();
      out.color.at(x, y, 1) = c1 + Tf * background_.y();
      out.color.at(x, y, 2) = c2 + Tf * background_.z();
      out.depth.at(x, y) = d;
      out.alpha.at(x, y) = 1.0 - Tf;
      out.mask.at(x, y) = m;
      cache_.insert(cache_.end(), contrib.begin(), contrib.end());
      cache_offsets_.push_back(cache_.size());
    }
  }
  return out;
}

template <class Sink>
void PreparedView::backward_list(const Contribution* first, const Contribution* last, const PixelUpstream& up,
                                 Sink&& sink) const {
  // Running dot product of the upstream with everything composited behind splat i.
  double behind = up.color.dot(background_);
  for (const Contribution* it = last; it != first;) {
    --it;
    const Packed& s = packed_[it->splat];
    const double feature =
        up.color.x() * s.r + up.color.y() * s.g + up.color.z() * s.b_ + up.depth * s.depth + up.alpha + up.mask * s.mask;
    const double w = it->alpha * it->transmittance;
    SplatGrad g;
    g.color = w * up.color;
    g.depth = w * up.depth;
    g.mask = w * up.mask;
    const double g_alpha = it->transmittance * (feature - behind);
    behind = feature * it->alpha + (1.0 - it->alpha) * behind;
    g.opacity = g_alpha * it->falloff;
    const double g_q = -0.5 * it->alpha * g_alpha;
    const double dx = it->dx, dy = it->dy;
    g.conic_a = g_q * dx * dx;
    g.conic_b = g_q * dx * dy;
    g.conic_c = g_q * dy * dy;
    g.mean2d = -2.0 * g_q * Vec2(s.a * dx + s.b * dy, s.b * dx + s.c * dy);
    sink(it->splat, g);
  }
}

void PreparedView::pixel_backward(int x, int y, const PixelUpstream& up, std::vector<Contribution>& scratch,
                                  std::vector<std::pair<int, SplatGrad>>& out) const {
  composite(x, y, scratch);
  backward_list(scratch.data(), scratch.data() + scratch.size(), up,
                [&out](int si, const SplatGrad& g) { out.emplace_back(si, g); });
}

SceneGradient PreparedView::backward(const Image& grad_color, const Image& grad_depth, const Image& grad_alpha,
                                     const Image& grad_mask) const {
  const int W = width(), H = height();
  std::vector<SplatGrad> acc(splats_.size());
  std::vector<Contribution> scratch;
  const auto add = [&acc](int si, const SplatGrad& g) { acc[si] += g; };
  const bool cached = cache_offsets_.size() == static_cast<std::size_t>(W) * H + 1;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      PixelUpstream up;
      if (!grad_color.empty()) up.color = Vec3(grad_color.at(x, y, 0), grad_color.at(x, y, 1), grad_color.at(x, y, 2));
      if (!grad_depth.empty()) up.depth = grad_depth.at(x, y);
      if (!grad_alpha.empty()) up.alpha = grad_alpha.at(x, y);
      if (!grad_mask.empty()) up.mask = grad_mask.at(x, y);
      if (up.color.isZero() && up.depth == 0.0 && up.alpha == 0.0 && up.mask == 0.0) continue;
      if (cached) {
        const std::size_t p = static_cast<std::size_t>(y) * W + x;
        backward_list(cache_.data() + cache_offsets_[p], cache_.data() + cache_offsets_[p + 1], up, add);
      } else {
        composite(x, y, scratch);
        backward_list(scratch.data(), scratch.data() + scratch.size(), up, add);
      }
    }
  }
  SceneGradient out;
  out.params.assign(gaussian_count_ * param::kPerGaussian, 0.0);
  for (std::size_t si = 0; si < splats_.size(); ++si) {
    const Splat& s = splats_[si];
    chain(s, acc[si], out.params.data() + static_cast<std::size_t>(s.gaussian) * param::kPerGaussian, out.pose);
  }
  return out;
}

void PreparedView::chain(const Splat& s, const SplatGrad& g, double* param_out, Vec6& pose_out) const {
  const Intrinsics& K = cam_->intrinsics;
  // Appearance terms.
  for (int k = 0; k < 3; ++k) param_out[param::kColor + k] += g.color[k];
  param_out[param::kOpacity] += g.opacity * s.opacity * (1.0 - s.opacity);
  param_out[param::kMask] += g.mask * s.mask * (1.0 - s.mask);

  const bool has_geometry = g.mean2d.x() != 0.0 || g.mean2d.y() != 0.0 || g.conic_a != 0.0 || g.conic_b != 0.0 ||
                            g.conic_c != 0.0 || g.depth != 0.0;
  if (!has_geometry) return;

  const double x = s.p_cam.x(), y = s.p_cam.y(), z = s.p_cam.z();
  const double iz = 1.0 / z, iz2 = iz * iz, iz3 = iz2 * iz;

  // Inverse covariance -> covariance.
  Mat2 conic;
  conic << s.conic_a, s.conic_b, s.conic_b, s.conic_c;
  Mat2 g_conic;
  g_conic << g.conic_a, g.conic_b, g.conic_b, g.conic_c;
  const Mat2 g_cov = -conic * g_conic * conic;

  Mat23 J;
  J << K.fx * iz, 0.0, -K.fx * x * iz2,
       0.0, K.fy * iz, -K.fy * y * iz2;
  const Mat23 M = J * world_rot_;
  const Mat3 A = s.rot_q * s.scale.asDiagonal();
  const Mat3 sigma = A * A.transpose();

  const Mat3 g_sigma = M.transpose() * g_cov * M;
  const Mat23 g_M = 2.0 * g_cov * M * sigma;
  const Mat23 g_J = g_M * world_rot_.transpose();
  const Mat3 g_W = J.transpose() * g_M;

  Vec3 g_p;
  g_p.x() = -K.fx * iz2 * g_J(0, 2) + K.fx * iz * g.mean2d.x();
  g_p.y() = -K.fy * iz2 * g_J(1, 2) + K.fy * iz * g.mean2d.y();
  g_p.z() = -K.fx * iz2 * g_J(0, 0) + 2.0 * K.fx * x * iz3 * g_J(0, 2) - K.fy * iz2 * g_J(1, 1) +
            2.0 * K.fy * y * iz3 * g_J(1, 2) - K.fx * x * iz2 * g.mean2d.x() - K.fy * y * iz2 * g.mean2d.y() +
            g.depth;

  const Vec3 g_mean = world_rot_.transpose() * g_p;
  for (int k = 0; k < 3; ++k) param_out[param::kMean + k] += g_mean[k];

  const Mat3 g_A = 2.0 * g_sigma * A;
  for (int k = 0; k < 3; ++k) {
    param_out[param::kLogScale + k] += s.scale[k] * s.rot_q.col(k).dot(g_A.col(k));
  }
  const Mat3 g_R = g_A * s.scale.asDiagonal();
  const auto dR = quat_matrix_derivatives(s.q_unit);
  Vec4 g_qhat;
  for (int k = 0; k < 4; ++k) g_qhat[k] = g_R.cwiseProduct(dR[k]).sum();
  const Vec4 g_q = (g_qhat - s.q_unit * s.q_unit.dot(g_qhat)) / s.q_norm;
  for (int k = 0; k < 4; ++k) param_out[param::kRotation + k] += g_q[k];

  // p = R_d p_base + v, W = R_d R_base.
  const Mat3 g_Rd = g_W * base_pose_.R.transpose() + g_p * s.p_base.transpose();
  for (int k = 0; k < 3; ++k) {
    pose_out[k] += g_p[k];
    pose_out[3 + k] += g_Rd.cwiseProduct(rot_delta_derivs_[k]).sum();
  }
}

Eigen::Matrix<double, param::kPerGaussian, 1> PreparedView::parameter_gradient(const Splat& s,
                                                                             const SplatGrad& g) const {
  Eigen::Matrix<double, param::kPerGaussian, 1> out = Eigen::Matrix<double, param::kPerGaussian, 1>::Zero();
  Eigen::Matrix<double, 6, 1> screen;
  screen << g.mean2d.x(), g.mean2d.y(), g.conic_a, g.conic_b, g.conic_c, g.depth;
  out.head<10>() = geometry_jacobian(static_cast<std::size_t>(&s - splats_.data())).transpose() * screen;
  out[param::kOpacity] = g.opacity * s.opacity * (1.0 - s.opacity);
  out.segment<3>(param::kColor) = g.color;
  out[param::kMask] = g.mask * s.mask * (1.0 - s.mask);
  return out;
}

RenderOutput render(const SceneModel& scene, const CameraView& cam, const RenderSettings& settings) {
  return PreparedView(scene, cam, settings).render();
}

}  // namespace activesplat
