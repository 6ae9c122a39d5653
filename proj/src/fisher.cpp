#include "activesplat/fisher.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "activesplat/random.hpp"

namespace activesplat {

HessianDiagonal& HessianDiagonal::operator+=(const HessianDiagonal& other) {
  if (values.size() != other.values.size() || channel != other.channel) {
    throw std::invalid_argument("HessianDiagonal: cannot add diagonals of different size or channel");
  }
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += other.values[i];
  return *this;
}

HessianDiagonal compute_hessian_diag(const SceneModel& scene, const CameraView& cam, FisherChannel channel,
                                     const FisherOptions& options) {
  HessianDiagonal h;
  h.channel = channel;
  h.lambda_prior = options.lambda_prior;
  h.values.assign(scene.parameter_count(), 0.0);
  if (!options.gaussian_filter.empty() && options.gaussian_filter.size() != scene.size()) {
    throw std::invalid_argument("compute_hessian_diag: gaussian filter length differs from scene size");
  }

  const PreparedView view(scene, cam, options.render, /*with_jacobians=*/true);
  std::vector<PixelUpstream> outputs;
  switch (channel) {
    case FisherChannel::color:
      for (int c = 0; c < 3; ++c) {
        PixelUpstream u;
        u.color[c] = 1.0;
        outputs.push_back(u);
      }
      break;
    case FisherChannel::depth: {
      PixelUpstream u;
      u.depth = 1.0;
      outputs.push_back(u);
      break;
    }
    case FisherChannel::mask: {
      PixelUpstream u;
      u.mask = 1.0;
      outputs.push_back(u);
      break;
    }
  }

  std::array<bool, param::kPerGaussian> active{};
  for (int j = 0; j < param::kPerGaussian; ++j) active[j] = options.params.includes(j);

  std::vector<PreparedView::Contribution> scratch;
  std::vector<std::pair<int, SplatGrad>> grads;
  const auto& splats = view.splats();
  for (int y = 0; y < view.height(); ++y) {
    for (int x = 0; x < view.width(); ++x) {
      for (const auto& up : outputs) {
        grads.clear();
        view.pixel_backward(x, y, up, scratch, grads);
        for (const auto& [si, g] : grads) {
          const Splat& s = splats[si];
          if (!options.gaussian_filter.empty() && !options.gaussian_filter[s.gaussian]) continue;
          const auto pg = view.parameter_gradient(s, g);
          double* dst = h.values.data() + static_cast<std::size_t>(s.gaussian) * param::kPerGaussian;
          for (int j = 0; j < param::kPerGaussian; ++j) {
            if (active[j]) dst[j] += pg[j] * pg[j];
          }
        }
      }
    }
  }
  return h;
}

HessianDiagonal accumulate_train_hessian(const SceneModel& scene, const std::vector<CameraView>& views,
                                         FisherChannel channel, const FisherOptions& options) {
  if (views.empty()) throw std::invalid_argument("accumulate_train_hessian: no training views");
  HessianDiagonal total = compute_hessian_diag(scene, views.front(), channel, options);
  for (std::size_t i = 1; i < views.size(); ++i) total += compute_hessian_diag(scene, views[i], channel, options);
  return total;
}

double score_view(const HessianDiagonal& acquisition, const HessianDiagonal& train) {
  if (acquisition.values.size() != train.values.size()) {
    throw std::invalid_argument("score_view: parameter count mismatch (" + std::to_string(acquisition.values.size()) +
                                " vs " + std::to_string(train.values.size()) + ")");
  }
  double score = 0.0;
  for (std::size_t i = 0; i < train.values.size(); ++i) {
    score += acquisition.values[i] / (train.values[i] + train.lambda_prior);
  }
  return score;
}

double score_view(const CandidateView& candidate, const SceneModel& scene, const HessianDiagonal& train,
                  const FisherOptions& options) {
  return score_view(compute_hessian_diag(scene, candidate.cam, train.channel, options), train);
}

double combined_gain(const CandidateView& candidate, const SceneModel& scene, const HessianDiagonal& train_color,
                     const HessianDiagonal& train_depth, double alpha, double beta, const FisherOptions& options) {
  return alpha * score_view(candidate, scene, train_color, options) +
         beta * score_view(candidate, scene, train_depth, options);
}

std::size_t best_feasible(const std::vector<CandidateScore>& scores, double CandidateScore::*key) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a].*key != scores[b].*key) return scores[a].*key > scores[b].*key;
    return scores[a].id < scores[b].id;
  });
  for (std::size_t i : order) {
    if (scores[i].feasible) return i;
  }
  throw NoFeasibleView("no feasible candidate view");
}

Selection select_next_view(const std::vector<CandidateView>& candidates, const SceneModel& scene,
                           const HessianDiagonal& train_color, const HessianDiagonal& train_depth,
                           const SelectionParams& params) {
  if (candidates.empty()) throw NoFeasibleView("empty candidate set");
  Selection out;
  if (params.mode == SelectionMode::random) {
    std::vector<std::size_t> feasible;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (candidates[i].feasible) feasible.push_back(i);
    }
    if (feasible.empty()) throw NoFeasibleView("no feasible candidate view");
    Rng rng(params.seed);
    out.chosen = candidates[feasible[rng.index(feasible.size())]];
    return out;
  }

  const bool need_color = params.mode == SelectionMode::color || params.mode == SelectionMode::combined;
  const bool need_depth = params.mode == SelectionMode::depth || params.mode == SelectionMode::combined;
  for (const auto& c : candidates) {
    CandidateScore s;
    s.id = c.id;
    s.feasible = c.feasible;
    if (need_color) s.color = score_view(c, scene, train_color, params.fisher);
    if (need_depth) s.depth = score_view(c, scene, train_depth, params.fisher);
    s.combined = params.alpha * s.color + params.beta * s.depth;
    out.scores.push_back(s);
  }
  double CandidateScore::*key = &CandidateScore::combined;
  if (params.mode == SelectionMode::color) key = &CandidateScore::color;
  if (params.mode == SelectionMode::depth) key = &CandidateScore::depth;
  out.chosen = candidates[best_feasible(out.scores, key)];
  return out;
}

}  // namespace activesplat
