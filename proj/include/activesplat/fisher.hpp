#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "activesplat/rasterizer.hpp"

namespace activesplat {

/// Rasterizer head whose Jacobian defines the Fisher information.
enum class FisherChannel { color, depth, mask };

struct HessianDiagonal {
  std::vector<double> values;  // sum of squared Jacobian entries per parameter
  double lambda_prior = 1e-6;
  FisherChannel channel = FisherChannel::depth;

  HessianDiagonal& operator+=(const HessianDiagonal& other);
};

/// Which parameter groups take part in scoring.
struct ParamMask {
  std::array<bool, kParamGroupCount> groups{true, true, true, true, true, true};

  static ParamMask all() { return {}; }
  static ParamMask geometry_only() { return {{true, true, true, true, false, false}}; }
  bool includes(int offset) const { return groups[static_cast<std::size_t>(group_of_offset(offset))]; }
};

struct FisherOptions {
  double lambda_prior = 1e-6;
  ParamMask params;
  /// When non-empty, only Gaussians flagged here contribute (others stay zero).
  std::vector<bool> gaussian_filter;
  RenderSettings render;
};

/// Diagonal of J^T J for one view, J being the Jacobian of every output pixel
/// of the chosen channel with respect to the scene parameters.
HessianDiagonal compute_hessian_diag(const SceneModel& scene, const CameraView& cam, FisherChannel channel,
                                     const FisherOptions& options = {});

/// Sum of per-view diagonals over the training views.
HessianDiagonal accumulate_train_hessian(const SceneModel& scene, const std::vector<CameraView>& views,
                                         FisherChannel channel, const FisherOptions& options = {});

/// tr(H_acq H_train^-1) with diagonal matrices: sum_i h_acq[i] / (h_train[i] + lambda).
double score_view(const HessianDiagonal& acquisition, const HessianDiagonal& train);

struct CandidateView {
  int id = 0;
  CameraView cam;
  bool feasible = true;
};

double score_view(const CandidateView& candidate, const SceneModel& scene, const HessianDiagonal& train,
                  const FisherOptions& options = {});

/// alpha * color gain + beta * depth gain.
double combined_gain(const CandidateView& candidate, const SceneModel& scene, const HessianDiagonal& train_color,
                     const HessianDiagonal& train_depth, double alpha, double beta,
                     const FisherOptions& options = {});

enum class SelectionMode { random, color, depth, combined };

class NoFeasibleView : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct CandidateScore {
  int id = 0;
  double color = 0.0;
  double depth = 0.0;
  double combined = 0.0;
  bool feasible = true;
};

struct Selection {
  CandidateView chosen;
  std::vector<CandidateScore> scores;  // input order; empty in random mode
};

struct SelectionParams {
  SelectionMode mode = SelectionMode::depth;
  double alpha = 0.1;
  double beta = 1.0;
  std::uint64_t seed = 0;
  FisherOptions fisher;
};

/// Scores every candidate and returns the best feasible one (ties go to the
/// lower id); random mode picks uniformly among feasible candidates.
Selection select_next_view(const std::vector<CandidateView>& candidates, const SceneModel& scene,
                           const HessianDiagonal& train_color, const HessianDiagonal& train_depth,
                           const SelectionParams& params);

/// Index into `candidates` of the best feasible entry under `key`.
std::size_t best_feasible(const std::vector<CandidateScore>& scores, double CandidateScore::*key);

}  // namespace activesplat
