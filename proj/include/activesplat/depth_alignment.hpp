#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <vector>

#include "activesplat/geometry.hpp"
#include "activesplat/scene.hpp"

namespace activesplat {

/// A mask has too few valid pixels or constant monocular depth to fit.
class DegenerateMask : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct MaskedDepthFrame {
  Image sensor_depth;       // metres, NaN invalid
  Image mono_depth;         // relative units
  std::vector<Image> masks;  // binary, nonzero = inside
  std::optional<int> object_mask_index;
};

struct Affine {
  double scale = 1.0;
  double offset = 0.0;
  double apply(double mono) const { return scale * mono + offset; }
};

struct AffineAlignment {
  std::vector<std::optional<Affine>> per_mask;  // nullopt for degenerate masks
  Affine global;
};

/// Closed-form least-squares (s, t) minimizing sum (sensor - (s * mono + t))^2
/// over mask pixels with finite sensor and mono depth. An empty mask image
/// selects every pixel.
Affine align_mask(const Image& sensor, const Image& mono, const Image& mask);

/// Fits every mask plus the global fallback.
AffineAlignment fit_frame(const MaskedDepthFrame& frame);

/// Aligned metric depth. Pixels covered by several masks use the smallest
/// mask; uncovered pixels and degenerate masks use the global fit.
Image align_frame(const MaskedDepthFrame& frame);
Image apply_alignment(const MaskedDepthFrame& frame, const AffineAlignment& alignment);

/// Back-projects a random fraction of finite depth pixels into isotropic
/// Gaussians with random colors. Deterministic for a given seed.
std::vector<Gaussian3D> lift_depth(const Image& aligned_depth, const CameraView& cam, double fraction,
                                   std::uint64_t seed, const Image* object_mask = nullptr);

/// Binary mask of pixels whose ground-truth object id equals `object_id`.
Image object_mask_from_ids(const Image& object_ids, int object_id);

/// Simulation stand-in for prompt propagation: the prompt pixel in the first
/// camera selects an object, whose ground-truth silhouette is returned for
/// every camera.
std::vector<Image> propagate_object_mask(const World& world, const std::vector<CameraView>& cams, int prompt_x,
                                         int prompt_y);

/// External mode: one PGM mask per frame, passed through unchanged.
std::vector<Image> propagate_object_mask(const std::vector<std::filesystem::path>& mask_files);

}  // namespace activesplat
