#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "activesplat/sim.hpp"

namespace activesplat {

using Json = nlohmann::json;

inline constexpr int kSceneFormatVersion = 1;
inline constexpr int kEventLogFormatVersion = 1;
inline constexpr int kManifestFormatVersion = 1;
inline constexpr int kScoreCsvFormatVersion = 1;

class FormatError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

Json scene_to_json(const SceneModel& scene);
SceneModel scene_from_json(const Json& j);
void save_scene(const std::filesystem::path& path, const SceneModel& scene);
SceneModel load_scene(const std::filesystem::path& path);

/// Camera JSON. Either {"pose": {"R": [9 row-major], "t": [3]}} or
/// {"eye": [3], "target": [3]}. Supervision entries are file paths resolved
/// against `base_dir`.
Json camera_to_json(const CameraView& cam);
CameraView camera_from_json(const Json& j, const std::filesystem::path& base_dir = {});
/// A single camera object, or {"cameras": [...]}.
std::vector<CameraView> load_cameras(const std::filesystem::path& path);
/// {"candidates": [camera + "feasible"]}.
std::vector<CandidateView> load_candidates(const std::filesystem::path& path);

Json loss_config_to_json(const LossConfig& c);
LossConfig loss_config_from_json(const Json& j, LossConfig base = {});
Json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j, TrainConfig base = {});
Json experiment_spec_to_json(const ExperimentSpec& s);
ExperimentSpec experiment_spec_from_json(const Json& j);

Json metrics_to_json(const Metrics& m);

/// "# activesplat-scores v1" header line, then id,color,depth,combined,feasible.
std::string scores_csv(const std::vector<CandidateScore>& scores);

/// One line of the event log (no trailing newline).
std::string event_log_line(const TrainingEvent& e);
std::string event_log(const std::vector<TrainingEvent>& events);

/// Touch sample as a depth file plus a JSON sidecar with pose and sensor spec.
void save_touch_sample(const std::filesystem::path& depth_path, const TouchSample& sample);
TouchSample load_touch_sample(const std::filesystem::path& depth_path);

/// FNV-1a 64-bit hash, hex encoded.
std::string content_hash(const std::string& bytes);

Json manifest(const std::string& subcommand, const Json& config, std::uint64_t seed,
              const std::vector<std::string>& outputs);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace activesplat
