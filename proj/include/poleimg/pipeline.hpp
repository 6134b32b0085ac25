#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "poleimg/config.hpp"
#include "poleimg/pole_detector.hpp"
#include "poleimg/retrieval.hpp"
#include "poleimg/scene_synth.hpp"
#include "poleimg/training.hpp"

// File-based pipeline stages shared by the command-line tool and the
// end-to-end tests. Every stage writes only below its output path.

namespace poleimg {

// Failure of one named pipeline stage.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error("stage '" + stage + "' failed: " + what), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

std::string cloud_file_name(std::uint32_t session);

// scene.json: {"poles": [{id, x, y, radius, height}], "config": {...}}
void write_scene_json(const Scene& scene, const PipelineConfig& config, const std::filesystem::path& path);
GroundTruth read_ground_truth(const std::filesystem::path& scene_json);

struct SynthSummary {
  std::size_t poles = 0;
  std::size_t clutter_objects = 0;
  std::vector<std::size_t> points_per_session;
};

SynthSummary run_synth(const PipelineConfig& config, const std::filesystem::path& out_dir);

struct DetectionRecord {
  std::optional<std::int64_t> id;  // unset for detections left unmatched by association
  PoleDetection detection;
};

struct DetectResult {
  std::vector<DetectionRecord> detections;
  std::optional<Association> association;
};

// Ids come from association when `truth` is given, else they are sequential.
DetectResult run_detect(const PointCloud& cloud, const DetectorParams& params,
                        const std::optional<GroundTruth>& truth, double tol);

// JSON list of {id, x, y, base_z, extent, support}; unmatched ids are null.
void write_detections(const std::vector<DetectionRecord>& detections, const std::filesystem::path& path);
std::vector<DetectionRecord> read_detections(const std::filesystem::path& path);

// Renders one PGM per identified detection into `out_dir` and writes
// `out_dir/manifest.tsv`. Returns the manifest rows.
std::vector<ManifestRow> run_render(const PointCloud& cloud, const std::vector<DetectionRecord>& detections,
                                    const PoleImageParams& params, const std::filesystem::path& out_dir);

struct MethodScores {
  std::string method;
  EvalReport forward;   // queries from the first session against the second
  EvalReport backward;  // the reverse direction
};

struct ReproResult {
  std::vector<double> detection_precision;  // per session
  std::vector<double> detection_recall;
  TrainResult cl;
  TrainResult sl;
  std::vector<MethodScores> methods;  // baseline, sl, cl
  double seconds = 0.0;
};

using LogFn = std::function<void(const std::string&)>;

// synth -> detect -> render -> train (cl, sl) -> eval (baseline, sl, cl) on
// the held-out split. Evaluation queries come from session 0 and search
// session 1 (and the reverse), restricted to poles observed in both.
ReproResult run_repro(const PipelineConfig& config, const std::filesystem::path& out_dir,
                      const LogFn& log = {});

std::string comparison_table(const std::vector<MethodScores>& methods);

}  // namespace poleimg
