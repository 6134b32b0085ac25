#pragma once

#include <filesystem>
#include <string>

#include "poleimg/pole_detector.hpp"
#include "poleimg/pole_image.hpp"
#include "poleimg/scene_synth.hpp"
#include "poleimg/training.hpp"

namespace poleimg {

// Everything a pipeline run needs. Every field has a default; JSON files may
// set any subset, unknown keys are rejected.
struct PipelineConfig {
  SynthConfig synth;
  int sessions = 2;
  DetectorParams detector;
  double association_tol = 0.5;
  PoleImageParams image;
  TrainConfig train;

  // Throws ConfigError for any violated nested invariant.
  void validate() const;
  // Sets every nested seed.
  void set_seed(std::uint64_t seed);
};

// Parses JSON text. Keys mirror the struct fields, grouped under "synth",
// "detector", "image" and "train"; a top-level "seed" sets every nested seed.
PipelineConfig parse_config(const std::string& json_text);
PipelineConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const PipelineConfig& config);

}  // namespace poleimg
