#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "poleimg/point_cloud.hpp"
#include "poleimg/scene_synth.hpp"

namespace poleimg {

struct DetectorParams {
  double cell_size = 0.25;
  double min_vertical_extent = 1.0;
  double max_horizontal_rms = 0.30;
  int min_support_points = 30;
  double merge_radius = 0.5;

  void validate() const;
};

struct PoleDetection {
  double center_x = 0.0;
  double center_y = 0.0;
  double base_z = 0.0;  // lowest supporting point
  double vertical_extent = 0.0;
  int support_count = 0;
};

// Grid-and-cluster pole extraction:
//  1. bin points into an x-y grid of `cell_size`;
//  2. keep cells whose z span reaches `min_vertical_extent`;
//  3. group kept cells by 8-connectivity;
//  4. accept clusters that are thin (horizontal RMS about their centroid) and
//     well supported;
//  5. merge accepted clusters closer than `merge_radius`.
// Output is sorted by (center_x, center_y).
std::vector<PoleDetection> detect_poles(const PointCloud& cloud, const DetectorParams& params = {});

struct Association {
  // matched_pole[i] is the truth pole id for detection i, if any.
  std::vector<std::optional<std::int64_t>> matched_pole;
  std::size_t matched = 0;
  double precision = 0.0;
  double recall = 0.0;
};

// Greedy matching in ascending ground-plane distance; each detection and each
// truth pole is used at most once, pairs further apart than `tol` stay unmatched.
Association associate_detections(const std::vector<PoleDetection>& detections,
                                 const GroundTruth& truth, double tol);

}  // namespace poleimg
