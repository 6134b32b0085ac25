#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "poleimg/point_cloud.hpp"

namespace poleimg {

// Parameters of a synthetic multi-session scene. Every pole receives its own
// clutter arrangement inside `signature_radius`; sessions differ by clutter
// dropout, per-object jitter and fresh sensor noise while poles stay fixed.
struct SynthConfig {
  int n_poles = 200;
  double area_side = 160.0;
  double min_pole_separation = 6.5;
  std::pair<double, double> pole_radius_range{0.08, 0.20};
  std::pair<double, double> pole_height_range{3.0, 7.0};
  std::pair<int, int> clutter_objects_per_pole{3, 6};
  double points_per_surface_unit = 150.0;  // points / m^2
  double ground_density = 1.0;             // points / m^2
  double sensor_noise_sigma = 0.02;
  double session_dropout = 0.3;
  double session_jitter = 0.15;
  double signature_radius = 3.0;  // clutter stays inside this radius
  std::uint64_t seed = 1;

  // Throws ConfigError naming the offending field.
  void validate() const;
};

enum class ClutterKind : std::uint8_t { Box, Wall, Blob };

struct PoleSpec {
  std::int64_t id = 0;
  double x = 0.0;
  double y = 0.0;
  double radius = 0.0;
  double height = 0.0;

  bool operator==(const PoleSpec&) const = default;
};

// Box: axis-aligned, `half_extent` are half sizes, rests on the ground.
// Wall: vertical rectangle of length 2*half_extent.x() and height
//   2*half_extent.z() rotated by `yaw`; zero thickness.
// Blob: ellipsoid with semi-axes `half_extent` centered at `center`.
struct ClutterObject {
  ClutterKind kind = ClutterKind::Box;
  std::size_t pole_index = 0;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d half_extent = Eigen::Vector3d::Zero();
  double yaw = 0.0;

  bool operator==(const ClutterObject&) const = default;
};

struct SceneDescription {
  SynthConfig config;
  std::vector<PoleSpec> poles;
  std::vector<ClutterObject> clutter;
};

bool operator==(const SceneDescription& a, const SceneDescription& b);

struct TruePole {
  std::int64_t id = 0;
  double x = 0.0;
  double y = 0.0;
};

// Pole IDs and positions are shared by all sessions of a scene.
struct GroundTruth {
  std::vector<TruePole> poles;
};

struct Scene {
  SceneDescription description;
  GroundTruth truth;
};

Scene generate_scene(const SynthConfig& config);

enum class PointSource : std::uint8_t { Ground, Shaft, Clutter };

struct LabeledCloud {
  PointCloud cloud;
  std::vector<PointSource> sources;  // parallel to cloud.points
};

LabeledCloud sample_session_labeled(const SceneDescription& scene, std::uint32_t session_id);

inline PointCloud sample_session(const SceneDescription& scene, std::uint32_t session_id) {
  return sample_session_labeled(scene, session_id).cloud;
}

// Minimum horizontal gap between a pole axis and any clutter surface.
inline constexpr double kClutterClearance = 1.0;

}  // namespace poleimg
