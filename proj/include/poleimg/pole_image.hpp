#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>

#include <Eigen/Core>

#include "poleimg/point_cloud.hpp"
#include "poleimg/pole_detector.hpp"

namespace poleimg {

struct PolarPoint {
  double r = 0.0;      // horizontal distance from the pole axis
  double theta = 0.0;  // degrees in [0, 360)
  double z = 0.0;      // meters above the pole base
};

struct PoleImageParams {
  double radius = 3.0;
  double z_min = 0.0;
  double z_max = 8.0;
  int rows = 80;   // z bins, row 0 is the lowest
  int cols = 360;  // theta bins
  bool canonicalize = true;

  void validate() const;
  double row_height() const { return (z_max - z_min) / rows; }
  double col_width() const { return 360.0 / cols; }

  bool operator==(const PoleImageParams&) const = default;
};

using BinaryGrid = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PoleImage {
  BinaryGrid grid;  // entries in {0, 1}
  std::optional<std::int64_t> pole_id;
  std::uint32_t session_id = 0;
  PoleImageParams params;
};

PolarPoint to_polar(const Point3& p, const PoleDetection& pole);

// Rasterizes the (theta, z) occupancy of every point within `params.radius`
// of the pole axis. Canonicalizes when `params.canonicalize` is set.
PoleImage render_pole_image(std::span<const Point3> points, const PoleDetection& pole,
                            const PoleImageParams& params);

inline PoleImage render_pole_image(const PointCloud& cloud, const PoleDetection& pole,
                                   const PoleImageParams& params) {
  PoleImage img = render_pole_image(std::span<const Point3>(cloud.points), pole, params);
  img.session_id = cloud.session_id;
  return img;
}

// Column c of the result is column (c - shift) mod cols of the input.
BinaryGrid circular_shift(const BinaryGrid& grid, int shift);

// Column holding the circular mean of the occupied cells, measured at column
// centers; nullopt when the resultant is below 1e-9 (empty or balanced).
std::optional<int> mean_angle_column(const BinaryGrid& grid);

// Rotates the theta axis so the occupancy circular mean lands in column 0.
PoleImage canonicalize(const PoleImage& img);

// Binary PGM (P5), 0/255, metadata in comment lines. Any nonzero pixel reads
// back as occupied.
void write_pgm(const PoleImage& img, const std::filesystem::path& path);
PoleImage read_pgm(const std::filesystem::path& path);

// Bucket index over the x-y plane for repeated radius queries.
class PointGridIndex {
 public:
  PointGridIndex(std::span<const Point3> points, double cell_size);

  // Points whose x-y distance to (x, y) is <= radius.
  std::vector<Point3> near(double x, double y, double radius) const;

 private:
  std::span<const Point3> points_;
  double cell_size_;
  std::vector<std::uint64_t> keys_;      // sorted cell keys
  std::vector<std::uint32_t> order_;     // point indices sorted by key
};

}  // namespace poleimg
