#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Core>

namespace poleimg {

using Point3 = Eigen::Vector3d;  // meters, z up

struct PointCloud {
  std::vector<Point3> points;
  std::uint32_t session_id = 0;
};

// ASCII point-cloud file:
//   PCXYZ 1 <session_id> <count>
//   x y z          (count lines)
// Coordinates are written in shortest round-trip form, so a write/read cycle
// reproduces every double exactly.
void write_cloud(const PointCloud& cloud, const std::filesystem::path& path);
PointCloud read_cloud(const std::filesystem::path& path);

}  // namespace poleimg
