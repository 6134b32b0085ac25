#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unistd.h>

#include "poleimg/point_cloud.hpp"
#include "poleimg/pole_detector.hpp"
#include "poleimg/rng.hpp"

namespace testing {

// Scratch directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("poleimg_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

// Points scattered around a pole at the origin with base z = 0.
inline std::vector<poleimg::Point3> random_points_around(std::uint64_t seed, int n, double radius = 3.0,
                                                         double z_max = 8.0) {
  poleimg::Rng rng(seed, "test-points");
  std::vector<poleimg::Point3> pts;
  for (int i = 0; i < n; ++i) {
    pts.emplace_back(rng.uniform(-radius, radius), rng.uniform(-radius, radius), rng.uniform(0.0, z_max));
  }
  return pts;
}

inline poleimg::PoleDetection pole_at(double x, double y, double base_z = 0.0) {
  poleimg::PoleDetection d;
  d.center_x = x;
  d.center_y = y;
  d.base_z = base_z;
  d.vertical_extent = 4.0;
  d.support_count = 100;
  return d;
}

}  // namespace testing
