#include "poleimg/pole_image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "poleimg/errors.hpp"

namespace poleimg {

namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

int positive_mod(long long a, int m) {
  const long long r = a % m;
  return static_cast<int>(r < 0 ? r + m : r);
}

std::uint64_t cell_key(long long ix, long long iy) {
  return (static_cast<std::uint64_t>(ix) << 32) ^ (static_cast<std::uint64_t>(iy) & 0xFFFFFFFFULL);
}

}  // namespace

void PoleImageParams::validate() const {
  if (!(radius > 0.0)) throw ConfigError("invalid PoleImageParams: radius must be > 0");
  if (!(z_max > z_min)) throw ConfigError("invalid PoleImageParams: z_max must exceed z_min");
  if (rows < 1 || cols < 1) throw ConfigError("invalid PoleImageParams: rows and cols must be >= 1");
}

PolarPoint to_polar(const Point3& p, const PoleDetection& pole) {
  const double dx = p.x() - pole.center_x;
  const double dy = p.y() - pole.center_y;
  PolarPoint q;
  q.r = std::hypot(dx, dy);
  q.z = p.z() - pole.base_z;
  if (q.r == 0.0) return q;
  double theta = std::atan2(dy, dx) * kRadToDeg;
  if (theta < 0.0) theta += 360.0;
  // -tiny + 360 rounds to 360 exactly.
  if (theta >= 360.0) theta = 0.0;
  q.theta = theta;
  return q;
}

PoleImage render_pole_image(std::span<const Point3> points, const PoleDetection& pole,
                            const PoleImageParams& params) {
  params.validate();
  PoleImage img;
  img.params = params;
  img.grid = BinaryGrid::Zero(params.rows, params.cols);
  const double dz = params.row_height();
  const double dtheta = params.col_width();
  for (const Point3& p : points) {
    const PolarPoint q = to_polar(p, pole);
    if (q.r > params.radius || q.z < params.z_min || q.z >= params.z_max) continue;
    const int row = std::min(params.rows - 1, static_cast<int>(std::floor((q.z - params.z_min) / dz)));
    const int col = std::min(params.cols - 1, static_cast<int>(std::floor(q.theta / dtheta)));
    img.grid(row, col) = 1;
  }
  return params.canonicalize ? canonicalize(img) : img;
}

BinaryGrid circular_shift(const BinaryGrid& grid, int shift) {
  const int cols = static_cast<int>(grid.cols());
  BinaryGrid out(grid.rows(), grid.cols());
  if (cols == 0) return out;
  const int s = positive_mod(shift, cols);
  for (int c = 0; c < cols; ++c) out.col((c + s) % cols) = grid.col(c);
  return out;
}

std::optional<int> mean_angle_column(const BinaryGrid& grid) {
  const int cols = static_cast<int>(grid.cols());
  if (cols == 0) return std::nullopt;
  const double width = 2.0 * std::numbers::pi / cols;
  double sx = 0.0, sy = 0.0;
  for (int c = 0; c < cols; ++c) {
    const double mass = grid.col(c).cast<double>().sum();
    if (mass == 0.0) continue;
    const double a = (c + 0.5) * width;
    sx += mass * std::cos(a);
    sy += mass * std::sin(a);
  }
  if (std::hypot(sx, sy) <= 1e-9) return std::nullopt;
  double angle = std::atan2(sy, sx);
  if (angle < 0.0) angle += 2.0 * std::numbers::pi;
  return positive_mod(static_cast<long long>(std::floor(angle / width)), cols);
}

PoleImage canonicalize(const PoleImage& img) {
  const auto column = mean_angle_column(img.grid);
  if (!column) return img;
  PoleImage out = img;
  out.grid = circular_shift(img.grid, -*column);
  return out;
}

void write_pgm(const PoleImage& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const PoleImageParams& p = img.params;
  std::ostringstream header;
  header.precision(17);
  header << "P5\n";
  header << "# pole_id " << (img.pole_id ? std::to_string(*img.pole_id) : std::string("none")) << "\n";
  header << "# session_id " << img.session_id << "\n";
  header << "# radius " << p.radius << "\n";
  header << "# z_min " << p.z_min << "\n";
  header << "# z_max " << p.z_max << "\n";
  header << "# rows " << p.rows << "\n";
  header << "# cols " << p.cols << "\n";
  header << "# canonicalize " << (p.canonicalize ? 1 : 0) << "\n";
  header << img.grid.cols() << " " << img.grid.rows() << "\n255\n";
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  std::vector<char> pixels(static_cast<std::size_t>(img.grid.size()));
  for (Eigen::Index i = 0; i < img.grid.size(); ++i) {
    pixels[static_cast<std::size_t>(i)] = img.grid.data()[i] ? static_cast<char>(255) : 0;
  }
  out.write(pixels.data(), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

PoleImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (data.size() < 2 || data.compare(0, 2, "P5") != 0) {
    throw ParseError("unsupported magic in " + path.string() + " (expected P5)");
  }

  PoleImage img;
  std::optional<int> declared_rows, declared_cols;
  std::size_t pos = 2;
  std::vector<long> fields;
  // Header tokens: width, height, maxval, interleaved with comment lines.
  while (fields.size() < 3) {
    while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (pos >= data.size()) throw ParseError("truncated PGM header in " + path.string());
    if (data[pos] == '#') {
      const std::size_t eol = data.find('\n', pos);
      if (eol == std::string::npos) throw ParseError("truncated PGM comment in " + path.string());
      std::istringstream comment(data.substr(pos + 1, eol - pos - 1));
      std::string key, value;
      comment >> key >> value;
      try {
        if (key == "pole_id") {
          if (value != "none") img.pole_id = std::stoll(value);
        } else if (key == "session_id") {
          img.session_id = static_cast<std::uint32_t>(std::stoul(value));
        } else if (key == "radius") {
          img.params.radius = std::stod(value);
        } else if (key == "z_min") {
          img.params.z_min = std::stod(value);
        } else if (key == "z_max") {
          img.params.z_max = std::stod(value);
        } else if (key == "rows") {
          declared_rows = std::stoi(value);
        } else if (key == "cols") {
          declared_cols = std::stoi(value);
        } else if (key == "canonicalize") {
          img.params.canonicalize = value != "0";
        }
      } catch (const std::logic_error&) {
        throw ParseError("bad metadata '" + key + "' in " + path.string());
      }
      pos = eol + 1;
      continue;
    }
    std::size_t end = pos;
    while (end < data.size() && std::isdigit(static_cast<unsigned char>(data[end]))) ++end;
    if (end == pos) throw ParseError("malformed PGM header in " + path.string());
    fields.push_back(std::stol(data.substr(pos, end - pos)));
    pos = end;
  }
  // Exactly one whitespace byte separates maxval from the raster.
  if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos]))) {
    throw ParseError("malformed PGM header in " + path.string());
  }
  ++pos;

  const long width = fields[0], height = fields[1], maxval = fields[2];
  if (width < 1 || height < 1) throw ParseError("bad PGM dimensions in " + path.string());
  if (maxval < 1 || maxval > 255) throw ParseError("unsupported PGM maxval in " + path.string());
  if ((declared_rows && *declared_rows != height) || (declared_cols && *declared_cols != width)) {
    throw ParseError("PGM dimensions " + std::to_string(width) + "x" + std::to_string(height) +
                     " do not match declared params in " + path.string());
  }
  img.params.rows = static_cast<int>(height);
  img.params.cols = static_cast<int>(width);
  img.params.validate();

  const std::size_t n = static_cast<std::size_t>(width * height);
  if (data.size() - pos < n) {
    throw ParseError("truncated PGM raster in " + path.string() + ": expected " + std::to_string(n) +
                     " bytes, got " + std::to_string(data.size() - pos));
  }
  img.grid.resize(height, width);
  for (std::size_t i = 0; i < n; ++i) img.grid.data()[i] = data[pos + i] != 0 ? 1 : 0;
  return img;
}

PointGridIndex::PointGridIndex(std::span<const Point3> points, double cell_size)
    : points_(points), cell_size_(cell_size) {
  std::vector<std::uint64_t> keys(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    keys[i] = cell_key(static_cast<long long>(std::floor(points[i].x() / cell_size)),
                       static_cast<long long>(std::floor(points[i].y() / cell_size)));
  }
  order_.resize(points.size());
  std::iota(order_.begin(), order_.end(), 0u);
  std::stable_sort(order_.begin(), order_.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return keys[a] < keys[b]; });
  keys_.resize(points.size());
  for (std::size_t i = 0; i < order_.size(); ++i) keys_[i] = keys[order_[i]];
}

std::vector<Point3> PointGridIndex::near(double x, double y, double radius) const {
  std::vector<Point3> out;
  const auto x0 = static_cast<long long>(std::floor((x - radius) / cell_size_));
  const auto x1 = static_cast<long long>(std::floor((x + radius) / cell_size_));
  const auto y0 = static_cast<long long>(std::floor((y - radius) / cell_size_));
  const auto y1 = static_cast<long long>(std::floor((y + radius) / cell_size_));
  for (long long ix = x0; ix <= x1; ++ix) {
    for (long long iy = y0; iy <= y1; ++iy) {
      const std::uint64_t key = cell_key(ix, iy);
      auto [lo, hi] = std::equal_range(keys_.begin(), keys_.end(), key);
      for (auto it = lo; it != hi; ++it) {
        const Point3& p = points_[order_[static_cast<std::size_t>(it - keys_.begin())]];
        if (std::hypot(p.x() - x, p.y() - y) <= radius) out.push_back(p);
      }
    }
  }
  return out;
}

}  // namespace poleimg
