#include "poleimg/pole_detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <tuple>
#include <unordered_map>

#include "poleimg/errors.hpp"

namespace poleimg {

namespace {

struct Cell {
  std::int64_t ix = 0;
  std::int64_t iy = 0;
  double z_min = std::numeric_limits<double>::infinity();
  double z_max = -std::numeric_limits<double>::infinity();
  std::vector<std::uint32_t> points;
};

std::uint64_t cell_key(std::int64_t ix, std::int64_t iy) {
  return (static_cast<std::uint64_t>(ix) << 32) ^ (static_cast<std::uint64_t>(iy) & 0xFFFFFFFFULL);
}

struct Candidate {
  double cx = 0.0;
  double cy = 0.0;
  double z_lo = 0.0;
  double z_hi = 0.0;
  int support = 0;
};

}  // namespace

void DetectorParams::validate() const {
  if (!(cell_size > 0.0 && min_vertical_extent > 0.0 && max_horizontal_rms > 0.0 &&
        min_support_points > 0 && merge_radius > 0.0)) {
    throw ConfigError("invalid DetectorParams: all values must be positive");
  }
  if (merge_radius < cell_size) throw ConfigError("invalid DetectorParams: merge_radius < cell_size");
}

std::vector<PoleDetection> detect_poles(const PointCloud& cloud, const DetectorParams& params) {
  params.validate();
  const auto& pts = cloud.points;

  // Cells are created in first-touch order, then sorted by grid index so the
  // cluster enumeration below is independent of point order.
  std::unordered_map<std::uint64_t, std::size_t> index;
  std::vector<Cell> cells;
  for (std::uint32_t i = 0; i < pts.size(); ++i) {
    const auto ix = static_cast<std::int64_t>(std::floor(pts[i].x() / params.cell_size));
    const auto iy = static_cast<std::int64_t>(std::floor(pts[i].y() / params.cell_size));
    auto [it, inserted] = index.try_emplace(cell_key(ix, iy), cells.size());
    if (inserted) {
      cells.emplace_back();
      cells.back().ix = ix;
      cells.back().iy = iy;
    }
    Cell& c = cells[it->second];
    c.z_min = std::min(c.z_min, pts[i].z());
    c.z_max = std::max(c.z_max, pts[i].z());
    c.points.push_back(i);
  }

  std::vector<std::size_t> tall;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    if (cells[k].z_max - cells[k].z_min >= params.min_vertical_extent) tall.push_back(k);
  }
  std::sort(tall.begin(), tall.end(), [&](std::size_t a, std::size_t b) {
    return std::tie(cells[a].ix, cells[a].iy) < std::tie(cells[b].ix, cells[b].iy);
  });
  std::unordered_map<std::uint64_t, std::size_t> tall_index;
  for (std::size_t k : tall) tall_index.emplace(cell_key(cells[k].ix, cells[k].iy), k);

  std::vector<Candidate> candidates;
  std::unordered_map<std::size_t, bool> visited;
  std::vector<std::size_t> stack;
  std::vector<std::size_t> cluster;
  for (std::size_t seed : tall) {
    if (visited[seed]) continue;
    visited[seed] = true;
    cluster.clear();
    stack.assign(1, seed);
    while (!stack.empty()) {
      const std::size_t k = stack.back();
      stack.pop_back();
      cluster.push_back(k);
      for (std::int64_t dx = -1; dx <= 1; ++dx) {
        for (std::int64_t dy = -1; dy <= 1; ++dy) {
          if (dx == 0 && dy == 0) continue;
          auto it = tall_index.find(cell_key(cells[k].ix + dx, cells[k].iy + dy));
          if (it == tall_index.end() || visited[it->second]) continue;
          visited[it->second] = true;
          stack.push_back(it->second);
        }
      }
    }
    std::sort(cluster.begin(), cluster.end(), [&](std::size_t a, std::size_t b) {
      return std::tie(cells[a].ix, cells[a].iy) < std::tie(cells[b].ix, cells[b].iy);
    });

    std::size_t n = 0;
    double sx = 0.0, sy = 0.0;
    Candidate c;
    c.z_lo = std::numeric_limits<double>::infinity();
    c.z_hi = -std::numeric_limits<double>::infinity();
    for (std::size_t k : cluster) {
      for (std::uint32_t i : cells[k].points) {
        sx += pts[i].x();
        sy += pts[i].y();
        c.z_lo = std::min(c.z_lo, pts[i].z());
        c.z_hi = std::max(c.z_hi, pts[i].z());
        ++n;
      }
    }
    if (n < static_cast<std::size_t>(params.min_support_points)) continue;
    c.cx = sx / static_cast<double>(n);
    c.cy = sy / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t k : cluster) {
      for (std::uint32_t i : cells[k].points) {
        const double dx = pts[i].x() - c.cx, dy = pts[i].y() - c.cy;
        ss += dx * dx + dy * dy;
      }
    }
    if (std::sqrt(ss / static_cast<double>(n)) > params.max_horizontal_rms) continue;
    c.support = static_cast<int>(n);
    candidates.push_back(c);
  }

  // Merge the closest pair within merge_radius until none remains.
  const double merge2 = params.merge_radius * params.merge_radius;
  for (;;) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0, bj = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      for (std::size_t j = i + 1; j < candidates.size(); ++j) {
        const double dx = candidates[i].cx - candidates[j].cx;
        const double dy = candidates[i].cy - candidates[j].cy;
        const double d2 = dx * dx + dy * dy;
        if (d2 <= merge2 && d2 < best) {
          best = d2;
          bi = i;
          bj = j;
        }
      }
    }
    if (!std::isfinite(best)) break;
    Candidate& a = candidates[bi];
    const Candidate& b = candidates[bj];
    const double wa = a.support, wb = b.support;
    a.cx = (wa * a.cx + wb * b.cx) / (wa + wb);
    a.cy = (wa * a.cy + wb * b.cy) / (wa + wb);
    a.z_lo = std::min(a.z_lo, b.z_lo);
    a.z_hi = std::max(a.z_hi, b.z_hi);
    a.support += b.support;
    candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(bj));
  }

  std::vector<PoleDetection> out;
  out.reserve(candidates.size());
  for (const Candidate& c : candidates) {
    out.push_back({c.cx, c.cy, c.z_lo, c.z_hi - c.z_lo, c.support});
  }
  std::sort(out.begin(), out.end(), [](const PoleDetection& a, const PoleDetection& b) {
    return std::tie(a.center_x, a.center_y) < std::tie(b.center_x, b.center_y);
  });
  return out;
}

Association associate_detections(const std::vector<PoleDetection>& detections,
                                 const GroundTruth& truth, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("association tolerance must be > 0");

  struct Pair {
    double dist;
    std::size_t det;
    std::size_t pole;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    for (std::size_t j = 0; j < truth.poles.size(); ++j) {
      const double d = std::hypot(detections[i].center_x - truth.poles[j].x,
                                  detections[i].center_y - truth.poles[j].y);
      if (d <= tol) pairs.push_back({d, i, j});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(a.dist, a.det, a.pole) < std::tie(b.dist, b.det, b.pole);
  });

  Association result;
  result.matched_pole.assign(detections.size(), std::nullopt);
  std::vector<bool> pole_used(truth.poles.size(), false);
  for (const Pair& p : pairs) {
    if (result.matched_pole[p.det] || pole_used[p.pole]) continue;
    result.matched_pole[p.det] = truth.poles[p.pole].id;
    pole_used[p.pole] = true;
    ++result.matched;
  }
  const double m = static_cast<double>(result.matched);
  result.precision = detections.empty() ? 0.0 : m / static_cast<double>(detections.size());
  result.recall = truth.poles.empty() ? 0.0 : m / static_cast<double>(truth.poles.size());
  return result;
}

}  // namespace poleimg
