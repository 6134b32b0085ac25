#include "poleimg/scene_synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "poleimg/errors.hpp"
#include "poleimg/rng.hpp"

namespace poleimg {

namespace {

constexpr int kPlacementAttempts = 10000;
constexpr int kClutterAttempts = 200;
// Clutter keeps this margin inside the signature radius so session jitter
// does not push it across.
constexpr double kRadiusMargin = 0.2;
// Coordinates are snapped to micrometers so the ASCII format stays short
// while remaining lossless.
constexpr double kQuantum = 1e-6;

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError("invalid SynthConfig: " + message);
}

double quantize(double v) { return std::round(v / kQuantum) * kQuantum; }

double footprint_radius(const ClutterObject& o) {
  switch (o.kind) {
    case ClutterKind::Box:
      return std::hypot(o.half_extent.x(), o.half_extent.y());
    case ClutterKind::Wall:
      return o.half_extent.x();
    case ClutterKind::Blob:
      return std::max(o.half_extent.x(), o.half_extent.y());
  }
  return 0.0;
}

ClutterObject draw_clutter_shape(Rng& rng) {
  ClutterObject o;
  switch (rng.below(3)) {
    case 0: {
      o.kind = ClutterKind::Box;
      const double h = rng.uniform(1.3, 2.5);
      o.half_extent = {rng.uniform(0.4, 0.6), rng.uniform(0.4, 0.6), 0.5 * h};
      o.center.z() = 0.5 * h;
      break;
    }
    case 1: {
      o.kind = ClutterKind::Wall;
      const double h = rng.uniform(1.3, 4.0);
      o.half_extent = {0.5 * rng.uniform(1.2, 1.8), 0.0, 0.5 * h};
      o.center.z() = 0.5 * h;
      o.yaw = rng.uniform(0.0, std::numbers::pi);
      break;
    }
    default: {
      o.kind = ClutterKind::Blob;
      // Low and resting on the ground so no cell reaches the detector's
      // vertical-extent threshold.
      o.half_extent = {rng.uniform(0.45, 0.8), rng.uniform(0.45, 0.8), rng.uniform(0.2, 0.35)};
      o.center.z() = o.half_extent.z();
      break;
    }
  }
  return o;
}

// Approximate ellipsoid surface area (Knud Thomsen, p = 1.6075).
double ellipsoid_area(const Eigen::Vector3d& axes) {
  constexpr double p = 1.6075;
  const double ab = std::pow(axes.x() * axes.y(), p);
  const double ac = std::pow(axes.x() * axes.z(), p);
  const double bc = std::pow(axes.y() * axes.z(), p);
  return 4.0 * std::numbers::pi * std::pow((ab + ac + bc) / 3.0, 1.0 / p);
}

std::size_t count_for(double area, double density) {
  return static_cast<std::size_t>(std::llround(area * density));
}

class SurfaceSampler {
 public:
  SurfaceSampler(Rng& rng, double density) : rng_(rng), density_(density) {}

  template <typename Emit>
  void rectangle(const Eigen::Vector3d& origin, const Eigen::Vector3d& u, const Eigen::Vector3d& v,
                 Emit&& emit) {
    const std::size_t n = count_for(u.norm() * v.norm(), density_);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = rng_.uniform();
      const double b = rng_.uniform();
      emit(Eigen::Vector3d(origin + a * u + b * v));
    }
  }

  template <typename Emit>
  void shaft(double cx, double cy, double radius, double height, Emit&& emit) {
    const std::size_t n = count_for(2.0 * std::numbers::pi * radius * height, density_);
    for (std::size_t i = 0; i < n; ++i) {
      const double phi = rng_.uniform(0.0, 2.0 * std::numbers::pi);
      const double z = rng_.uniform(0.0, height);
      emit(Eigen::Vector3d(cx + radius * std::cos(phi), cy + radius * std::sin(phi), z));
    }
  }

  template <typename Emit>
  void object(const ClutterObject& o, const Eigen::Vector3d& center, Emit&& emit) {
    const Eigen::Vector3d& h = o.half_extent;
    switch (o.kind) {
      case ClutterKind::Box: {
        const Eigen::Vector3d lo = center - h;
        const Eigen::Vector3d ex(2 * h.x(), 0, 0), ey(0, 2 * h.y(), 0), ez(0, 0, 2 * h.z());
        rectangle(lo, ex, ez, emit);
        rectangle(Eigen::Vector3d(lo + ey), ex, ez, emit);
        rectangle(lo, ey, ez, emit);
        rectangle(Eigen::Vector3d(lo + ex), ey, ez, emit);
        rectangle(Eigen::Vector3d(lo + ez), ex, ey, emit);
        break;
      }
      case ClutterKind::Wall: {
        const Eigen::Vector3d along(std::cos(o.yaw) * 2 * h.x(), std::sin(o.yaw) * 2 * h.x(), 0);
        const Eigen::Vector3d up(0, 0, 2 * h.z());
        rectangle(Eigen::Vector3d(center - 0.5 * along - 0.5 * up), along, up, emit);
        break;
      }
      case ClutterKind::Blob: {
        const std::size_t n = count_for(ellipsoid_area(h), density_);
        for (std::size_t i = 0; i < n; ++i) {
          const double cz = rng_.uniform(-1.0, 1.0);
          const double phi = rng_.uniform(0.0, 2.0 * std::numbers::pi);
          const double s = std::sqrt(std::max(0.0, 1.0 - cz * cz));
          emit(Eigen::Vector3d(center.x() + h.x() * s * std::cos(phi),
                               center.y() + h.y() * s * std::sin(phi), center.z() + h.z() * cz));
        }
        break;
      }
    }
  }

 private:
  Rng& rng_;
  double density_;
};

}  // namespace

void SynthConfig::validate() const {
  require(n_poles >= 1, "n_poles must be >= 1");
  require(area_side > 0.0, "area_side must be > 0");
  require(signature_radius > 0.0, "signature_radius must be > 0");
  require(min_pole_separation > 2.0 * signature_radius,
          "min_pole_separation must exceed 2 * signature_radius");
  require(pole_radius_range.first > 0.0 && pole_radius_range.first <= pole_radius_range.second,
          "pole_radius_range must be positive and ordered");
  require(pole_height_range.first > 0.0 && pole_height_range.first <= pole_height_range.second,
          "pole_height_range must be positive and ordered");
  require(clutter_objects_per_pole.first >= 0 &&
              clutter_objects_per_pole.first <= clutter_objects_per_pole.second,
          "clutter_objects_per_pole must be non-negative and ordered");
  require(points_per_surface_unit > 0.0, "points_per_surface_unit must be > 0");
  require(ground_density >= 0.0, "ground_density must be >= 0");
  require(sensor_noise_sigma >= 0.0, "sensor_noise_sigma must be >= 0");
  require(session_dropout >= 0.0 && session_dropout < 1.0, "session_dropout must be in [0, 1)");
  require(session_jitter >= 0.0, "session_jitter must be >= 0");
  require(signature_radius - kRadiusMargin - 2.0 * session_jitter * std::numbers::sqrt2 > kClutterClearance + 0.5,
          "signature_radius too small to hold clutter");
  require(std::isfinite(area_side) && std::isfinite(min_pole_separation), "non-finite geometry");
}

bool operator==(const SceneDescription& a, const SceneDescription& b) {
  return a.poles == b.poles && a.clutter == b.clutter;
}

Scene generate_scene(const SynthConfig& config) {
  config.validate();
  if (config.n_poles >= 2 && config.min_pole_separation > config.area_side * std::numbers::sqrt2) {
    throw ConfigError("min_pole_separation " + std::to_string(config.min_pole_separation) +
                      " cannot fit two poles in area_side " + std::to_string(config.area_side));
  }

  Scene scene;
  scene.description.config = config;
  auto& poles = scene.description.poles;

  Rng placement(config.seed, "placement");
  const double sep2 = config.min_pole_separation * config.min_pole_separation;
  for (int i = 0; i < config.n_poles; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      const double x = placement.uniform(0.0, config.area_side);
      const double y = placement.uniform(0.0, config.area_side);
      placed = std::all_of(poles.begin(), poles.end(), [&](const PoleSpec& p) {
        const double dx = p.x - x, dy = p.y - y;
        return dx * dx + dy * dy >= sep2;
      });
      if (placed) {
        PoleSpec pole;
        pole.id = i;
        pole.x = x;
        pole.y = y;
        poles.push_back(pole);
      }
    }
    if (!placed) {
      throw ConfigError("could not place pole " + std::to_string(i) + " of " +
                        std::to_string(config.n_poles) + " with min_pole_separation " +
                        std::to_string(config.min_pole_separation) + " in area_side " +
                        std::to_string(config.area_side));
    }
  }

  // Jitter moves each axis independently, so the displacement reaches jitter * sqrt(2).
  const double max_shift = config.session_jitter * std::numbers::sqrt2;
  const double max_reach = config.signature_radius - kRadiusMargin - max_shift;
  for (std::size_t i = 0; i < poles.size(); ++i) {
    PoleSpec& pole = poles[i];
    Rng rng(config.seed, "pole", i);
    pole.radius = rng.uniform(config.pole_radius_range.first, config.pole_radius_range.second);
    pole.height = rng.uniform(config.pole_height_range.first, config.pole_height_range.second);
    const auto [lo, hi] = config.clutter_objects_per_pole;
    const int n_objects = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
    for (int k = 0; k < n_objects; ++k) {
      for (int attempt = 0; attempt < kClutterAttempts; ++attempt) {
        ClutterObject o = draw_clutter_shape(rng);
        const double reach = footprint_radius(o);
        const double d_lo = kClutterClearance + max_shift + reach;
        const double d_hi = max_reach - reach;
        if (d_hi < d_lo) continue;
        const double d = rng.uniform(d_lo, d_hi);
        const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
        o.center.x() = pole.x + d * std::cos(phi);
        o.center.y() = pole.y + d * std::sin(phi);
        o.pole_index = i;
        scene.description.clutter.push_back(o);
        break;
      }
    }
  }

  for (const PoleSpec& p : poles) scene.truth.poles.push_back({p.id, p.x, p.y});
  return scene;
}

LabeledCloud sample_session_labeled(const SceneDescription& scene, std::uint32_t session_id) {
  const SynthConfig& config = scene.config;
  const std::uint64_t session_seed = derive_seed(config.seed, "session", session_id);

  LabeledCloud out;
  out.cloud.session_id = session_id;
  auto& points = out.cloud.points;
  auto& sources = out.sources;

  const double sigma = config.sensor_noise_sigma;
  auto push = [&](Rng& noise, const Eigen::Vector3d& p, PointSource source) {
    Eigen::Vector3d q = p;
    if (sigma > 0.0) {
      q.x() += sigma * noise.normal();
      q.y() += sigma * noise.normal();
      q.z() += sigma * noise.normal();
    }
    points.emplace_back(quantize(q.x()), quantize(q.y()), quantize(q.z()));
    sources.push_back(source);
  };

  for (std::size_t i = 0; i < scene.poles.size(); ++i) {
    const PoleSpec& pole = scene.poles[i];
    Rng rng(session_seed, "shaft", i);
    Rng noise(session_seed, "shaft-noise", i);
    SurfaceSampler sampler(rng, config.points_per_surface_unit);
    sampler.shaft(pole.x, pole.y, pole.radius, pole.height,
                  [&](const Eigen::Vector3d& p) { push(noise, p, PointSource::Shaft); });
  }

  for (std::size_t j = 0; j < scene.clutter.size(); ++j) {
    const ClutterObject& o = scene.clutter[j];
    Rng rng(session_seed, "clutter", j);
    Rng noise(session_seed, "clutter-noise", j);
    Rng drop(session_seed, "clutter-dropout", j);
    Eigen::Vector3d center = o.center;
    if (config.session_jitter > 0.0) {
      Rng jitter(session_seed, "clutter-jitter", j);
      center.x() += config.session_jitter * jitter.uniform(-1.0, 1.0);
      center.y() += config.session_jitter * jitter.uniform(-1.0, 1.0);
    }
    SurfaceSampler sampler(rng, config.points_per_surface_unit);
    sampler.object(o, center, [&](const Eigen::Vector3d& p) {
      if (config.session_dropout > 0.0 && drop.uniform() < config.session_dropout) return;
      push(noise, p, PointSource::Clutter);
    });
  }

  if (config.ground_density > 0.0) {
    Rng rng(session_seed, "ground");
    Rng noise(session_seed, "ground-noise");
    const double margin = config.signature_radius;
    const double side = config.area_side + 2.0 * margin;
    SurfaceSampler sampler(rng, config.ground_density);
    sampler.rectangle(Eigen::Vector3d(-margin, -margin, 0.0), Eigen::Vector3d(side, 0.0, 0.0),
                      Eigen::Vector3d(0.0, side, 0.0),
                      [&](const Eigen::Vector3d& p) { push(noise, p, PointSource::Ground); });
  }
  return out;
}

}  // namespace poleimg
