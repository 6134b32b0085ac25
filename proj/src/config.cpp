#include "poleimg/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>

#include "json.hpp"
#include "poleimg/errors.hpp"

namespace poleimg {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

// Applies the keys of one JSON object through a table of setters; keys
// without a setter are reported with their full path.
class ObjectReader {
 public:
  ObjectReader(const json& object, std::string path) : object_(object), path_(std::move(path)) {
    if (!object_.is_object()) throw ConfigError("config key '" + path_ + "' must be an object");
  }

  template <typename T>
  ObjectReader& field(const std::string& key, T& target) {
    handlers_[key] = [this, key, &target](const json& v) {
      try {
        target = v.get<T>();
      } catch (const json::exception&) {
        throw ConfigError("config key '" + qualified(key) + "' has the wrong type");
      }
    };
    return *this;
  }

  template <typename T>
  ObjectReader& range(const std::string& key, std::pair<T, T>& target) {
    handlers_[key] = [this, key, &target](const json& v) {
      if (!v.is_array() || v.size() != 2) {
        throw ConfigError("config key '" + qualified(key) + "' must be a [low, high] array");
      }
      try {
        target = {v[0].get<T>(), v[1].get<T>()};
      } catch (const json::exception&) {
        throw ConfigError("config key '" + qualified(key) + "' has the wrong type");
      }
    };
    return *this;
  }

  ObjectReader& custom(const std::string& key, std::function<void(const json&)> handler) {
    handlers_[key] = std::move(handler);
    return *this;
  }

  void apply() const {
    for (const auto& [key, value] : object_.items()) {
      const auto it = handlers_.find(key);
      if (it == handlers_.end()) throw ConfigError("unknown config key '" + qualified(key) + "'");
      it->second(value);
    }
  }

  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& object_;
  std::string path_;
  std::map<std::string, std::function<void(const json&)>> handlers_;
};

}  // namespace

void PipelineConfig::validate() const {
  synth.validate();
  if (sessions < 1) throw ConfigError("invalid config: sessions must be >= 1");
  detector.validate();
  if (!(association_tol > 0.0)) throw ConfigError("invalid config: association_tol must be > 0");
  image.validate();
  train.validate();
}

void PipelineConfig::set_seed(std::uint64_t seed) {
  synth.seed = seed;
  train.seed = seed;
}

PipelineConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  PipelineConfig c;
  std::optional<std::uint64_t> seed;
  ObjectReader top(root, "");
  top.field("sessions", c.sessions).field("association_tol", c.association_tol);
  top.custom("seed", [&](const json& v) {
    if (!v.is_number_unsigned()) throw ConfigError("config key 'seed' must be a non-negative integer");
    seed = v.get<std::uint64_t>();
  });
  top.custom("synth", [&](const json& v) {
    auto& s = c.synth;
    ObjectReader r(v, "synth");
    r.field("n_poles", s.n_poles)
        .field("area_side", s.area_side)
        .field("min_pole_separation", s.min_pole_separation)
        .range("pole_radius_range", s.pole_radius_range)
        .range("pole_height_range", s.pole_height_range)
        .range("clutter_objects_per_pole", s.clutter_objects_per_pole)
        .field("points_per_surface_unit", s.points_per_surface_unit)
        .field("ground_density", s.ground_density)
        .field("sensor_noise_sigma", s.sensor_noise_sigma)
        .field("session_dropout", s.session_dropout)
        .field("session_jitter", s.session_jitter)
        .field("signature_radius", s.signature_radius)
        .field("seed", s.seed)
        .apply();
  });
  top.custom("detector", [&](const json& v) {
    auto& d = c.detector;
    ObjectReader(v, "detector")
        .field("cell_size", d.cell_size)
        .field("min_vertical_extent", d.min_vertical_extent)
        .field("max_horizontal_rms", d.max_horizontal_rms)
        .field("min_support_points", d.min_support_points)
        .field("merge_radius", d.merge_radius)
        .apply();
  });
  top.custom("image", [&](const json& v) {
    auto& p = c.image;
    ObjectReader(v, "image")
        .field("radius", p.radius)
        .field("z_min", p.z_min)
        .field("z_max", p.z_max)
        .field("rows", p.rows)
        .field("cols", p.cols)
        .field("canonicalize", p.canonicalize)
        .apply();
  });
  top.custom("train", [&](const json& v) {
    auto& t = c.train;
    std::string regime = to_string(t.regime);
    ObjectReader(v, "train")
        .field("regime", regime)
        .field("epochs", t.epochs)
        .field("lr", t.lr)
        .field("temperature", t.temperature)
        .field("batch_pole_ids", t.batch_pole_ids)
        .field("sl_batch_pairs", t.sl_batch_pairs)
        .field("split_ratio", t.split_ratio)
        .field("augment_shift", t.augment_shift)
        .field("emb_dim", t.emb_dim)
        .field("seed", t.seed)
        .apply();
    t.regime = regime_from_string(regime);
  });
  top.apply();
  if (seed) c.set_seed(*seed);
  c.validate();
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const PipelineConfig& c) {
  ordered_json j;
  const auto& s = c.synth;
  j["sessions"] = c.sessions;
  j["association_tol"] = c.association_tol;
  j["synth"] = {{"n_poles", s.n_poles},
                {"area_side", s.area_side},
                {"min_pole_separation", s.min_pole_separation},
                {"pole_radius_range", {s.pole_radius_range.first, s.pole_radius_range.second}},
                {"pole_height_range", {s.pole_height_range.first, s.pole_height_range.second}},
                {"clutter_objects_per_pole",
                 {s.clutter_objects_per_pole.first, s.clutter_objects_per_pole.second}},
                {"points_per_surface_unit", s.points_per_surface_unit},
                {"ground_density", s.ground_density},
                {"sensor_noise_sigma", s.sensor_noise_sigma},
                {"session_dropout", s.session_dropout},
                {"session_jitter", s.session_jitter},
                {"signature_radius", s.signature_radius},
                {"seed", s.seed}};
  const auto& d = c.detector;
  j["detector"] = {{"cell_size", d.cell_size},
                   {"min_vertical_extent", d.min_vertical_extent},
                   {"max_horizontal_rms", d.max_horizontal_rms},
                   {"min_support_points", d.min_support_points},
                   {"merge_radius", d.merge_radius}};
  const auto& p = c.image;
  j["image"] = {{"radius", p.radius}, {"z_min", p.z_min}, {"z_max", p.z_max},
                {"rows", p.rows},     {"cols", p.cols},   {"canonicalize", p.canonicalize}};
  const auto& t = c.train;
  j["train"] = {{"regime", to_string(t.regime)},
                {"epochs", t.epochs},
                {"lr", t.lr},
                {"temperature", t.temperature},
                {"batch_pole_ids", t.batch_pole_ids},
                {"sl_batch_pairs", t.sl_batch_pairs},
                {"split_ratio", t.split_ratio},
                {"augment_shift", t.augment_shift},
                {"emb_dim", t.emb_dim},
                {"seed", t.seed}};
  return j.dump(2) + "\n";
}

}  // namespace poleimg
