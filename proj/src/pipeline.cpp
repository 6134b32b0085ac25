#include "poleimg/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "poleimg/errors.hpp"

namespace poleimg {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

template <typename F>
auto stage(const std::string& name, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

std::string image_file_name(std::int64_t pole_id, std::uint32_t session) {
  return "pole_" + std::to_string(pole_id) + "_s" + std::to_string(session) + ".pgm";
}

ObservationSet only_session(const ObservationSet& obs, std::uint32_t session) {
  ObservationSet out;
  for (const auto& o : obs) {
    if (o.session_id == session) out.push_back(o);
  }
  return out;
}

// Queries whose pole also appears in `db`.
ObservationSet matchable(const ObservationSet& queries, const ObservationSet& db) {
  std::set<std::int64_t> ids;
  for (const auto& o : db) ids.insert(o.pole_id);
  ObservationSet out;
  for (const auto& o : queries) {
    if (ids.count(o.pole_id)) out.push_back(o);
  }
  return out;
}

std::vector<ManifestRow> manifest_rows(const ObservationSet& obs, const fs::path& image_dir_rel) {
  std::vector<ManifestRow> rows;
  for (const auto& o : obs) {
    rows.push_back({o.pole_id, o.session_id, (image_dir_rel / image_file_name(o.pole_id, o.session_id)).string()});
  }
  return rows;
}

}  // namespace

std::string cloud_file_name(std::uint32_t session) {
  return "session_" + std::to_string(session) + ".pcxyz";
}

void write_scene_json(const Scene& scene, const PipelineConfig& config, const fs::path& path) {
  ordered_json j;
  auto poles = ordered_json::array();
  for (const auto& p : scene.description.poles) {
    poles.push_back({{"id", p.id}, {"x", p.x}, {"y", p.y}, {"radius", p.radius}, {"height", p.height}});
  }
  j["poles"] = poles;
  j["config"] = ordered_json::parse(config_to_json(config));
  write_text(path, j.dump(2) + "\n");
}

GroundTruth read_ground_truth(const fs::path& scene_json) {
  std::ifstream in(scene_json);
  if (!in) throw std::runtime_error("cannot open " + scene_json.string());
  GroundTruth truth;
  try {
    const json j = json::parse(in);
    for (const auto& p : j.at("poles")) {
      truth.poles.push_back({p.at("id").get<std::int64_t>(), p.at("x").get<double>(), p.at("y").get<double>()});
    }
  } catch (const json::exception& e) {
    throw ParseError(scene_json.string() + ": " + e.what());
  }
  return truth;
}

SynthSummary run_synth(const PipelineConfig& config, const fs::path& out_dir) {
  config.validate();
  fs::create_directories(out_dir);
  const Scene scene = generate_scene(config.synth);
  SynthSummary summary;
  summary.poles = scene.description.poles.size();
  summary.clutter_objects = scene.description.clutter.size();
  for (int s = 0; s < config.sessions; ++s) {
    const auto session = static_cast<std::uint32_t>(s);
    const PointCloud cloud = sample_session(scene.description, session);
    write_cloud(cloud, out_dir / cloud_file_name(session));
    summary.points_per_session.push_back(cloud.points.size());
  }
  write_scene_json(scene, config, out_dir / "scene.json");
  return summary;
}

DetectResult run_detect(const PointCloud& cloud, const DetectorParams& params,
                        const std::optional<GroundTruth>& truth, double tol) {
  DetectResult result;
  const auto detections = detect_poles(cloud, params);
  if (truth) result.association = associate_detections(detections, *truth, tol);
  for (std::size_t i = 0; i < detections.size(); ++i) {
    DetectionRecord r;
    r.detection = detections[i];
    r.id = truth ? result.association->matched_pole[i] : std::optional<std::int64_t>(static_cast<std::int64_t>(i));
    result.detections.push_back(r);
  }
  return result;
}

void write_detections(const std::vector<DetectionRecord>& detections, const fs::path& path) {
  auto j = ordered_json::array();
  for (const auto& r : detections) {
    ordered_json d;
    d["id"] = r.id ? ordered_json(*r.id) : ordered_json(nullptr);
    d["x"] = r.detection.center_x;
    d["y"] = r.detection.center_y;
    d["base_z"] = r.detection.base_z;
    d["extent"] = r.detection.vertical_extent;
    d["support"] = r.detection.support_count;
    j.push_back(d);
  }
  write_text(path, j.dump(2) + "\n");
}

std::vector<DetectionRecord> read_detections(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<DetectionRecord> out;
  try {
    const json j = json::parse(in);
    for (const auto& d : j) {
      DetectionRecord r;
      if (!d.at("id").is_null()) r.id = d.at("id").get<std::int64_t>();
      r.detection.center_x = d.at("x").get<double>();
      r.detection.center_y = d.at("y").get<double>();
      r.detection.base_z = d.at("base_z").get<double>();
      r.detection.vertical_extent = d.at("extent").get<double>();
      r.detection.support_count = d.at("support").get<int>();
      out.push_back(r);
    }
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return out;
}

std::vector<ManifestRow> run_render(const PointCloud& cloud, const std::vector<DetectionRecord>& detections,
                                    const PoleImageParams& params, const fs::path& out_dir) {
  params.validate();
  fs::create_directories(out_dir);
  const PointGridIndex index(cloud.points, params.radius);
  std::vector<ManifestRow> rows;
  std::set<std::int64_t> seen;
  for (const auto& r : detections) {
    if (!r.id) continue;
    if (!seen.insert(*r.id).second) throw ContractError("duplicate detection id " + std::to_string(*r.id));
    const auto nearby = index.near(r.detection.center_x, r.detection.center_y, params.radius);
    PoleImage img = render_pole_image(std::span<const Point3>(nearby), r.detection, params);
    img.pole_id = *r.id;
    img.session_id = cloud.session_id;
    const std::string name = image_file_name(*r.id, cloud.session_id);
    write_pgm(img, out_dir / name);
    rows.push_back({*r.id, cloud.session_id, name});
  }
  write_manifest(rows, out_dir / "manifest.tsv");
  return rows;
}

ReproResult run_repro(const PipelineConfig& config, const fs::path& out_dir, const LogFn& log) {
  const auto start = std::chrono::steady_clock::now();
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  stage("config", [&] { config.validate(); });
  if (config.sessions < 2) throw StageError("config", "repro needs at least 2 sessions");
  fs::create_directories(out_dir);
  write_text(out_dir / "config.json", config_to_json(config));
  ReproResult result;

  const fs::path synth_dir = out_dir / "synth";
  const SynthSummary summary = stage("synth", [&] { return run_synth(config, synth_dir); });
  say("synth: " + std::to_string(summary.poles) + " poles, " + std::to_string(summary.clutter_objects) +
      " clutter objects");

  const GroundTruth truth = stage("detect", [&] { return read_ground_truth(synth_dir / "scene.json"); });
  ObservationSet all;
  std::vector<ManifestRow> all_rows;
  for (int s = 0; s < config.sessions; ++s) {
    const auto session = static_cast<std::uint32_t>(s);
    const PointCloud cloud = stage("detect", [&] { return read_cloud(synth_dir / cloud_file_name(session)); });
    const DetectResult det = stage("detect", [&] {
      auto d = run_detect(cloud, config.detector, truth, config.association_tol);
      fs::create_directories(out_dir / "detect");
      write_detections(d.detections, out_dir / "detect" / ("session_" + std::to_string(s) + ".json"));
      return d;
    });
    result.detection_precision.push_back(det.association->precision);
    result.detection_recall.push_back(det.association->recall);
    char line[160];
    std::snprintf(line, sizeof(line), "detect session %d: %zu detections, precision %.4f, recall %.4f", s,
                  det.detections.size(), det.association->precision, det.association->recall);
    say(line);

    const std::string sub = "s" + std::to_string(s);
    const auto rows = stage("render", [&] {
      return run_render(cloud, det.detections, config.image, out_dir / "images" / sub);
    });
    for (auto row : rows) {
      row.image_path = (fs::path(sub) / row.image_path).string();
      all_rows.push_back(row);
    }
  }
  stage("render", [&] {
    write_manifest(all_rows, out_dir / "images" / "manifest.tsv");
    all = load_observations(out_dir / "images" / "manifest.tsv");
  });
  say("render: " + std::to_string(all.size()) + " pole images");

  auto train_regime = [&](Regime regime) {
    const std::string name = to_string(regime);
    return stage("train-" + name, [&] {
      TrainConfig tc = config.train;
      tc.regime = regime;
      auto res = train(all, tc, [&](const EpochRecord& r) {
        char line[160];
        std::snprintf(line, sizeof(line), "train %s epoch %d: loss %.6f val R@1 %.4f", name.c_str(), r.epoch,
                      r.train_loss, r.val_recall_at_1);
        say(line);
      });
      write_checkpoint(res.checkpoint, out_dir / (name + ".ckpt"));
      write_history(res.history, out_dir / (name + "_history.tsv"));
      return res;
    });
  };
  result.cl = train_regime(Regime::Contrastive);
  result.sl = train_regime(Regime::Supervised);

  stage("eval", [&] {
    const fs::path eval_dir = out_dir / "eval";
    fs::create_directories(eval_dir);
    const ObservationSet& val = result.cl.split.val;
    const ObservationSet first = only_session(val, 0);
    const ObservationSet second = only_session(val, 1);
    const ObservationSet q_fwd = matchable(first, second);
    const ObservationSet q_bwd = matchable(second, first);
    write_manifest(manifest_rows(first, "../images/s0"), eval_dir / "val_s0.tsv");
    write_manifest(manifest_rows(second, "../images/s1"), eval_dir / "val_s1.tsv");

    auto save = [&](const std::string& name, const EvalReport& r) {
      write_text(eval_dir / (name + ".json"), eval_report_json(r));
    };
    MethodScores baseline{"baseline", evaluate_baseline(q_fwd, second), evaluate_baseline(q_bwd, first)};
    save("baseline_0to1", baseline.forward);
    save("baseline_1to0", baseline.backward);
    result.methods.push_back(baseline);

    for (const TrainResult* tr : {&result.sl, &result.cl}) {
      const std::string name = tr == &result.cl ? "cl" : "sl";
      const DescriptorDB db0 = embed_all(tr->checkpoint, first);
      const DescriptorDB db1 = embed_all(tr->checkpoint, second);
      write_db(db0, eval_dir / (name + "_s0.pidb"));
      write_db(db1, eval_dir / (name + "_s1.pidb"));
      const DescriptorDB qf = embed_all(tr->checkpoint, q_fwd);
      const DescriptorDB qb = embed_all(tr->checkpoint, q_bwd);
      MethodScores m{name, evaluate(qf, db1), evaluate(qb, db0)};
      save(name + "_0to1", m.forward);
      save(name + "_1to0", m.backward);
      result.methods.push_back(m);
    }
    write_text(out_dir / "comparison.tsv", comparison_table(result.methods));
  });
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

std::string comparison_table(const std::vector<MethodScores>& methods) {
  std::ostringstream out;
  out << "method\tdirection\tR@1\tR@5\tR@10\tMRR\n";
  char line[200];
  for (const char* dir : {"0to1", "1to0"}) {
    for (const auto& m : methods) {
      const EvalReport& r = std::string(dir) == "0to1" ? m.forward : m.backward;
      std::snprintf(line, sizeof(line), "%s\t%s\t%.4f\t%.4f\t%.4f\t%.4f\n", m.method.c_str(), dir,
                    r.recall_at.at(1), r.recall_at.at(5), r.recall_at.at(10), r.mrr);
      out << line;
    }
  }
  return out.str();
}

}  // namespace poleimg
