// poleimg: command-line driver for the pole-image place-recognition pipeline.

#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>

#include "CLI11.hpp"
#include "poleimg/checkpoint.hpp"
#include "poleimg/config.hpp"
#include "poleimg/dataset.hpp"
#include "poleimg/pipeline.hpp"
#include "poleimg/retrieval.hpp"
#include "poleimg/training.hpp"

namespace fs = std::filesystem;
using namespace poleimg;

namespace {

// Config-backed flags of one subcommand. A flag given on the command line
// overrides the value loaded from --config.
class ConfigFlags {
 public:
  explicit ConfigFlags(CLI::App* app) : app_(app) {
    app_->add_option("--config", config_path_, "JSON config file; flags take precedence")->check(CLI::ExistingFile);
    app_->add_option("--seed", seed_, "Seed for every stage (overrides nested seeds)");
  }

  template <typename T>
  ConfigFlags& add(const std::string& name, std::function<T&(PipelineConfig&)> field, const std::string& help) {
    PipelineConfig defaults;
    auto value = std::make_shared<T>(field(defaults));
    CLI::Option* opt = app_->add_option(name, *value, help)->capture_default_str();
    setters_.push_back([opt, value, field](PipelineConfig& c) {
      if (opt->count() > 0) field(c) = *value;
    });
    return *this;
  }

  ConfigFlags& synth() {
    add<int>("--poles", [](PipelineConfig& c) -> int& { return c.synth.n_poles; }, "Number of poles");
    add<double>("--area-side", [](PipelineConfig& c) -> double& { return c.synth.area_side; }, "Square area side (m)");
    add<double>("--min-separation", [](PipelineConfig& c) -> double& { return c.synth.min_pole_separation; },
                "Minimum pole separation (m)");
    add<double>("--density", [](PipelineConfig& c) -> double& { return c.synth.points_per_surface_unit; },
                "Surface sampling density (points/m^2)");
    add<double>("--ground-density", [](PipelineConfig& c) -> double& { return c.synth.ground_density; },
                "Ground sampling density (points/m^2)");
    add<double>("--noise", [](PipelineConfig& c) -> double& { return c.synth.sensor_noise_sigma; },
                "Sensor noise sigma (m)");
    add<double>("--dropout", [](PipelineConfig& c) -> double& { return c.synth.session_dropout; },
                "Per-session clutter dropout probability");
    add<double>("--jitter", [](PipelineConfig& c) -> double& { return c.synth.session_jitter; },
                "Per-session clutter jitter (m)");
    add<int>("--sessions", [](PipelineConfig& c) -> int& { return c.sessions; }, "Number of sessions");
    return *this;
  }

  ConfigFlags& detector() {
    add<double>("--cell-size", [](PipelineConfig& c) -> double& { return c.detector.cell_size; }, "Grid cell size (m)");
    add<double>("--min-extent", [](PipelineConfig& c) -> double& { return c.detector.min_vertical_extent; },
                "Minimum vertical extent (m)");
    add<double>("--max-rms", [](PipelineConfig& c) -> double& { return c.detector.max_horizontal_rms; },
                "Maximum horizontal RMS (m)");
    add<int>("--min-support", [](PipelineConfig& c) -> int& { return c.detector.min_support_points; },
             "Minimum supporting points");
    add<double>("--merge-radius", [](PipelineConfig& c) -> double& { return c.detector.merge_radius; },
                "Merge radius (m)");
    add<double>("--tol", [](PipelineConfig& c) -> double& { return c.association_tol; },
                "Association tolerance against ground truth (m)");
    return *this;
  }

  ConfigFlags& image() {
    add<double>("--radius", [](PipelineConfig& c) -> double& { return c.image.radius; }, "Signature radius (m)");
    add<double>("--z-min", [](PipelineConfig& c) -> double& { return c.image.z_min; }, "Lower z bound (m)");
    add<double>("--z-max", [](PipelineConfig& c) -> double& { return c.image.z_max; }, "Upper z bound (m)");
    add<int>("--rows", [](PipelineConfig& c) -> int& { return c.image.rows; }, "Image rows (z bins)");
    add<int>("--cols", [](PipelineConfig& c) -> int& { return c.image.cols; }, "Image columns (theta bins)");
    add<bool>("--canonicalize", [](PipelineConfig& c) -> bool& { return c.image.canonicalize; },
              "Canonicalize the theta origin");
    return *this;
  }

  ConfigFlags& training() {
    auto regime = std::make_shared<std::string>("cl");
    CLI::Option* opt = app_->add_option("--regime", *regime, "Training regime")
                           ->check(CLI::IsMember({"cl", "sl"}))
                           ->capture_default_str();
    setters_.push_back([opt, regime](PipelineConfig& c) {
      if (opt->count() > 0) c.train.regime = regime_from_string(*regime);
    });
    add<int>("--epochs", [](PipelineConfig& c) -> int& { return c.train.epochs; }, "Training epochs");
    add<double>("--lr", [](PipelineConfig& c) -> double& { return c.train.lr; }, "Adam learning rate");
    add<double>("--temperature", [](PipelineConfig& c) -> double& { return c.train.temperature; },
                "NT-Xent temperature");
    add<int>("--batch-pole-ids", [](PipelineConfig& c) -> int& { return c.train.batch_pole_ids; },
             "Pole ids per contrastive batch");
    add<int>("--sl-batch-pairs", [](PipelineConfig& c) -> int& { return c.train.sl_batch_pairs; },
             "Pairs per supervised step");
    add<double>("--split-ratio", [](PipelineConfig& c) -> double& { return c.train.split_ratio; },
                "Fraction of pole ids used for training");
    add<bool>("--augment-shift", [](PipelineConfig& c) -> bool& { return c.train.augment_shift; },
              "Random circular shift augmentation");
    add<int>("--emb-dim", [](PipelineConfig& c) -> int& { return c.train.emb_dim; }, "Embedding dimension");
    return *this;
  }

  PipelineConfig resolve() const {
    PipelineConfig c = config_path_.empty() ? PipelineConfig{} : load_config(config_path_);
    for (const auto& set : setters_) set(c);
    if (seed_) c.set_seed(*seed_);
    c.validate();
    return c;
  }

 private:
  CLI::App* app_;
  std::string config_path_;
  std::optional<std::uint64_t> seed_;
  std::vector<std::function<void(PipelineConfig&)>> setters_;
};

bool is_descriptor_db(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return in.gcount() == 4 && std::string(magic, 4) == "PIDB";
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + out_path + " for writing");
  out << text;
}

void print_report_summary(const EvalReport& r) {
  std::printf("R@1 %.4f  R@5 %.4f  R@10 %.4f  MRR %.4f  (%zu queries)\n", r.recall_at.at(1), r.recall_at.at(5),
              r.recall_at.at(10), r.mrr, r.per_query_rank.size());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pole-image LiDAR place recognition pipeline"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic scene and per-session point clouds");
  std::string synth_out;
  synth->add_option("--out", synth_out, "Output directory")->required();
  ConfigFlags synth_flags(synth);
  synth_flags.synth();
  synth->callback([&] {
    const PipelineConfig c = synth_flags.resolve();
    const SynthSummary s = run_synth(c, synth_out);
    std::printf("poles %zu\nclutter_objects %zu\n", s.poles, s.clutter_objects);
    for (std::size_t i = 0; i < s.points_per_session.size(); ++i) {
      std::printf("session %zu points %zu\n", i, s.points_per_session[i]);
    }
  });

  // detect
  auto* detect = app.add_subcommand("detect", "Detect poles in a point cloud");
  std::string detect_cloud, detect_truth, detect_out;
  detect->add_option("--cloud", detect_cloud, "Input point cloud (.pcxyz)")->required()->check(CLI::ExistingFile);
  detect->add_option("--truth", detect_truth, "scene.json for association and precision/recall")
      ->check(CLI::ExistingFile);
  detect->add_option("--out", detect_out, "Output detections JSON")->required();
  ConfigFlags detect_flags(detect);
  detect_flags.detector();
  detect->callback([&] {
    const PipelineConfig c = detect_flags.resolve();
    const PointCloud cloud = read_cloud(detect_cloud);
    std::optional<GroundTruth> truth;
    if (!detect_truth.empty()) truth = read_ground_truth(detect_truth);
    const DetectResult r = run_detect(cloud, c.detector, truth, c.association_tol);
    write_detections(r.detections, detect_out);
    std::printf("detections %zu\n", r.detections.size());
    if (r.association) std::printf("precision %.4f\nrecall %.4f\n", r.association->precision, r.association->recall);
  });

  // render
  auto* render = app.add_subcommand("render", "Render pole images for detections");
  std::string render_cloud, render_dets, render_out;
  render->add_option("--cloud", render_cloud, "Input point cloud (.pcxyz)")->required()->check(CLI::ExistingFile);
  render->add_option("--detections", render_dets, "Detections JSON")->required()->check(CLI::ExistingFile);
  render->add_option("--out", render_out, "Output directory for PGMs and manifest.tsv")->required();
  ConfigFlags render_flags(render);
  render_flags.image();
  render->callback([&] {
    const PipelineConfig c = render_flags.resolve();
    const auto rows = run_render(read_cloud(render_cloud), read_detections(render_dets), c.image, render_out);
    std::printf("images %zu\n", rows.size());
  });

  // train
  auto* trn = app.add_subcommand("train", "Train an encoder on a manifest of pole images");
  std::string train_manifest, train_out, train_history;
  trn->add_option("--manifest", train_manifest, "Manifest TSV")->required()->check(CLI::ExistingFile);
  trn->add_option("--out", train_out, "Output checkpoint")->required();
  trn->add_option("--history", train_history, "History TSV (default: <out>.history.tsv)");
  ConfigFlags train_flags(trn);
  train_flags.training();
  trn->callback([&] {
    const PipelineConfig c = train_flags.resolve();
    const ObservationSet obs = load_observations(train_manifest);
    const TrainResult r = train(obs, c.train, [](const EpochRecord& e) {
      std::printf("epoch %d loss %.6f val_R@1 %.4f\n", e.epoch, e.train_loss, e.val_recall_at_1);
      std::fflush(stdout);
    });
    write_checkpoint(r.checkpoint, train_out);
    write_history(r.history, train_history.empty() ? train_out + ".history.tsv" : train_history);
  });

  // embed
  auto* embed = app.add_subcommand("embed", "Embed a manifest into a descriptor database");
  std::string embed_manifest, embed_ckpt, embed_out;
  embed->add_option("--manifest", embed_manifest, "Manifest TSV")->required()->check(CLI::ExistingFile);
  embed->add_option("--checkpoint", embed_ckpt, "Encoder checkpoint")->required()->check(CLI::ExistingFile);
  embed->add_option("--out", embed_out, "Output descriptor database (.pidb)")->required();
  embed->callback([&] {
    const DescriptorDB db = embed_all(read_checkpoint(embed_ckpt), load_observations(embed_manifest));
    write_db(db, embed_out);
    std::printf("descriptors %zu dim %d\n", db.labels.size(), db.dim);
  });

  // eval
  auto* ev = app.add_subcommand("eval", "Cross-session retrieval evaluation");
  std::string eval_query, eval_db, eval_ckpt, eval_out;
  bool eval_baseline = false;
  ev->add_option("--query", eval_query, "Query manifest or descriptor database")->required()->check(CLI::ExistingFile);
  ev->add_option("--db", eval_db, "Database manifest or descriptor database")->required()->check(CLI::ExistingFile);
  auto* ckpt_opt = ev->add_option("--checkpoint", eval_ckpt, "Encoder checkpoint for manifest inputs")
                       ->check(CLI::ExistingFile);
  ev->add_flag("--baseline", eval_baseline, "Use the shift-minimized Hamming baseline")->excludes(ckpt_opt);
  ev->add_option("--out", eval_out, "Report JSON path (default: stdout)");
  ev->callback([&] {
    EvalReport report;
    if (eval_baseline) {
      if (is_descriptor_db(eval_query) || is_descriptor_db(eval_db)) {
        throw std::runtime_error("--baseline needs manifests, not descriptor databases");
      }
      report = evaluate_baseline(load_observations(eval_query), load_observations(eval_db));
    } else {
      std::optional<Checkpoint> ckpt;
      if (!eval_ckpt.empty()) ckpt = read_checkpoint(eval_ckpt);
      auto load = [&](const std::string& path) {
        if (is_descriptor_db(path)) {
          DescriptorDB db = read_db(path);
          if (ckpt && db.dim != ckpt->shape.emb_dim) {
            throw ShapeError("descriptor dim " + std::to_string(db.dim) + " in " + path +
                             " does not match checkpoint emb_dim " + std::to_string(ckpt->shape.emb_dim));
          }
          return db;
        }
        if (!ckpt) throw std::runtime_error(path + " is a manifest; pass --checkpoint or --baseline");
        return embed_all(*ckpt, load_observations(path));
      };
      report = evaluate(load(eval_query), load(eval_db));
    }
    emit(eval_report_json(report), eval_out);
    if (!eval_out.empty()) print_report_summary(report);
  });

  // repro
  auto* repro = app.add_subcommand("repro", "Run the full pipeline and compare baseline, SL and CL");
  std::string repro_out;
  repro->add_option("--out", repro_out, "Output directory")->required();
  ConfigFlags repro_flags(repro);
  repro_flags.synth().detector().image();
  repro_flags.add<int>("--epochs", [](PipelineConfig& c) -> int& { return c.train.epochs; }, "Training epochs");
  repro_flags.add<int>("--emb-dim", [](PipelineConfig& c) -> int& { return c.train.emb_dim; }, "Embedding dimension");
  repro_flags.add<bool>("--augment-shift", [](PipelineConfig& c) -> bool& { return c.train.augment_shift; },
                        "Random circular shift augmentation");
  repro->callback([&] {
    const PipelineConfig c = repro_flags.resolve();
    const ReproResult r = run_repro(c, repro_out, [](const std::string& line) {
      std::printf("%s\n", line.c_str());
      std::fflush(stdout);
    });
    std::printf("\n%s", comparison_table(r.methods).c_str());
    std::printf("initial CL val R@1 %.4f, final %.4f\n", r.cl.initial_val_recall_at_1,
                r.cl.history.empty() ? r.cl.initial_val_recall_at_1 : r.cl.history.back().val_recall_at_1);
    std::printf("total %.1f s\n", r.seconds);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
