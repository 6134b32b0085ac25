// Acceptance runner: one PASS/FAIL line per criterion. Tolerances are fixed
// here. Usage: acceptance [work_dir]

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numbers>
#include <string>

#include "../grad_fixtures.hpp"
#include "../retrieval_fixtures.hpp"
#include "../support.hpp"
#include "poleimg/losses.hpp"
#include "poleimg/pipeline.hpp"
#include "poleimg/pole_image.hpp"

using namespace poleimg;
namespace fs = std::filesystem;

namespace {

constexpr double kGradTol = 1e-4;
constexpr int kGradSamples = 50;
constexpr double kGradSeconds = 120.0;
constexpr double kCollapseTol = 1e-9;
constexpr double kDetectMin = 0.95;
constexpr double kDetectSeconds = 60.0;
constexpr double kClRecallMin = 0.90;
constexpr double kBaselineMargin = 0.10;
constexpr double kReproSeconds = 1800.0;
constexpr double kLearningGain = 0.30;
constexpr double kChanceMax = 0.05;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, const Outcome& o) {
  std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), o.detail.c_str());
  std::fflush(stdout);
  if (!o.pass) ++failures;
}

void run(int id, const std::string& title, const std::function<Outcome()>& body) {
  try {
    report(id, title, body());
  } catch (const std::exception& e) {
    report(id, title, {false, std::string("exception: ") + e.what()});
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), f, a, b, c, d);
  return buf;
}

Outcome gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::string worst_name;
  bool enough = true;
  for (const auto& c : testing::all_grad_checks(kGradSamples, 2024)) {
    enough = enough && c.report.samples >= static_cast<std::size_t>(kGradSamples);
    if (c.report.max_relative_error >= worst) {
      worst = c.report.max_relative_error;
      worst_name = c.name + " " + c.report.worst_tensor;
    }
  }
  const double secs = seconds_since(t0);
  return {enough && worst < kGradTol && secs < kGradSeconds,
          fmt("max rel err %.3g (tol %.0e), %.1f s (limit %.0f s)", worst, kGradTol, secs, kGradSeconds) +
              ", worst at " + worst_name};
}

Outcome collapse() {
  auto loss = [](Eigen::Index n) {
    Matrix<double> e = Matrix<double>::Zero(8, 2 * n);
    e.row(2).setOnes();
    return nt_xent_loss<double>(e, 0.07).loss;
  };
  const double e2 = std::abs(loss(2) - std::log(3.0));
  const double e8 = std::abs(loss(8) - std::log(15.0));
  return {e2 < kCollapseTol && e8 < kCollapseTol,
          fmt("|L(N=2) - ln 3| = %.3g, |L(N=8) - ln 15| = %.3g (tol %.0e)", e2, e8, kCollapseTol)};
}

// Random cloud around a pole whose angles stay at least 0.01 deg from bin edges
// under any whole-degree rotation.
std::vector<Point3> edge_safe_cloud(std::uint64_t seed, const PoleDetection& pole) {
  Rng rng(seed, "acceptance-cloud");
  std::vector<Point3> pts;
  const double focus = rng.uniform(0.0, 360.0);
  const int n = 200 + static_cast<int>(rng.below(400));
  for (int i = 0; i < n; ++i) {
    const double base = i % 2 ? focus + rng.uniform(0.0, 90.0) : rng.uniform(0.0, 360.0);
    const double theta = std::floor(std::fmod(base, 360.0)) + rng.uniform(0.01, 0.99);
    const double r = rng.uniform(0.1, 2.95);
    const double z = std::floor(rng.uniform(0.0, 7.95) * 10.0) / 10.0 + rng.uniform(0.01, 0.09);
    const double t = theta * std::numbers::pi / 180.0;
    pts.emplace_back(pole.center_x + r * std::cos(t), pole.center_y + r * std::sin(t), pole.base_z + z);
  }
  return pts;
}

Outcome rotation() {
  PoleImageParams raw;
  raw.canonicalize = false;
  const PoleImageParams canon;
  int checked = 0, bad_shift = 0, bad_canon = 0, skipped = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed, "acceptance-pole");
    const PoleDetection pole = testing::pole_at(rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(-1, 1));
    const auto cloud = edge_safe_cloud(seed, pole);
    const PoleImage base = render_pole_image(std::span<const Point3>(cloud), pole, raw);
    const PoleImage base_c = render_pole_image(std::span<const Point3>(cloud), pole, canon);
    const bool mean_defined = mean_angle_column(base.grid).has_value();
    for (int k = 1; k < 360; k += 7) {
      const double t = k * std::numbers::pi / 180.0;
      std::vector<Point3> rotated;
      for (const auto& p : cloud) {
        const double dx = p.x() - pole.center_x, dy = p.y() - pole.center_y;
        rotated.emplace_back(pole.center_x + std::cos(t) * dx - std::sin(t) * dy,
                             pole.center_y + std::sin(t) * dx + std::cos(t) * dy, p.z());
      }
      ++checked;
      if (render_pole_image(std::span<const Point3>(rotated), pole, raw).grid != circular_shift(base.grid, k)) {
        ++bad_shift;
      }
      if (!mean_defined) {
        ++skipped;
        continue;
      }
      if (render_pole_image(std::span<const Point3>(rotated), pole, canon).grid != base_c.grid) ++bad_canon;
    }
  }
  return {bad_shift == 0 && bad_canon == 0 && skipped == 0,
          std::to_string(checked) + " rotations over 20 clouds: " + std::to_string(bad_shift) +
              " shift mismatches, " + std::to_string(bad_canon) + " canonical mismatches, " +
              std::to_string(skipped) + " skipped (|S| <= 1e-9)"};
}

Outcome metric_oracle() {
  int mismatches = 0, ties = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto [q, db] = testing::tie_heavy_instance(seed + 1000, 20);
    const EvalReport r = evaluate(q, db);
    const auto o = testing::brute_force_metrics(q, db);
    bool same = r.mrr == o.mrr;
    for (int k : {1, 5, 10}) same = same && r.recall_at.at(k) == o.recall_at.at(k);
    for (std::size_t i = 0; i < o.ranks.size(); ++i) same = same && r.per_query_rank[i].rank == o.ranks[i];
    mismatches += same ? 0 : 1;
    // Count instances where some query has an exact distance tie.
    for (Eigen::Index i = 0; i < q.values.cols(); ++i) {
      std::vector<float> d;
      for (Eigen::Index j = 0; j < db.values.cols(); ++j) d.push_back((db.values.col(j) - q.values.col(i)).squaredNorm());
      std::sort(d.begin(), d.end());
      if (std::adjacent_find(d.begin(), d.end()) != d.end()) {
        ++ties;
        break;
      }
    }
  }
  return {mismatches == 0 && ties > 0,
          std::to_string(mismatches) + " of 50 instances differ from brute force (" + std::to_string(ties) +
              " with distance ties)"};
}

Outcome baseline_invariance() {
  int shift_bad = 0, sym_bad = 0;
  auto random_image = [](std::uint64_t seed) {
    Rng rng(seed, "acceptance-image");
    BinaryGrid g = BinaryGrid::Zero(80, 360);
    const double fill = rng.uniform(0.01, 0.2);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.uniform() < fill ? 1 : 0;
    return g;
  };
  for (std::uint64_t s = 0; s < 20; ++s) {
    const BinaryGrid a = random_image(s);
    for (int k = 0; k < 360; ++k) shift_bad += iris_baseline_distance(a, circular_shift(a, k)) != 0.0;
  }
  for (std::uint64_t s = 0; s < 100; ++s) {
    const BinaryGrid a = random_image(100 + 2 * s), b = random_image(101 + 2 * s);
    sym_bad += iris_baseline_distance(a, b) != iris_baseline_distance(b, a);
  }
  return {shift_bad == 0 && sym_bad == 0,
          std::to_string(shift_bad) + " of 7200 self-shift distances nonzero, " + std::to_string(sym_bad) +
              " of 100 pairs asymmetric"};
}

Outcome detector_quality() {
  double min_p = 1, min_r = 1, max_secs = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    SynthConfig c;
    c.n_poles = 50;
    c.seed = seed;
    const Scene s = generate_scene(c);
    const PointCloud cloud = sample_session(s.description, 0);
    const auto t0 = std::chrono::steady_clock::now();
    const auto det = detect_poles(cloud, DetectorParams{});
    const Association a = associate_detections(det, s.truth, 0.5);
    max_secs = std::max(max_secs, seconds_since(t0));
    min_p = std::min(min_p, a.precision);
    min_r = std::min(min_r, a.recall);
  }
  return {min_p >= kDetectMin && min_r >= kDetectMin && max_secs < kDetectSeconds,
          fmt("min precision %.4f, min recall %.4f (>= %.2f), slowest %.2f s", min_p, min_r, kDetectMin, max_secs)};
}

Outcome chance() {
  const double r1 = testing::chance_recall_at_1(100, 128, 20);
  return {r1 >= 0.0 && r1 <= kChanceMax, fmt("mean Recall@1 %.4f over 20 seeds (allowed [0, %.2f])", r1, kChanceMax)};
}

double r1_of(const ReproResult& r, const std::string& method) {
  for (const auto& m : r.methods) {
    if (m.method == method) return m.forward.recall_at.at(1);
  }
  throw std::runtime_error("method " + method + " missing");
}

bool same_file(const fs::path& a, const fs::path& b) {
  return fs::exists(a) && fs::exists(b) && testing::slurp(a) == testing::slurp(b);
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "poleimg_acceptance";
  fs::create_directories(work);

  run(1, "gradient correctness", gradients);
  run(2, "NT-Xent collapse law", collapse);
  run(3, "polar rotation equivariance and invariance", rotation);
  run(4, "metric oracle equivalence", metric_oracle);
  run(5, "baseline shift invariance and symmetry", baseline_invariance);
  run(6, "detector quality", detector_quality);

  // Criteria 7-9 share two full default runs.
  std::optional<ReproResult> first, second;
  std::string repro_error;
  try {
    const PipelineConfig config;
    auto log = [](const std::string& line) {
      std::printf("    %s\n", line.c_str());
      std::fflush(stdout);
    };
    std::printf("    repro run A (default config) -> %s\n", (work / "run_a").string().c_str());
    first = run_repro(config, work / "run_a", log);
    std::printf("%s", comparison_table(first->methods).c_str());
    std::printf("    repro run B (default config) -> %s\n", (work / "run_b").string().c_str());
    second = run_repro(config, work / "run_b");
  } catch (const std::exception& e) {
    repro_error = e.what();
  }

  run(7, "ordering CL >= SL >= baseline (session 0 -> 1)", [&]() -> Outcome {
    if (!first) return {false, "repro failed: " + repro_error};
    const double cl = r1_of(*first, "cl"), sl = r1_of(*first, "sl"), base = r1_of(*first, "baseline");
    const bool pass = cl >= sl && sl >= base && cl >= kClRecallMin && cl - base >= kBaselineMargin &&
                      first->seconds < kReproSeconds;
    return {pass, fmt("R@1 cl %.4f, sl %.4f, baseline %.4f; runtime %.0f s", cl, sl, base, first->seconds) +
                      fmt(" (need cl >= %.2f, cl - baseline >= %.2f, < %.0f s)", kClRecallMin, kBaselineMargin,
                          kReproSeconds)};
  });
  run(8, "CL learning signal", [&]() -> Outcome {
    if (!first) return {false, "repro failed: " + repro_error};
    const auto& cl = first->cl;
    if (cl.history.empty()) return {false, "no epochs recorded"};
    const double gain = cl.history.back().val_recall_at_1 - cl.initial_val_recall_at_1;
    return {gain >= kLearningGain,
            fmt("val R@1 %.4f at epoch 0 -> %.4f at epoch %.0f, gain %.4f", cl.initial_val_recall_at_1,
                cl.history.back().val_recall_at_1, static_cast<double>(cl.history.back().epoch), gain) +
                fmt(" (need >= %.2f)", kLearningGain)};
  });
  run(9, "determinism across two repro runs", [&]() -> Outcome {
    if (!first || !second) return {false, "repro failed: " + repro_error};
    std::vector<std::string> files{"cl.ckpt", "sl.ckpt"};
    for (const char* m : {"cl", "sl"}) {
      for (const char* s : {"_s0.pidb", "_s1.pidb", "_0to1.json", "_1to0.json"}) {
        files.push_back(std::string("eval/") + m + s);
      }
    }
    files.push_back("eval/baseline_0to1.json");
    files.push_back("eval/baseline_1to0.json");
    files.push_back("comparison.tsv");
    int differing = 0;
    std::string names;
    for (const auto& f : files) {
      if (!same_file(work / "run_a" / f, work / "run_b" / f)) {
        ++differing;
        names += " " + f;
      }
    }
    return {differing == 0, std::to_string(files.size() - differing) + " of " + std::to_string(files.size()) +
                                " artifacts byte-identical" + (differing ? ", differing:" + names : "")};
  });
  run(10, "chance-level sanity", chance);

  std::printf("%s\n", failures == 0 ? "ALL CRITERIA PASSED" : (std::to_string(failures) + " CRITERIA FAILED").c_str());
  return failures == 0 ? 0 : 1;
}
