#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "poleimg/pole_detector.hpp"
#include "poleimg/scene_synth.hpp"
#include "support.hpp"

using namespace poleimg;

namespace {

// Dyadic coordinates keep sums exact so translations can be compared tightly.
double dyadic(double v) { return std::round(v * 1024.0) / 1024.0; }

void add_cylinder(PointCloud& c, Rng& rng, double x, double y, double r, double h, int n) {
  for (int i = 0; i < n; ++i) {
    const double t = rng.uniform(0.0, 2.0 * std::numbers::pi);
    c.points.emplace_back(dyadic(x + r * std::cos(t)), dyadic(y + r * std::sin(t)), dyadic(rng.uniform(0.0, h)));
  }
}

void add_ground(PointCloud& c, Rng& rng, double x0, double y0, double side, int n) {
  for (int i = 0; i < n; ++i) {
    c.points.emplace_back(dyadic(x0 + rng.uniform(0.0, side)), dyadic(y0 + rng.uniform(0.0, side)),
                          dyadic(rng.normal(0.0, 0.02)));
  }
}

void add_wall(PointCloud& c, Rng& rng, double x0, double y, double length, double h, int n) {
  for (int i = 0; i < n; ++i) {
    c.points.emplace_back(dyadic(x0 + rng.uniform(0.0, length)), y, dyadic(rng.uniform(0.0, h)));
  }
}

PointCloud three_poles() {
  PointCloud c;
  Rng rng(4, "three");
  add_ground(c, rng, -5, -5, 30, 2000);
  add_cylinder(c, rng, 2.0, 3.0, 0.15, 4.0, 600);
  add_cylinder(c, rng, 12.0, 7.0, 0.1, 3.0, 300);
  add_cylinder(c, rng, 6.0, 15.0, 0.2, 6.0, 900);
  add_wall(c, rng, 10.0, 20.0, 6.0, 3.0, 3000);
  return c;
}

PointCloud translated(const PointCloud& c, double dx, double dy) {
  PointCloud out = c;
  for (auto& p : out.points) {
    p.x() += dx;
    p.y() += dy;
  }
  return out;
}

}  // namespace

TEST_CASE("empty cloud yields nothing") {
  CHECK(detect_poles(PointCloud{}).empty());
}

TEST_CASE("single cylinder on a ground plane") {
  PointCloud c;
  Rng rng(1, "cyl");
  add_ground(c, rng, 0, 0, 10, 400);
  add_cylinder(c, rng, 5.0, 5.0, 0.15, 4.0, 754);
  const auto d = detect_poles(c);
  REQUIRE(d.size() == 1);
  CHECK(std::hypot(d[0].center_x - 5.0, d[0].center_y - 5.0) <= 0.1);
  CHECK(d[0].vertical_extent >= 1.0);
  CHECK(d[0].support_count >= 30);

  GroundTruth truth{{{0, 5.0, 5.0}}};
  const Association a = associate_detections(d, truth, 0.5);
  CHECK(a.precision == 1.0);
  CHECK(a.recall == 1.0);
}

TEST_CASE("a long wall is not a pole") {
  PointCloud c;
  Rng rng(2, "wall");
  add_ground(c, rng, 0, 0, 10, 400);
  add_wall(c, rng, 2.0, 5.0, 6.0, 3.0, 4000);
  CHECK(detect_poles(c).empty());
}

TEST_CASE("short structures are ignored") {
  PointCloud c;
  Rng rng(3, "short");
  add_cylinder(c, rng, 1.0, 1.0, 0.15, 0.8, 500);
  CHECK(detect_poles(c).empty());
}

TEST_CASE("detections satisfy their invariants and are sorted") {
  const DetectorParams p;
  const auto d = detect_poles(three_poles(), p);
  REQUIRE(d.size() == 3);
  for (std::size_t i = 0; i < d.size(); ++i) {
    CHECK(d[i].vertical_extent >= p.min_vertical_extent);
    CHECK(d[i].support_count >= p.min_support_points);
    if (i > 0) {
      CHECK(std::make_pair(d[i - 1].center_x, d[i - 1].center_y) < std::make_pair(d[i].center_x, d[i].center_y));
    }
  }
}

TEST_CASE("translation by whole cells moves detections by the same amount") {
  const PointCloud c = three_poles();
  const auto base = detect_poles(c);
  for (auto [dx, dy] : {std::pair{2.5, -1.75}, std::pair{-10.0, 0.25}, std::pair{100.0, 37.5}}) {
    const auto moved = detect_poles(translated(c, dx, dy));
    REQUIRE(moved.size() == base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      CHECK(moved[i].support_count == base[i].support_count);
      CHECK(moved[i].center_x == doctest::Approx(base[i].center_x + dx).epsilon(1e-12));
      CHECK(moved[i].center_y == doctest::Approx(base[i].center_y + dy).epsilon(1e-12));
      CHECK(moved[i].base_z == base[i].base_z);
    }
  }
}

TEST_CASE("arbitrary translation moves detections within one cell") {
  const PointCloud c = three_poles();
  const auto base = detect_poles(c);
  const double cell = DetectorParams{}.cell_size;
  for (auto [dx, dy] : {std::pair{0.1, 0.37}, std::pair{-3.33, 1.01}}) {
    const auto moved = detect_poles(translated(c, dx, dy));
    REQUIRE(moved.size() == base.size());
    for (std::size_t i = 0; i < base.size(); ++i) {
      CHECK(std::hypot(moved[i].center_x - base[i].center_x - dx, moved[i].center_y - base[i].center_y - dy) <=
            cell);
    }
  }
}

TEST_CASE("raising min_support_points never adds detections") {
  SynthConfig sc;
  sc.n_poles = 30;
  sc.area_side = 60;
  const Scene s = generate_scene(sc);
  const PointCloud cloud = sample_session(s.description, 0);
  DetectorParams p;
  std::size_t previous = SIZE_MAX;
  for (int support : {1, 10, 30, 100, 300, 1000, 5000}) {
    p.min_support_points = support;
    const std::size_t n = detect_poles(cloud, p).size();
    CHECK(n <= previous);
    previous = n;
  }
}

TEST_CASE("detection is deterministic") {
  const PointCloud c = three_poles();
  const auto a = detect_poles(c);
  const auto b = detect_poles(c);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].center_x == b[i].center_x);
    CHECK(a[i].center_y == b[i].center_y);
    CHECK(a[i].support_count == b[i].support_count);
  }
}

TEST_CASE("nearby fragments are merged with support weights") {
  // Two thin columns 0.45 m apart separated by an empty cell column.
  PointCloud c;
  Rng rng(5, "frag");
  for (int i = 0; i < 100; ++i) c.points.emplace_back(0.1, 0.1, rng.uniform(0.0, 3.0));
  for (int i = 0; i < 50; ++i) c.points.emplace_back(0.55, 0.1, rng.uniform(0.0, 3.0));
  const auto d = detect_poles(c);
  REQUIRE(d.size() == 1);
  CHECK(d[0].support_count == 150);
  CHECK(d[0].center_x == doctest::Approx((100 * 0.1 + 50 * 0.55) / 150.0));
}

TEST_CASE("detector parameters are validated") {
  DetectorParams p;
  p.merge_radius = 0.1;  // below cell_size
  CHECK_THROWS(p.validate());
  p = DetectorParams{};
  p.cell_size = 0.0;
  CHECK_THROWS(p.validate());
}

TEST_CASE("association examples") {
  auto det = [](double x, double y) { return testing::pole_at(x, y); };
  SUBCASE("exact positions") {
    GroundTruth t{{{1, 0.0, 0.0}, {2, 10.0, 0.0}}};
    const auto a = associate_detections({det(0, 0), det(10, 0)}, t, 0.5);
    CHECK(a.precision == 1.0);
    CHECK(a.recall == 1.0);
    CHECK(a.matched_pole[0] == 1);
    CHECK(a.matched_pole[1] == 2);
  }
  SUBCASE("far away") {
    GroundTruth t{{{0, 0.0, 0.0}}};
    const auto a = associate_detections({det(10, 0)}, t, 0.5);
    CHECK(a.precision == 0.0);
    CHECK(a.recall == 0.0);
    CHECK_FALSE(a.matched_pole[0].has_value());
  }
  SUBCASE("one spurious") {
    GroundTruth t{{{0, 0.0, 0.0}, {1, 5.0, 5.0}}};
    const auto a = associate_detections({det(0.1, 0), det(5, 5.2), det(20, 20)}, t, 0.5);
    CHECK(a.precision == doctest::Approx(2.0 / 3.0));
    CHECK(a.recall == 1.0);
  }
  SUBCASE("each pole matched at most once, nearest first") {
    GroundTruth t{{{7, 0.0, 0.0}}};
    const auto a = associate_detections({det(0.3, 0), det(0.1, 0)}, t, 0.5);
    CHECK_FALSE(a.matched_pole[0].has_value());
    CHECK(a.matched_pole[1] == 7);
    CHECK(a.matched == 1);
  }
  SUBCASE("empty inputs") {
    const auto a = associate_detections({}, GroundTruth{}, 0.5);
    CHECK(a.matched == 0);
  }
  CHECK_THROWS_AS(associate_detections({}, GroundTruth{}, 0.0), std::invalid_argument);
}
