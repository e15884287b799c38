#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "defence/detector.hpp"
#include "defence/error.hpp"
#include "defence/fence_synth.hpp"
#include "defence/raster.hpp"

using namespace defence;

namespace {

double logit(double p) { return std::log(p / (1 - p)); }

// All weights zero, so every window scores (joint, non_joint) exactly.
CnnModel constant_model(double joint, double non_joint) {
  CnnModel m;
  m.parameters()[m.offsets().fc_b + 0] = logit(joint);
  m.parameters()[m.offsets().fc_b + 1] = logit(non_joint);
  return m;
}

std::vector<Point2> grid(int n, double spacing, double x0, double y0) {
  std::vector<Point2> pts;
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) pts.push_back({x0 + i * spacing, y0 + j * spacing});
  return pts;
}

}  // namespace

TEST_CASE("window counts follow ((extent - window) / stride + 1)^2") {
  CHECK(scan_positions(64, 32, 4) == 9);
  CHECK(scan_positions(31, 32, 4) == 0);
  CHECK(scan_positions(35, 32, 4) == 1);
  const JointDetections d = scan(constant_model(0.9, 0.1), Image(64, 64, 1, 0.5));
  CHECK(d.windows_evaluated == 81);
  CHECK(d.raw_hits.size() == 81);
  // Hits 4 px apart link into one component centered on the frame.
  REQUIRE(d.joints.size() == 1);
  CHECK(d.joints[0].x == doctest::Approx(32.0));
  CHECK(d.joints[0].y == doctest::Approx(32.0));
  CHECK(d.raw_hits.front().center == Point2{16, 16});
  CHECK(d.raw_hits.back().center == Point2{48, 48});
}

TEST_CASE("a window is positive only above threshold and above the other class") {
  const Image frame(48, 48, 3, 0.2);
  CHECK(scan(constant_model(0.45, 0.1), frame).raw_hits.empty());
  CHECK(scan(constant_model(0.7, 0.8), frame).raw_hits.empty());
  CHECK(scan(constant_model(0.7, 0.2), frame).raw_hits.size() == 25);
  ScanParams strict;
  strict.threshold = 0.75;
  CHECK(scan(constant_model(0.7, 0.2), frame, strict).raw_hits.empty());
  CHECK_THROWS_AS(scan(constant_model(0.7, 0.2), Image(20, 64, 1)), ShapeError);
  strict.stride = 0;
  CHECK_THROWS_AS(scan(constant_model(0.7, 0.2), frame, strict), GeometryError);
}

TEST_CASE("cluster returns score-weighted centroids of linked hits") {
  const std::vector<Hit> hits{{{10, 10}, 1.0}, {{14, 10}, 3.0}, {{60, 40}, 0.5}};
  const auto c = cluster(hits, 8.0);
  REQUIRE(c.size() == 2);
  CHECK(c[0].x == doctest::Approx(13.0));
  CHECK(c[0].y == doctest::Approx(10.0));
  CHECK(c[1] == Point2{60, 40});
  CHECK(cluster({}, 8.0).empty());
}

TEST_CASE("cluster output does not depend on hit order") {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(0, 200), s(0.5, 1.0);
  std::vector<Hit> hits;
  for (int i = 0; i < 120; ++i) hits.push_back({{u(rng), u(rng)}, s(rng)});
  const auto ref = cluster(hits, 8.0);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(hits.begin(), hits.end(), rng);
    CHECK(cluster(hits, 8.0) == ref);
  }
  for (std::size_t i = 0; i < ref.size(); ++i)
    for (std::size_t j = i + 1; j < ref.size(); ++j) CHECK(distance(ref[i], ref[j]) > 8.0);
}

TEST_CASE("links join lattice neighbors within the radius") {
  const auto pts = grid(3, 20, 10, 10);
  ConnectParams p;
  p.link_radius = 25;
  const auto links = joint_links(pts, p);
  // 3x3 grid: 12 axis-aligned edges; diagonals are 28.3 px.
  CHECK(links.size() == 12);
  for (const Segment& s : links) CHECK(distance(s.a, s.b) == doctest::Approx(20.0));
  // The default radius is 1.5x the 20 px spacing, so border joints with
  // fewer than four axis neighbors also take a diagonal.
  p.link_radius = 0;
  CHECK(joint_links(pts, p).size() > 12);
  p.link_radius = 30;
  CHECK(joint_links(pts, p).size() == joint_links(pts, ConnectParams{}).size());
  p.link_radius = 10;
  CHECK(joint_links(pts, p).empty());
}

TEST_CASE("connect_joints rasterizes wires and joint discs") {
  const auto pts = grid(3, 20, 10, 10);
  ConnectParams p;
  p.link_radius = 25;
  p.wire_thickness = 3;
  const ConnectResult r = connect_joints(pts, p, 64, 64);
  CHECK_FALSE(r.degenerate);
  FenceMask oracle(64, 64);
  for (const Segment& s : joint_links(pts, p)) draw_segment(oracle, s.a, s.b, 3);
  for (const Point2& j : pts) draw_disc(oracle, j, 3);
  CHECK(r.mask == oracle);
  CHECK(r.mask.at(20, 10));
  CHECK_FALSE(r.mask.at(20, 20));

  p.extend_to_border = true;
  const ConnectResult e = connect_joints(pts, p, 64, 64);
  CHECK(e.mask.count() > r.mask.count());
  CHECK(e.mask.at(0, 30));   // row y=30 continued left past x=10
  CHECK(e.mask.at(55, 10));  // and right past x=50

  auto shuffled = pts;
  std::reverse(shuffled.begin(), shuffled.end());
  std::swap(shuffled[1], shuffled[4]);
  CHECK(connect_joints(shuffled, p, 64, 64).mask == e.mask);

  const ConnectResult one = connect_joints({{30, 30}}, p, 64, 64);
  CHECK(one.degenerate);
  CHECK(one.mask.at(30, 30));
  CHECK(connect_joints({}, p, 64, 64).mask.count() == 0);
  p.wire_thickness = 0.5;
  CHECK_THROWS_AS(connect_joints(pts, p, 64, 64), GeometryError);
}

TEST_CASE("wire thickness is measured across links") {
  for (double t : {3.0, 5.0}) {
    FenceParams fp;
    fp.wire_thickness = t;
    fp.color = {0.1};
    fp.texture_sigma = 0;
    fp.seed = 2;
    const FenceLayer f = generate_fence(fp);
    const Image frame = composite(Image(256, 256, 1, 0.7), f).frame;
    CHECK(std::abs(estimate_wire_thickness(frame, f.joints, {}) - t) <= 1.0);
  }
  CHECK(estimate_wire_thickness(Image(64, 64, 1), {}, {}) == 4.0);
}

TEST_CASE("threshold selection maximizes pooled F over the candidates") {
  const CnnModel m = constant_model(0.7, 0.1);
  const std::vector<Image> frames{Image(64, 64, 1, 0.3), Image(64, 64, 1, 0.6)};
  const std::vector<std::vector<Point2>> truth{{{32, 32}}, {{30, 33}}};
  const ThresholdChoice c = select_threshold(m, frames, truth, {0.8, 0.5, 0.6});
  CHECK(c.threshold == 0.5);
  CHECK(c.score.matches == 2);
  CHECK(c.score.f_measure == doctest::Approx(1.0));
  CHECK(select_threshold(m, frames, truth, {0.9}).score.f_measure == 0.0);
  CHECK_THROWS_AS(select_threshold(m, frames, {{}}, {0.5}), ShapeError);
  CHECK_THROWS_AS(select_threshold(m, frames, truth, {}), GeometryError);
  CHECK_THROWS_AS(select_threshold(m, frames, truth, {1.5}), GeometryError);
}

TEST_CASE("scannable points keep reachable window centers") {
  const std::vector<Point2> pts{{15, 40}, {16, 16}, {240, 240}, {241, 100}, {100, 10}};
  const auto kept = scannable_points(pts, 256, 256);
  CHECK(kept == std::vector<Point2>{{16, 16}, {240, 240}});
}

TEST_CASE("F-measure of reference precision/recall pairs") {
  CHECK(f_measure(0.84, 0.96) == doctest::Approx(0.8960).epsilon(1e-4));
  CHECK(f_measure(0.94, 0.96) == doctest::Approx(0.9499).epsilon(1e-4));
  CHECK(f_measure(0.94, 0.26) == doctest::Approx(0.41).epsilon(0.01));
  CHECK(f_measure(0, 0) == 0.0);
}

TEST_CASE("detection scoring matches one-to-one within tolerance") {
  const std::vector<Point2> truth{{10, 10}, {50, 50}, {90, 90}};
  const std::vector<Point2> pred{{12, 10}, {13, 10}, {50, 57}, {200, 200}};
  const DetectionScore s = eval_detection(pred, truth, 8.0);
  CHECK(s.matches == 2);
  CHECK(s.precision == doctest::Approx(0.5));
  CHECK(s.recall == doctest::Approx(2.0 / 3));
  CHECK(s.f_measure == doctest::Approx(f_measure(0.5, 2.0 / 3)));
  CHECK(eval_detection({}, truth).precision == 1.0);
  CHECK(eval_detection({}, truth).recall == 0.0);
  CHECK(eval_detection(pred, {}).recall == 1.0);
  CHECK(eval_detection({}, {}).f_measure == 1.0);
  CHECK_THROWS_AS(eval_detection(pred, truth, 0.0), GeometryError);
  // The closest pair is matched first even if listed last.
  const DetectionScore g = eval_detection({{0, 0}, {5, 0}}, {{4, 0}}, 8.0);
  CHECK(g.matches == 1);
}

TEST_CASE("manual edits add and remove primitives") {
  FenceMask m(32, 32);
  const auto edits = parse_edits(
      "# touch-up\n"
      "add seg 0 5 31 5 1\n"
      "add disc 20 20 2   # blob\n"
      "\n"
      "rm disc 10 5 1\n");
  REQUIRE(edits.size() == 3);
  CHECK(edits[2].op == MaskEdit::Op::remove);
  const FenceMask out = apply_manual_edits(m, edits);
  CHECK(out.at(0, 5));
  CHECK(out.at(31, 5));
  CHECK_FALSE(out.at(10, 5));
  CHECK(out.at(20, 20));
  CHECK(out.count() == 32 - 3 + 13);
  CHECK_THROWS_AS(parse_edits("add box 1 2 3"), FormatError);
  CHECK_THROWS_AS(parse_edits("add disc 1 2"), FormatError);
  CHECK_THROWS_AS(parse_edits("add disc 1 2 3 4"), FormatError);
  CHECK_THROWS_AS(apply_manual_edits(m, parse_edits("add disc 40 2 3")), GeometryError);
  CHECK_THROWS_AS(load_edits("/nonexistent/edits.txt"), IoError);
}
