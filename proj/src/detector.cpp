#include "defence/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <tuple>

#include "defence/error.hpp"
#include "defence/kernels.hpp"
#include "defence/raster.hpp"

namespace defence {

namespace {

constexpr const char* kModule = "detector";

bool yx_less(Point2 a, Point2 b) { return a.y != b.y ? a.y < b.y : a.x < b.x; }

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double m = v[mid];
  if (v.size() % 2 == 0) {
    m = 0.5 * (m + *std::max_element(v.begin(), v.begin() + mid));
  }
  return m;
}

struct DisjointSet {
  std::vector<std::size_t> parent;
  explicit DisjointSet(std::size_t n) : parent(n) {
    std::iota(parent.begin(), parent.end(), std::size_t{0});
  }
  std::size_t find(std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
};

}  // namespace

int scan_positions(int extent, int window, int stride) {
  return extent < window ? 0 : (extent - window) / stride + 1;
}

std::vector<Point2> scannable_points(const std::vector<Point2>& points, int width,
                                     int height, int window) {
  const double lo = window / 2, hx = width - window / 2, hy = height - window / 2;
  std::vector<Point2> out;
  for (const Point2& p : points) {
    if (p.x >= lo && p.y >= lo && p.x <= hx && p.y <= hy) out.push_back(p);
  }
  return out;
}

namespace {

void check_scan(const CnnModel& model, const Image& frame, const ScanParams& params) {
  const int side = model.arch().input_side;
  if (frame.width() < side || frame.height() < side) {
    throw ShapeError(kModule, "frame smaller than the detector window");
  }
  if (params.stride < 1) throw GeometryError(kModule, "stride must be at least 1");
  if (!(params.threshold > 0.0 && params.threshold < 1.0)) {
    throw GeometryError(kModule, "threshold must lie in (0, 1)");
  }
}

JointDetections detections(const std::vector<Scores>& scores, int frame_width, int side,
                           const ScanParams& params) {
  const int nx = scan_positions(frame_width, side, params.stride);
  JointDetections out;
  out.threshold = params.threshold;
  out.windows_evaluated = scores.size();
  for (std::size_t k = 0; k < scores.size(); ++k) {
    const Scores& s = scores[k];
    if (s.joint > params.threshold && s.joint > s.non_joint) {
      const int wx = static_cast<int>(k % nx), wy = static_cast<int>(k / nx);
      out.raw_hits.push_back({{double(wx * params.stride + side / 2),
                               double(wy * params.stride + side / 2)},
                              s.joint});
    }
  }
  out.joints = cluster(out.raw_hits, params.cluster_radius);
  return out;
}

}  // namespace

JointDetections scan(const CnnModel& model, const Image& frame, const ScanParams& params) {
  check_scan(model, frame, params);
  const auto scores = kernels::window_scores(model, to_luminance(frame), params.stride);
  return detections(scores, frame.width(), model.arch().input_side, params);
}

ThresholdChoice select_threshold(const CnnModel& model, const std::vector<Image>& frames,
                                 const std::vector<std::vector<Point2>>& truth,
                                 const std::vector<double>& candidates,
                                 const ScanParams& params, double tolerance) {
  if (frames.size() != truth.size()) throw ShapeError(kModule, "one truth set per frame");
  if (frames.empty() || candidates.empty()) {
    throw GeometryError(kModule, "no frames or no candidate thresholds");
  }
  std::vector<std::vector<Scores>> scores;
  for (const Image& f : frames) {
    check_scan(model, f, params);
    scores.push_back(kernels::window_scores(model, to_luminance(f), params.stride));
  }
  ThresholdChoice best;
  best.score.f_measure = -1.0;
  for (double t : candidates) {
    ScanParams p = params;
    p.threshold = t;
    std::size_t matches = 0, predicted = 0, actual = 0;
    for (std::size_t i = 0; i < frames.size(); ++i) {
      check_scan(model, frames[i], p);
      const auto joints = detections(scores[i], frames[i].width(), model.arch().input_side, p).joints;
      matches += eval_detection(joints, truth[i], tolerance).matches;
      predicted += joints.size();
      actual += truth[i].size();
    }
    DetectionScore s;
    s.matches = matches;
    s.precision = predicted ? double(matches) / predicted : 1.0;
    s.recall = actual ? double(matches) / actual : 1.0;
    s.f_measure = f_measure(s.precision, s.recall);
    if (s.f_measure > best.score.f_measure) best = {t, s};
  }
  return best;
}

std::vector<Point2> cluster(std::vector<Hit> hits, double cluster_radius) {
  // Canonical order makes the floating-point centroid sums order-free.
  std::sort(hits.begin(), hits.end(), [](const Hit& a, const Hit& b) {
    return std::tie(a.center.y, a.center.x, a.score) <
           std::tie(b.center.y, b.center.x, b.score);
  });
  const std::size_t n = hits.size();
  DisjointSet sets(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (distance(hits[i].center, hits[j].center) <= cluster_radius) sets.unite(i, j);
    }
  }

  for (;;) {
    std::vector<std::size_t> roots;
    std::vector<Point2> centroids;
    for (std::size_t i = 0; i < n; ++i) {
      if (sets.find(i) == i) roots.push_back(i);
    }
    for (std::size_t r : roots) {
      double sx = 0, sy = 0, sw = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (sets.find(i) != r) continue;
        sx += hits[i].score * hits[i].center.x;
        sy += hits[i].score * hits[i].center.y;
        sw += hits[i].score;
      }
      centroids.push_back({sx / sw, sy / sw});
    }
    bool merged = false;
    for (std::size_t a = 0; a < roots.size() && !merged; ++a) {
      for (std::size_t b = a + 1; b < roots.size() && !merged; ++b) {
        if (distance(centroids[a], centroids[b]) <= cluster_radius) {
          sets.unite(roots[a], roots[b]);
          merged = true;
        }
      }
    }
    if (!merged) {
      std::sort(centroids.begin(), centroids.end(), yx_less);
      return centroids;
    }
  }
}

std::vector<Segment> joint_links(const std::vector<Point2>& joints_in,
                                 const ConnectParams& params) {
  std::vector<Point2> joints = joints_in;
  std::sort(joints.begin(), joints.end(), yx_less);
  const std::size_t n = joints.size();
  if (n < 2) return {};

  double radius = params.link_radius;
  if (radius <= 0.0) {
    std::vector<double> nearest(n, 1e300);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) nearest[i] = std::min(nearest[i], distance(joints[i], joints[j]));
    radius = 1.5 * median(nearest);
  }

  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = distance(joints[i], joints[j]);
      if (d <= radius + 1e-9) cand.push_back({d, j});
    }
    std::sort(cand.begin(), cand.end());
    const std::size_t take = std::min<std::size_t>(cand.size(), params.neighbors_max);
    for (std::size_t k = 0; k < take; ++k) {
      pairs.push_back({std::min(i, cand[k].second), std::max(i, cand[k].second)});
    }
  }
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  std::vector<Segment> out;
  for (auto [i, j] : pairs) out.push_back({joints[i], joints[j]});
  return out;
}

ConnectResult connect_joints(const std::vector<Point2>& joints,
                             const ConnectParams& params, int width, int height) {
  if (params.wire_thickness < 1.0) throw GeometryError(kModule, "wire thickness below 1");
  if (params.neighbors_max < 2) throw GeometryError(kModule, "neighbors_max below 2");
  ConnectResult result{FenceMask(width, height), joints.size() < 2};
  const auto links = joint_links(joints, params);
  for (const Segment& s : links) draw_segment(result.mask, s.a, s.b, params.wire_thickness);

  if (params.extend_to_border) {
    for (const Segment& s : links) {
      for (const auto& [from, to] : {std::pair{s.a, s.b}, std::pair{s.b, s.a}}) {
        const Point2 step{to.x - from.x, to.y - from.y};
        const Point2 beyond{from.x - step.x, from.y - step.y};
        const double len = std::hypot(step.x, step.y);
        const bool has_opposite = std::any_of(joints.begin(), joints.end(), [&](Point2 j) {
          return distance(j, beyond) <= 0.35 * len;
        });
        if (!has_opposite) draw_segment(result.mask, from, beyond, params.wire_thickness);
      }
    }
  }
  for (const Point2& j : joints) draw_disc(result.mask, j, params.wire_thickness);
  return result;
}

double estimate_wire_thickness(const Image& frame, const std::vector<Point2>& joints,
                               const ConnectParams& params) {
  const Image lum = to_luminance(frame);
  auto sample = [&](double x, double y, double& v) {
    const int ix = static_cast<int>(std::lround(x)), iy = static_cast<int>(std::lround(y));
    if (ix < 0 || iy < 0 || ix >= lum.width() || iy >= lum.height()) return false;
    v = lum.at(0, iy, ix);
    return true;
  };
  constexpr int kReach = 12;
  std::vector<double> widths;
  for (const Segment& s : joint_links(joints, params)) {
    const double len = distance(s.a, s.b);
    if (len < 1.0) continue;
    const double nx = -(s.b.y - s.a.y) / len, ny = (s.b.x - s.a.x) / len;
    const double mx = 0.5 * (s.a.x + s.b.x), my = 0.5 * (s.a.y + s.b.y);
    std::vector<double> profile(2 * kReach + 1);
    bool ok = true;
    for (int t = -kReach; t <= kReach && ok; ++t) {
      ok = sample(mx + t * nx, my + t * ny, profile[t + kReach]);
    }
    if (!ok) continue;
    std::vector<double> outer;
    for (int t = 6; t <= kReach; ++t) {
      outer.push_back(profile[kReach + t]);
      outer.push_back(profile[kReach - t]);
    }
    const double background = median(outer);
    const double contrast = profile[kReach] - background;
    if (std::abs(contrast) < 0.05) continue;
    int w = 1;
    for (int t = 1; t < kReach && (profile[kReach + t] - background) / contrast > 0.5; ++t) ++w;
    for (int t = 1; t < kReach && (profile[kReach - t] - background) / contrast > 0.5; ++t) ++w;
    widths.push_back(w);
  }
  if (widths.empty()) return 4.0;
  return std::clamp(median(widths), 2.0, 10.0);
}

double f_measure(double precision, double recall) {
  return precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
}

DetectionScore eval_detection(const std::vector<Point2>& predicted,
                              const std::vector<Point2>& truth, double tolerance) {
  if (!(tolerance > 0.0)) throw GeometryError(kModule, "tolerance must be positive");
  struct Pair {
    double d;
    std::size_t p, t;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    for (std::size_t j = 0; j < truth.size(); ++j) {
      const double d = distance(predicted[i], truth[j]);
      if (d <= tolerance) pairs.push_back({d, i, j});
    }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(a.d, a.p, a.t) < std::tie(b.d, b.p, b.t);
  });
  std::vector<bool> used_p(predicted.size()), used_t(truth.size());
  DetectionScore s;
  for (const Pair& pr : pairs) {
    if (used_p[pr.p] || used_t[pr.t]) continue;
    used_p[pr.p] = used_t[pr.t] = true;
    ++s.matches;
  }
  s.precision = predicted.empty() ? 1.0 : double(s.matches) / predicted.size();
  s.recall = truth.empty() ? 1.0 : double(s.matches) / truth.size();
  s.f_measure = f_measure(s.precision, s.recall);
  return s;
}

FenceMask apply_manual_edits(const FenceMask& mask, const std::vector<MaskEdit>& edits) {
  FenceMask out = mask;
  auto inside = [&](Point2 p) {
    return p.x >= 0 && p.y >= 0 && p.x <= mask.width() - 1 && p.y <= mask.height() - 1;
  };
  for (const MaskEdit& e : edits) {
    const bool value = e.op == MaskEdit::Op::add;
    if (!inside(e.a) || (e.shape == MaskEdit::Shape::segment && !inside(e.b))) {
      throw GeometryError(kModule, "edit primitive outside the mask");
    }
    if (!(e.size > 0.0)) throw GeometryError(kModule, "edit size must be positive");
    if (e.shape == MaskEdit::Shape::segment) {
      draw_segment(out, e.a, e.b, e.size, value);
    } else {
      draw_disc(out, e.a, e.size, value);
    }
  }
  return out;
}

std::vector<MaskEdit> parse_edits(const std::string& text) {
  std::vector<MaskEdit> edits;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string op, shape;
    if (!(ss >> op)) continue;
    auto fail = [&] {
      throw FormatError(kModule, "edit line " + std::to_string(lineno) + ": '" + line + "'");
    };
    MaskEdit e;
    if (op == "add") e.op = MaskEdit::Op::add;
    else if (op == "rm") e.op = MaskEdit::Op::remove;
    else fail();
    if (!(ss >> shape)) fail();
    if (shape == "seg") {
      e.shape = MaskEdit::Shape::segment;
      if (!(ss >> e.a.x >> e.a.y >> e.b.x >> e.b.y >> e.size)) fail();
    } else if (shape == "disc") {
      e.shape = MaskEdit::Shape::disc;
      if (!(ss >> e.a.x >> e.a.y >> e.size)) fail();
      e.b = e.a;
    } else {
      fail();
    }
    std::string extra;
    if (ss >> extra) fail();
    edits.push_back(e);
  }
  return edits;
}

std::vector<MaskEdit> load_edits(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(kModule, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_edits(buf.str());
}

}  // namespace defence
