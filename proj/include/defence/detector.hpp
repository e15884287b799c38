#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "defence/cnn.hpp"
#include "defence/image.hpp"

namespace defence {

struct Hit {
  Point2 center;
  double score = 0.0;
};

struct ScanParams {
  double threshold = 0.5;
  int stride = 4;
  double cluster_radius = 8.0;
};

struct JointDetections {
  std::vector<Point2> joints;
  std::vector<Hit> raw_hits;
  double threshold = 0.0;
  std::size_t windows_evaluated = 0;
};

/// Number of window positions along one axis.
int scan_positions(int extent, int window, int stride);

/// Slides the classifier over the luminance of `frame`. A window is positive
/// when score_joint > threshold and score_joint > score_non_joint.
JointDetections scan(const CnnModel& model, const Image& frame,
                     const ScanParams& params = {});

/// Single-link components over hit centers (link distance <= radius), each
/// reduced to its score-weighted centroid; centroids closer than the radius
/// are merged. Output is sorted by (y, x).
std::vector<Point2> cluster(std::vector<Hit> hits, double cluster_radius);

/// Points a window center can reach, i.e. at least window/2 from the left and
/// top edges and window/2 from the right and bottom ones.
std::vector<Point2> scannable_points(const std::vector<Point2>& points, int width,
                                     int height, int window = 32);

struct ConnectParams {
  double link_radius = 0.0;  // <= 0: 1.5x the median nearest-joint distance
  int neighbors_max = 4;
  double wire_thickness = 3.0;
  // Continue each lattice direction one step past joints that have no
  // opposite neighbor, so wires reach the frame border.
  bool extend_to_border = false;
};

struct ConnectResult {
  FenceMask mask;
  bool degenerate = false;  // fewer than two joints: discs only
};

struct Segment {
  Point2 a, b;
};

/// Undirected k-nearest-neighbor links within the link radius, each pair once.
std::vector<Segment> joint_links(const std::vector<Point2>& joints,
                                 const ConnectParams& params);

ConnectResult connect_joints(const std::vector<Point2>& joints,
                             const ConnectParams& params, int width, int height);

/// Median width of the wire ridge measured across each link at its midpoint,
/// clamped to [2, 10] px. Falls back to 4 without usable links.
double estimate_wire_thickness(const Image& frame, const std::vector<Point2>& joints,
                               const ConnectParams& params);

struct DetectionScore {
  double precision = 0.0;
  double recall = 0.0;
  double f_measure = 0.0;
  std::size_t matches = 0;
};

double f_measure(double precision, double recall);

/// Greedy one-to-one matching in increasing distance order. An empty
/// prediction set has precision 1; an empty truth set has recall 1.
DetectionScore eval_detection(const std::vector<Point2>& predicted,
                              const std::vector<Point2>& truth, double tolerance = 8.0);

struct ThresholdChoice {
  double threshold = 0.5;
  DetectionScore score;  // pooled over all frames
};

/// Scans every frame once and returns the candidate threshold with the best
/// pooled F-measure against `truth`; ties keep the earlier candidate.
ThresholdChoice select_threshold(const CnnModel& model, const std::vector<Image>& frames,
                                 const std::vector<std::vector<Point2>>& truth,
                                 const std::vector<double>& candidates,
                                 const ScanParams& params = {}, double tolerance = 8.0);

struct MaskEdit {
  enum class Op { add, remove } op = Op::add;
  enum class Shape { segment, disc } shape = Shape::disc;
  Point2 a;             // segment start or disc center
  Point2 b;             // segment end
  double size = 1.0;    // segment thickness or disc radius
};

/// Applies edits in order; throws GeometryError for primitives outside the mask.
FenceMask apply_manual_edits(const FenceMask& mask, const std::vector<MaskEdit>& edits);

/// Lines such as `add seg x1 y1 x2 y2 t` or `rm disc x y r`; `#` starts a comment.
std::vector<MaskEdit> parse_edits(const std::string& text);
std::vector<MaskEdit> load_edits(const std::filesystem::path& path);

}  // namespace defence
