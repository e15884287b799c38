#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "defence/image.hpp"

namespace defence {

enum class LatticeKind { rectangular, diamond };

struct FenceParams {
  int width = 256;
  int height = 256;
  double spacing = 32.0;
  double angle = 0.0;  // degrees
  double wire_thickness = 4.0;
  LatticeKind kind = LatticeKind::rectangular;
  std::vector<double> color{0.85};
  // Additive Gaussian shading of fence pixels; 0 renders flat color.
  double texture_sigma = 0.02;
  std::uint64_t seed = 0;
};

struct FenceLayer {
  FenceMask mask;
  std::vector<Point2> joints;
  double wire_thickness = 0.0;
  double spacing = 0.0;
  double angle = 0.0;
  LatticeKind kind = LatticeKind::rectangular;
  std::vector<double> color;
  // Per-pixel additive shading, one plane, same raster as `mask`.
  std::vector<double> shading;
};

/// Two families of parallel wires with seeded phases. Joints are the wire
/// intersections inside the frame.
FenceLayer generate_fence(const FenceParams& params);

/// Analytic fence area W*H*(2t/s - (t/s)^2).
double expected_fence_area(const FenceParams& params);

struct Composite {
  Image frame;
  FenceMask mask;  // fence mask shifted by the composite offset
};

/// Paints the fence (shifted by `offset`) over the background.
Composite composite(const Image& background, const FenceLayer& fence,
                    Offset offset = {});

/// out(p) = in(p - d) with replicate-border fill.
Image shift_image(const Image& image, Offset displacement);
FenceMask shift_mask(const FenceMask& mask, Offset displacement);

/// Smooth multi-scale texture used as ground truth and background for
/// synthetic scenes.
Image generate_background(int width, int height, int channels,
                          std::uint64_t seed);

enum class TexelLabel : int { non_joint = 0, joint = 1 };

struct TexelSample {
  Patch patch;
  TexelLabel label = TexelLabel::non_joint;
};

struct TexelDataset {
  std::vector<TexelSample> samples;

  std::size_t count(TexelLabel label) const;
  std::size_t size() const { return samples.size(); }
};

struct Scene {
  Image image;
  FenceLayer fence;
};

inline constexpr int kTexelSide = 32;
inline constexpr int kCropSide = 26;

/// Positives are centered on joints with +-1 px jitter; negatives lie at
/// least spacing/2 from every joint. Per-scene quotas split n_pos and n_neg
/// evenly; output is ordered by scene then sample.
TexelDataset build_texel_dataset(const std::vector<Scene>& scenes,
                                 std::size_t n_pos, std::size_t n_neg,
                                 std::uint64_t seed);

/// The original, the four 26x26 corner crops resized back to 32x32, and
/// (when include_flips) the Y-axis mirror of each of those five.
TexelDataset augment(const TexelDataset& dataset, bool include_flips = true);

/// Directory of PNG patches plus `manifest.txt`, one `<path>,<label>` per line.
void save_dataset(const TexelDataset& dataset, const std::filesystem::path& dir);
TexelDataset load_dataset(const std::filesystem::path& dir);

/// Builds the standard synthetic training scene for index `i`: textured
/// background with a lattice whose geometry varies with the seed.
Scene make_training_scene(int width, int height, std::uint64_t seed);

/// `count` scenes from independent seeds; different `stream` values never
/// share a scene, which keeps training and held-out sets disjoint.
std::vector<Scene> make_training_scenes(std::size_t count, int width, int height,
                                        std::uint64_t seed, std::uint64_t stream = 0);

}  // namespace defence
