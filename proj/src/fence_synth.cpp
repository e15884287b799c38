#include "defence/fence_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "defence/error.hpp"
#include "defence/image_io.hpp"

namespace defence {

namespace {

constexpr const char* kModule = "fencesynth";

struct WireFamily {
  double nx, ny;  // unit normal
  double phase;
};

WireFamily family_at(double angle_deg, double phase) {
  const double a = angle_deg * std::numbers::pi / 180.0;
  return {-std::sin(a), std::cos(a), phase};
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::pair<long, long> line_index_range(const WireFamily& f, double spacing,
                                       int width, int height) {
  double lo = 1e300, hi = -1e300;
  for (double x : {0.0, double(width - 1)}) {
    for (double y : {0.0, double(height - 1)}) {
      const double p = f.nx * x + f.ny * y;
      lo = std::min(lo, p);
      hi = std::max(hi, p);
    }
  }
  return {static_cast<long>(std::floor((lo - f.phase) / spacing)) - 1,
          static_cast<long>(std::ceil((hi - f.phase) / spacing)) + 1};
}

}  // namespace

double expected_fence_area(const FenceParams& params) {
  const double r = params.wire_thickness / params.spacing;
  return static_cast<double>(params.width) * params.height * (2.0 * r - r * r);
}

FenceLayer generate_fence(const FenceParams& params) {
  if (params.width < 64 || params.height < 64) {
    throw GeometryError(kModule, "fence dimensions must be at least 64");
  }
  if (!(params.wire_thickness > 0.0)) {
    throw GeometryError(kModule, "wire thickness must be positive");
  }
  if (!(params.spacing > 2.0 * params.wire_thickness)) {
    throw GeometryError(kModule, "spacing must exceed twice the wire thickness");
  }
  if (params.color.size() != 1 && params.color.size() != 3) {
    throw GeometryError(kModule, "fence color needs 1 or 3 components");
  }
  const double second_angle = params.kind == LatticeKind::rectangular
                                  ? params.angle + 90.0
                                  : -params.angle;
  std::mt19937_64 rng(mix_seed(params.seed, 1));
  std::uniform_real_distribution<double> phase(0.0, params.spacing);
  const WireFamily f1 = family_at(params.angle, phase(rng));
  const WireFamily f2 = family_at(second_angle, phase(rng));
  const double det = f1.nx * f2.ny - f1.ny * f2.nx;
  if (std::abs(det) < 0.2) {
    throw GeometryError(kModule, "wire families are nearly parallel");
  }

  FenceLayer layer;
  layer.wire_thickness = params.wire_thickness;
  layer.spacing = params.spacing;
  layer.angle = params.angle;
  layer.kind = params.kind;
  layer.color = params.color;
  layer.mask = FenceMask(params.width, params.height);

  // Half-open band [-h, h) around each wire center line; h never drops below
  // the half-diagonal of a pixel so every joint's nearest pixel is on the mask.
  const double h = std::max(params.wire_thickness / 2.0, 0.75);
  const double s = params.spacing;
  auto on_family = [&](const WireFamily& f, double x, double y) {
    const double d = f.nx * x + f.ny * y - f.phase;
    const double r = d - s * std::floor(d / s);
    return r < h || r >= s - h;
  };
  for (int y = 0; y < params.height; ++y) {
    for (int x = 0; x < params.width; ++x) {
      layer.mask.set(x, y, on_family(f1, x, y) || on_family(f2, x, y));
    }
  }

  const auto [k0, k1] = line_index_range(f1, s, params.width, params.height);
  const auto [l0, l1] = line_index_range(f2, s, params.width, params.height);
  for (long k = k0; k <= k1; ++k) {
    const double c1 = f1.phase + k * s;
    for (long l = l0; l <= l1; ++l) {
      const double c2 = f2.phase + l * s;
      const double x = (c1 * f2.ny - c2 * f1.ny) / det;
      const double y = (f1.nx * c2 - f2.nx * c1) / det;
      if (x >= 0.0 && y >= 0.0 && x <= params.width - 1 && y <= params.height - 1) {
        layer.joints.push_back({x, y});
      }
    }
  }
  std::sort(layer.joints.begin(), layer.joints.end(),
            [](Point2 a, Point2 b) { return a.y != b.y ? a.y < b.y : a.x < b.x; });

  layer.shading.assign(layer.mask.size(), 0.0);
  if (params.texture_sigma > 0.0) {
    std::mt19937_64 shade_rng(mix_seed(params.seed, 2));
    std::normal_distribution<double> noise(0.0, params.texture_sigma);
    for (double& v : layer.shading) v = noise(shade_rng);
  }
  return layer;
}

FenceMask shift_mask(const FenceMask& mask, Offset d) {
  FenceMask out(mask.width(), mask.height());
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      const int sx = x - d.dx, sy = y - d.dy;
      out.set(x, y, mask.contains(sx, sy) && mask.at(sx, sy));
    }
  }
  return out;
}

Composite composite(const Image& background, const FenceLayer& fence,
                    Offset offset) {
  if (background.width() != fence.mask.width() ||
      background.height() != fence.mask.height()) {
    throw ShapeError(kModule, "fence and background dimensions differ");
  }
  Composite out{background, shift_mask(fence.mask, offset)};
  const int w = background.width();
  for (int y = 0; y < background.height(); ++y) {
    for (int x = 0; x < w; ++x) {
      if (!out.mask.at(x, y)) continue;
      const double shade =
          fence.shading[static_cast<std::size_t>(y - offset.dy) * w + (x - offset.dx)];
      for (int c = 0; c < background.channels(); ++c) {
        const double base = fence.color.size() == 1 ? fence.color[0] : fence.color[c];
        out.frame.set(c, y, x, base + shade);
      }
    }
  }
  return out;
}

Image shift_image(const Image& image, Offset d) {
  if (std::abs(d.dx) * 4 >= image.width() || std::abs(d.dy) * 4 >= image.height()) {
    throw GeometryError(kModule, "displacement exceeds a quarter of the frame");
  }
  const int w = image.width(), hgt = image.height();
  std::vector<double> out(image.samples().size());
  for (int c = 0; c < image.channels(); ++c) {
    for (int y = 0; y < hgt; ++y) {
      const int sy = std::clamp(y - d.dy, 0, hgt - 1);
      for (int x = 0; x < w; ++x) {
        const int sx = std::clamp(x - d.dx, 0, w - 1);
        out[c * image.plane_size() + static_cast<std::size_t>(y) * w + x] =
            image.at(c, sy, sx);
      }
    }
  }
  return Image(w, hgt, image.channels(), std::move(out));
}

Image generate_background(int width, int height, int channels,
                          std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 3));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  struct Wave {
    double kx, ky, phase, amp;
  };
  constexpr int kWaves = 14;
  std::vector<Wave> waves;
  for (int i = 0; i < kWaves; ++i) {
    const double freq = 0.01 + 0.11 * unit(rng);  // cycles per pixel
    const double dir = 2.0 * std::numbers::pi * unit(rng);
    waves.push_back({2 * std::numbers::pi * freq * std::cos(dir),
                     2 * std::numbers::pi * freq * std::sin(dir),
                     2 * std::numbers::pi * unit(rng), 0.3 + 0.7 * unit(rng)});
  }
  std::vector<double> mixing(static_cast<std::size_t>(kWaves) * channels);
  for (double& m : mixing) m = unit(rng) < 0.7 ? unit(rng) : 0.0;

  const std::size_t n = static_cast<std::size_t>(width) * height;
  std::vector<double> samples(n * channels);
  for (int c = 0; c < channels; ++c) {
    double lo = 1e300, hi = -1e300;
    double* plane = samples.data() + c * n;
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        double v = 0.0;
        for (int i = 0; i < kWaves; ++i) {
          const Wave& wv = waves[i];
          v += mixing[i * channels + c] * wv.amp *
               std::sin(wv.kx * x + wv.ky * y + wv.phase);
        }
        plane[static_cast<std::size_t>(y) * width + x] = v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    }
    const double span = hi > lo ? hi - lo : 1.0;
    for (std::size_t i = 0; i < n; ++i) plane[i] = 0.1 + 0.8 * (plane[i] - lo) / span;
  }
  return Image(width, height, channels, std::move(samples));
}

std::size_t TexelDataset::count(TexelLabel label) const {
  return static_cast<std::size_t>(std::count_if(
      samples.begin(), samples.end(),
      [label](const TexelSample& s) { return s.label == label; }));
}

TexelDataset build_texel_dataset(const std::vector<Scene>& scenes,
                                 std::size_t n_pos, std::size_t n_neg,
                                 std::uint64_t seed) {
  if (scenes.empty()) throw GeometryError(kModule, "no scenes supplied");
  if (n_pos == 0 || n_neg == 0) {
    throw GeometryError(kModule, "n_pos and n_neg must be positive");
  }
  constexpr int half = kTexelSide / 2;
  const std::size_t n_scenes = scenes.size();
  TexelDataset out;
  for (std::size_t si = 0; si < n_scenes; ++si) {
    const Scene& scene = scenes[si];
    const int w = scene.image.width(), h = scene.image.height();
    const std::size_t pos_quota = n_pos / n_scenes + (si < n_pos % n_scenes ? 1 : 0);
    const std::size_t neg_quota = n_neg / n_scenes + (si < n_neg % n_scenes ? 1 : 0);
    std::mt19937_64 rng(mix_seed(seed, 100 + si));

    std::vector<Point2> eligible;
    for (const Point2& j : scene.fence.joints) {
      const long jx = std::lround(j.x), jy = std::lround(j.y);
      if (jx - 1 >= half && jy - 1 >= half && jx + 1 <= w - half &&
          jy + 1 <= h - half) {
        eligible.push_back(j);
      }
    }
    if (pos_quota > 0 && eligible.empty()) {
      throw GeometryError(kModule, "scene " + std::to_string(si) +
                                       " has no joint usable as a positive");
    }
    std::uniform_int_distribution<std::size_t> pick(0, eligible.empty() ? 0 : eligible.size() - 1);
    std::uniform_int_distribution<int> jitter(-1, 1);
    for (std::size_t k = 0; k < pos_quota; ++k) {
      const Point2 j = eligible[pick(rng)];
      const int cx = static_cast<int>(std::lround(j.x)) + jitter(rng);
      const int cy = static_cast<int>(std::lround(j.y)) + jitter(rng);
      out.samples.push_back({extract_patch(scene.image, cx, cy, kTexelSide),
                             TexelLabel::joint});
    }

    const double exclusion = scene.fence.spacing / 2.0;
    std::uniform_int_distribution<int> px(half, w - half);
    std::uniform_int_distribution<int> py(half, h - half);
    auto clear_of_joints = [&](Point2 c) {
      return std::all_of(scene.fence.joints.begin(), scene.fence.joints.end(),
                         [&](Point2 j) { return distance(c, j) >= exclusion; });
    };
    // Half the negatives sit on wire pixels, mostly near the midpoint between
    // two joints, where a wire looks most like a crossing.
    std::vector<Point2> on_wire;
    for (int cy = half; cy <= h - half; ++cy) {
      for (int cx = half; cx <= w - half; ++cx) {
        const Point2 c{double(cx), double(cy)};
        if (scene.fence.mask.at(cx, cy) && clear_of_joints(c)) on_wire.push_back(c);
      }
    }
    std::size_t accepted = 0, attempts = 0;
    if (!on_wire.empty()) {
      std::uniform_int_distribution<std::size_t> pick_wire(0, on_wire.size() - 1);
      for (; accepted < neg_quota / 2; ++accepted) {
        const Point2 c = on_wire[pick_wire(rng)];
        out.samples.push_back({extract_patch(scene.image, int(c.x), int(c.y), kTexelSide),
                               TexelLabel::non_joint});
      }
    }
    const std::size_t max_attempts = 200 * neg_quota + 1000;
    while (accepted < neg_quota) {
      if (++attempts > max_attempts) {
        throw GeometryError(kModule, "insufficient joint-free area for negatives");
      }
      const int cx = px(rng), cy = py(rng);
      const Point2 c{double(cx), double(cy)};
      if (!clear_of_joints(c)) continue;
      out.samples.push_back({extract_patch(scene.image, cx, cy, kTexelSide),
                             TexelLabel::non_joint});
      ++accepted;
    }
  }
  return out;
}

TexelDataset augment(const TexelDataset& dataset, bool include_flips) {
  constexpr int lo = kCropSide / 2;
  constexpr int hi = kTexelSide - kCropSide + kCropSide / 2;
  constexpr int corners[4][2] = {{lo, lo}, {hi, lo}, {lo, hi}, {hi, hi}};
  TexelDataset out;
  out.samples.reserve(dataset.size() * (include_flips ? 10 : 5));
  for (const TexelSample& s : dataset.samples) {
    if (s.patch.side() != kTexelSide) {
      throw ShapeError(kModule, "augment expects 32x32 patches");
    }
    std::vector<Patch> variants{s.patch};
    for (const auto& c : corners) {
      Patch crop = extract_patch(s.patch.pixels, c[0], c[1], kCropSide);
      crop.origin = {s.patch.origin.x + c[0] - kTexelSide / 2,
                     s.patch.origin.y + c[1] - kTexelSide / 2};
      variants.push_back(resize_bilinear(crop, kTexelSide));
    }
    for (const Patch& v : variants) out.samples.push_back({v, s.label});
    if (include_flips) {
      for (const Patch& v : variants) {
        out.samples.push_back({Patch{flip_horizontal(v.pixels), v.origin}, s.label});
      }
    }
  }
  return out;
}

void save_dataset(const TexelDataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "patches");
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw IoError(kModule, "cannot write manifest in " + dir.string());
  char name[32];
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    std::snprintf(name, sizeof name, "patches/%06zu.png", i);
    save_image(dataset.samples[i].patch.pixels, dir / name);
    manifest << name << ',' << static_cast<int>(dataset.samples[i].label) << '\n';
  }
  if (!manifest) throw IoError(kModule, "manifest write failed");
}

TexelDataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.txt");
  if (!manifest) throw IoError(kModule, "cannot open manifest in " + dir.string());
  TexelDataset out;
  std::string line;
  int lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    const std::string label = comma == std::string::npos ? "" : line.substr(comma + 1);
    if (label != "0" && label != "1") {
      throw FormatError(kModule, "manifest line " + std::to_string(lineno) +
                                     ": expected <path>,<0|1>");
    }
    Image img = load_image(dir / line.substr(0, comma));
    out.samples.push_back({Patch{std::move(img), {}},
                           label == "1" ? TexelLabel::joint : TexelLabel::non_joint});
  }
  return out;
}

Scene make_training_scene(int width, int height, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 7));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  FenceParams p;
  p.width = width;
  p.height = height;
  p.seed = mix_seed(seed, 8);
  p.kind = unit(rng) < 0.5 ? LatticeKind::rectangular : LatticeKind::diamond;
  p.spacing = 28.0 + 12.0 * unit(rng);
  p.wire_thickness = 2.0 + 3.0 * unit(rng);
  p.angle = p.kind == LatticeKind::rectangular ? -20.0 + 40.0 * unit(rng)
                                               : 35.0 + 20.0 * unit(rng);
  const bool bright = unit(rng) < 0.5;
  p.color = {bright ? 0.75 + 0.2 * unit(rng) : 0.05 + 0.2 * unit(rng)};
  p.texture_sigma = 0.02;
  Scene scene;
  scene.fence = generate_fence(p);
  const Image background = generate_background(width, height, 3, mix_seed(seed, 9));
  scene.image = composite(background, scene.fence).frame;
  return scene;
}

std::vector<Scene> make_training_scenes(std::size_t count, int width, int height,
                                        std::uint64_t seed, std::uint64_t stream) {
  std::vector<Scene> scenes;
  scenes.reserve(count);
  const std::uint64_t base = mix_seed(seed, 0x5ce0000 + stream);
  for (std::size_t i = 0; i < count; ++i) {
    scenes.push_back(make_training_scene(width, height, mix_seed(base, i)));
  }
  return scenes;
}

}  // namespace defence
