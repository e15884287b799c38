// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "defence/cnn.hpp"
#include "defence/detector.hpp"
#include "defence/fence_synth.hpp"
#include "defence/fusion.hpp"
#include "defence/metrics.hpp"
#include "defence/motion.hpp"

using namespace defence;
namespace fs = std::filesystem;

namespace {

// Criterion 1.
constexpr double kMinPsnr = 30.0;
constexpr double kMinSsim = 0.95;
constexpr double kMaxSeconds = 300.0;
// Criterion 2.
constexpr double kMinWrongMotionDrop = 3.0;
// Criterion 3.
constexpr double kMaxShiftError = 0.5;
constexpr double kMaxEstimatedLoss = 1.0;
// Criterion 4.
constexpr std::size_t kMinTrainingTexels = 2000;
constexpr std::size_t kTrainScenes = 10;
constexpr std::size_t kHeldOutScenes = 5;
constexpr std::size_t kPositives = 200;  // per dataset, before augmentation
constexpr std::size_t kNegatives = 400;
// Detection threshold grid, searched on the training scenes only.
constexpr double kThresholdGrid[] = {0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.98};
constexpr double kTolerance = 8.0;
constexpr double kMinF = 0.85;
constexpr double kMinAccuracy = 0.95;
// Criterion 5.
constexpr int kCurveEpoch = 50;
constexpr double kCurveRatio = 0.5;
constexpr double kMaxFinalMse = 0.05;
// Criterion 6.
constexpr double kGateSeconds = 30.0;
constexpr double kGradCheckEps = 1e-4;
constexpr double kGradCheckTol = 1e-3;
constexpr double kAdjointTol = 1e-10;
constexpr double kProxGrid = 1e-4;

// Criteria that cannot hold as stated. They are still evaluated and printed,
// but do not turn the exit status red. 7: 0.8960 rounds to 0.90, and no
// single rounding rule maps 0.8960 to 0.89 and 0.9499 to 0.95.
constexpr int kKnownUnattainable[] = {7};

int failures = 0;
int known_failures = 0;

void report(int id, bool pass, const std::string& detail) {
  const bool known = std::find(std::begin(kKnownUnattainable), std::end(kKnownUnattainable), id) !=
                     std::end(kKnownUnattainable);
  std::printf("%s [%d] %s%s\n", pass ? "PASS" : "FAIL", id, detail.c_str(),
              !pass && known ? " (known unattainable)" : "");
  std::fflush(stdout);
  if (!pass) ++(known ? known_failures : failures);
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- de-fencing

struct Sequence {
  Image clean;
  FenceLayer fence;
  std::vector<Offset> shifts;
  std::vector<Image> frames;
};

Sequence make_sequence() {
  Sequence s;
  s.clean = generate_background(256, 256, 3, 11);
  FenceParams fp;
  fp.spacing = 32;
  fp.wire_thickness = 4;
  fp.angle = 10;
  fp.color = {0.85, 0.85, 0.85};
  fp.seed = 5;
  s.fence = generate_fence(fp);
  s.shifts = {{0, 0}, {-5, -5}, {2, 2}, {10, 10}};
  for (Offset o : s.shifts) s.frames.push_back(composite(shift_image(s.clean, o), s.fence).frame);
  return s;
}

struct RunOutcome {
  double psnr = 0.0;
  double ssim = 0.0;
  double seconds = 0.0;
};

RunOutcome reconstruct(const Sequence& s, const std::vector<Point2>& motion) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<Observation> obs;
  for (std::size_t m = 0; m < s.frames.size(); ++m) {
    obs.push_back(make_observation(
        s.frames[m], s.fence.mask,
        build_warp(MotionField::translation(motion[m].x, motion[m].y), 256, 256)));
  }
  SolverParams params;
  params.mu = 0.01;
  params.lambda = 1e-5;
  const DefenceResult r = run_defence(obs, params);
  return {psnr(r.image, s.clean), ssim(r.image, s.clean), seconds_since(t0)};
}

void defencing_criteria() {
  const Sequence s = make_sequence();
  const double coverage = double(s.fence.mask.count()) / s.fence.mask.size();

  std::vector<Point2> known;
  for (Offset o : s.shifts) known.push_back({double(o.dx), double(o.dy)});
  const RunOutcome k = reconstruct(s, known);
  report(1, k.psnr >= kMinPsnr && k.ssim >= kMinSsim && k.seconds <= kMaxSeconds,
         fmt("known motion: coverage %.3f, PSNR %.2f dB (>= 30), SSIM %.4f (>= 0.95), %.1f s",
             coverage, k.psnr, k.ssim, k.seconds));

  const std::vector<Point2> wrong{{0, 0}, {-3, -3}, {4, 4}, {8, 8}};
  const RunOutcome w = reconstruct(s, wrong);
  report(2, k.psnr - w.psnr >= kMinWrongMotionDrop,
         fmt("wrong motion: PSNR %.2f dB, drop %.2f dB (>= 3)", w.psnr, k.psnr - w.psnr));

  std::vector<Point2> estimated{{0, 0}};
  double worst = 0.0;
  for (std::size_t m = 1; m < s.frames.size(); ++m) {
    const Translation t =
        estimate_translation(s.frames[0], s.frames[m], &s.fence.mask, &s.fence.mask);
    estimated.push_back({t.dx, t.dy});
    worst = std::max({worst, std::abs(t.dx - s.shifts[m].dx), std::abs(t.dy - s.shifts[m].dy)});
  }
  const RunOutcome e = reconstruct(s, estimated);
  report(3, worst <= kMaxShiftError && k.psnr - e.psnr <= kMaxEstimatedLoss,
         fmt("estimated motion: worst shift error %.3f px (<= 0.5), PSNR %.2f dB, loss %.2f dB "
             "(<= 1)",
             worst, e.psnr, k.psnr - e.psnr));
}

// ---------------------------------------------------------------- detector

void detector_criteria() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto train_scenes = make_training_scenes(kTrainScenes, 256, 256, 0, 0);
  const TexelDataset train_set =
      augment(build_texel_dataset(train_scenes, kPositives, kNegatives, 0));

  TrainConfig tc;
  tc.epochs = 120;
  tc.batch_size = 50;
  tc.learning_rate = 0.5;
  tc.seed = 0;
  const TrainResult trained = train(init_model(0), train_set, tc);
  const auto& mse = trained.report.per_epoch_mse;

  std::vector<Image> train_frames;
  std::vector<std::vector<Point2>> train_truth;
  for (const Scene& scene : train_scenes) {
    train_frames.push_back(scene.image);
    train_truth.push_back(scannable_points(scene.fence.joints, 256, 256));
  }
  const ThresholdChoice choice =
      select_threshold(trained.model, train_frames, train_truth,
                       {std::begin(kThresholdGrid), std::end(kThresholdGrid)}, {}, kTolerance);

  const auto held = make_training_scenes(kHeldOutScenes, 256, 256, 0, 1);
  const double held_acc =
      accuracy(trained.model, build_texel_dataset(held, kPositives / 2, kNegatives / 2, 1));
  ScanParams sp;
  sp.threshold = choice.threshold;
  std::size_t matches = 0, predicted = 0, truth_total = 0;
  for (const Scene& scene : held) {
    const JointDetections det = scan(trained.model, scene.image, sp);
    const auto truth = scannable_points(scene.fence.joints, 256, 256);
    const DetectionScore sc = eval_detection(det.joints, truth, kTolerance);
    matches += sc.matches;
    predicted += det.joints.size();
    truth_total += truth.size();
  }
  const double p = predicted ? double(matches) / predicted : 1.0;
  const double r = truth_total ? double(matches) / truth_total : 1.0;
  const double f = f_measure(p, r);
  report(4,
         train_set.size() >= kMinTrainingTexels && f >= kMinF && held_acc >= kMinAccuracy,
         fmt("%.0f training texels, threshold %.2f (training F %.3f), held-out joints P %.3f",
             double(train_set.size()), choice.threshold, choice.score.f_measure, p) +
             fmt(" R %.3f", r) +
             fmt(" F %.3f (>= 0.85), held-out texel accuracy %.4f (>= 0.95), %.0f s", f,
                 held_acc, seconds_since(t0)));

  const double e1 = mse.front(), e50 = mse[kCurveEpoch - 1], last = mse.back();
  report(5, e50 < kCurveRatio * e1 && last <= kMaxFinalMse,
         fmt("MSE epoch 1 %.4f, epoch 50 %.4f (ratio %.3f < 0.5), final %.4f (<= 0.05)", e1, e50,
             e50 / e1, last));
}

// ---------------------------------------------------------------- numerics

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

bool gate_gradient(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    const CnnModel model = init_model(200 + trial);
    Image img(32, 32, 1);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) img.set(0, y, x, u(rng));
    const Patch patch{img, {16, 16}};
    const TexelLabel label = trial % 2 ? TexelLabel::joint : TexelLabel::non_joint;
    worst = std::max(worst, gradient_check(model, patch, label, kGradCheckEps, trial, 2570));
  }
  const double t = seconds_since(t0);
  detail = fmt("gradient check max rel err %.2e (< 1e-3, %.1f s)", worst, t);
  return worst < kGradCheckTol && t < kGateSeconds;
}

bool gate_warp_adjoint(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(102);
  std::uniform_int_distribution<int> side(2, 64);
  std::uniform_real_distribution<double> disp(-6.0, 6.0);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int w = side(rng), h = side(rng);
    MotionField motion;
    if (trial % 2 == 0) {
      motion = MotionField::translation(disp(rng), disp(rng));
    } else {
      std::vector<double> fu(std::size_t(w) * h), fv(fu.size());
      for (std::size_t i = 0; i < fu.size(); ++i) fu[i] = disp(rng), fv[i] = disp(rng);
      motion = MotionField::dense(w, h, fu, fv);
    }
    const WarpOperator op = build_warp(motion, w, h);
    const auto x = random_vector(rng, op.pixels()), y = random_vector(rng, op.pixels());
    const double lhs = dot(apply_warp(op, x), y), rhs = dot(x, apply_warp_adjoint(op, y));
    worst = std::max(worst, std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-300}));
  }
  const double t = seconds_since(t0);
  detail = fmt("warp adjoint max rel err %.2e (<= 1e-10, %.1f s)", worst, t);
  return worst <= kAdjointTol && t < kGateSeconds;
}

bool gate_grad_div(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(103);
  std::uniform_int_distribution<int> side(1, 64), chans(1, 3);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int w = side(rng), h = side(rng), c = chans(rng);
    const std::size_t n = std::size_t(w) * h * c;
    const auto x = random_vector(rng, n);
    GradientField g{w, h, c, random_vector(rng, n), random_vector(rng, n)};
    const GradientField gx = grad(x, w, h, c);
    const double lhs = dot(gx.gx, g.gx) + dot(gx.gy, g.gy);
    const double rhs = -dot(x, div(g));
    worst = std::max(worst, std::abs(lhs - rhs) / std::max({std::abs(lhs), std::abs(rhs), 1e-300}));
  }
  const double t = seconds_since(t0);
  detail = fmt("grad/div adjoint max rel err %.2e (<= 1e-10, %.1f s)", worst, t);
  return worst <= kAdjointTol && t < kGateSeconds;
}

bool gate_shrink(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(104);
  std::uniform_real_distribution<double> uv(-2.0, 2.0), ut(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const double v = uv(rng), theta = ut(rng);
    // argmin_z theta |z| + (z - v)^2 / 2 over a grid spanning [-2, 2].
    double best_z = 0.0, best = 1e300;
    for (long i = -20000; i <= 20000; ++i) {
      const double z = i * kProxGrid;
      const double val = theta * std::abs(z) + 0.5 * (z - v) * (z - v);
      if (val < best) best = val, best_z = z;
    }
    worst = std::max(worst, std::abs(shrink(v, theta) - best_z));
  }
  const double t = seconds_since(t0);
  detail = fmt("shrink vs brute-force prox max err %.2e (<= 1e-4, %.1f s)", worst, t);
  return worst <= kProxGrid && t < kGateSeconds;
}

bool gate_monotone(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(105);
  std::uniform_int_distribution<int> side(8, 40);
  std::uniform_real_distribution<double> disp(-3.0, 3.0), unit(0.0, 1.0);
  int violations = 0;
  std::size_t steps = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int w = side(rng), h = side(rng), c = trial % 2 ? 3 : 1;
    std::vector<Observation> obs;
    for (int m = 0; m < 3; ++m) {
      Image frame(w, h, c);
      for (int k = 0; k < c; ++k)
        for (int y = 0; y < h; ++y)
          for (int x = 0; x < w; ++x) frame.set(k, y, x, unit(rng));
      FenceMask mask(w, h);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) mask.set(x, y, unit(rng) < 0.3);
      const auto motion = m == 0 ? MotionField::translation(0, 0)
                                 : MotionField::translation(disp(rng), disp(rng));
      obs.push_back(make_observation(frame, mask, build_warp(motion, w, h)));
    }
    Image init(w, h, c);
    for (int k = 0; k < c; ++k)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) init.set(k, y, x, unit(rng));
    SplitState state = init_state(init);
    for (std::size_t i = 0; i < state.d.size(); ++i) {
      state.d.gx[i] = unit(rng) - 0.5, state.d.gy[i] = unit(rng) - 0.5;
      state.b.gx[i] = 0.2 * (unit(rng) - 0.5), state.b.gy[i] = 0.2 * (unit(rng) - 0.5);
    }
    SolverParams params;
    params.lambda = std::pow(10.0, -5.0 + 5.0 * unit(rng));
    params.tol = 0.0;
    std::vector<double> f;
    x_update(state, obs, params, &f);
    for (std::size_t i = 1; i < f.size(); ++i) violations += f[i] > f[i - 1];
    steps += f.size() - 1;
  }
  const double t = seconds_since(t0);
  detail = fmt("x_update F non-increasing: %.0f violations over %.0f steps (%.1f s)",
               double(violations), double(steps), t);
  return violations == 0 && steps > 0 && t < kGateSeconds;
}

void numerical_criteria() {
  bool all = true;
  std::string parts;
  for (auto gate : {gate_gradient, gate_warp_adjoint, gate_grad_div, gate_shrink, gate_monotone}) {
    std::string detail;
    const bool ok = gate(detail);
    all = all && ok;
    parts += (parts.empty() ? "" : "; ") + detail + (ok ? "" : " [failed]");
  }
  report(6, all, parts);
}

void f_measure_criterion() {
  const double f1 = f_measure(0.84, 0.96), f2 = f_measure(0.94, 0.96);
  const bool exact = std::abs(f1 - 0.8960) < 5e-5 && std::abs(f2 - 0.9499) < 5e-5;
  const bool rounded = std::lround(f1 * 100) == 89 && std::lround(f2 * 100) == 95;
  report(7, exact && rounded,
         fmt("F(0.84, 0.96) = %.4f rounds to %.2f (expected 0.89), F(0.94, 0.96) = %.4f rounds to "
             "%.2f (expected 0.95)",
             f1, std::lround(f1 * 100) / 100.0, f2, std::lround(f2 * 100) / 100.0));
}

// ---------------------------------------------------------------- determinism

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (code != 0) std::fprintf(stderr, "command failed: %s\n", err.str().c_str());
  return code == 0;
}

void determinism_criterion() {
  const fs::path root = fs::temp_directory_path() / "defence_acceptance";
  fs::remove_all(root);
  bool ok = true;
  std::vector<std::string> compared;
  auto same = [&](const fs::path& a, const fs::path& b) {
    const bool eq = fs::exists(a) && fs::exists(b) && slurp(a) == slurp(b);
    if (!eq) std::fprintf(stderr, "outputs differ: %s\n", a.filename().c_str());
    ok = ok && eq;
    compared.push_back(a.filename().string());
  };
  for (const char* run : {"a", "b"}) {
    const std::string dir = (root / run).string();
    ok = ok && run_cli({"--quiet", "--seed", "7", "--out", dir + "/synth", "synth"});
    ok = ok && run_cli({"--quiet", "--seed", "7", "--out", dir + "/train", "train", "--epochs",
                        "5", "--scenes", "2", "--positives", "10", "--negatives", "20",
                        "--holdout-scenes", "1"});
    ok = ok && run_cli({"--quiet", "--out", dir + "/detect", "detect", "--model",
                        dir + "/train/model.txt", "--input", dir + "/synth"});
    ok = ok && run_cli({"--quiet", "--out", dir + "/defence", "defence", "--input",
                        dir + "/synth"});
  }
  if (ok) {
    const fs::path a = root / "a", b = root / "b";
    for (const char* f : {"clean.png", "frame_000.png", "frame_003.png", "mask_002.png",
                          "joints.txt", "motion.txt"})
      same(a / "synth" / f, b / "synth" / f);
    for (const char* f : {"model.txt", "mse.csv"}) same(a / "train" / f, b / "train" / f);
    for (const char* f : {"mask_000.png", "mask_003.png", "joints_001.txt"})
      same(a / "detect" / f, b / "detect" / f);
    for (const char* f : {"defenced.png", "trace.csv", "motion_estimated.txt"})
      same(a / "defence" / f, b / "defence" / f);
  }
  fs::remove_all(root);
  report(8, ok, fmt("synth/train/detect/defence reruns byte-identical across %.0f files",
                    double(compared.size())));
}

}  // namespace

int main() {
  defencing_criteria();
  detector_criteria();
  numerical_criteria();
  f_measure_criterion();
  determinism_criterion();
  std::printf("%d criteria failed, %d of them known unattainable\n", failures + known_failures,
              known_failures);
  return failures == 0 ? 0 : 1;
}
