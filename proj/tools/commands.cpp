#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "defence/cnn.hpp"
#include "defence/detector.hpp"
#include "defence/error.hpp"
#include "defence/fence_synth.hpp"
#include "defence/fusion.hpp"
#include "defence/image_io.hpp"
#include "defence/metrics.hpp"
#include "defence/motion.hpp"

namespace defence::cli {

namespace fs = std::filesystem;

namespace {

constexpr const char* kModule = "cli";

struct Global {
  std::uint64_t seed = 0;
  std::string config;
  std::string out = ".";
  bool quiet = false;
  bool dry_run = false;
};

struct SynthArgs {
  int width = 256;
  int height = 256;
  int channels = 3;
  double spacing = 32.0;
  double angle = 10.0;
  double thickness = 4.0;
  std::string kind = "rect";
  double color = 0.85;
  double texture = 0.02;
  std::string shifts = "-5,-5;2,2;10,10";
};

struct SceneSetArgs {
  int scenes = 10;
  int scene_size = 256;
  int positives = 200;
  int negatives = 400;
  bool no_augment = false;
  bool no_flips = false;
};

struct TrainArgs {
  std::string dataset;
  std::string init_model;
  int epochs = 500;
  int batch = 50;
  double lr = 0.5;
  int holdout_scenes = 5;
  int holdout_positives = 100;
  int holdout_negatives = 200;
  bool calibrate = false;
};

struct DetectArgs {
  std::string model;
  std::string input;
  std::vector<std::string> frames;
  double threshold = 0.5;
  int stride = 4;
  double cluster_radius = 8.0;
  double link_radius = 0.0;
  double thickness = 0.0;
  std::string edits;
  std::vector<std::string> eval;
  double tol = 8.0;
};

struct DefenceArgs {
  std::string input;
  std::vector<std::string> frames;
  std::vector<std::string> masks;
  std::string model;
  bool known_motion = false;
  std::string motion;
  std::vector<std::string> flow;
  int reference = 0;
  double mu = 0.01;
  double lambda = 1e-5;
  int outer = 50;
  int inner = 20;
  std::string step_mode = "backtracking";
  double step = 1.0;
  double tol = 1e-4;
  std::string threshold_mode = "derived";
  double shrink_threshold = 0.0;
  std::string init = "fused";
  std::string psnr_ref;
  // Detection parameters used when masks come from the model.
  double det_threshold = 0.5;
  int stride = 4;
  double wire_thickness = 0.0;
  bool reference_mask = false;
};

struct EvalArgs {
  std::string image;
  std::string ref;
  std::string joints;
  std::string truth;
  double tol = 8.0;
  int margin = 16;
  int width = 0;
  int height = 0;
};

std::string frame_name(const char* stem, std::size_t i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%03zu%s", stem, i, ext);
  return buf;
}

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(kModule, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void require_file(const std::string& path, const char* what) {
  if (!fs::is_regular_file(path)) {
    throw IoError(kModule, std::string(what) + " not found: " + path);
  }
}

// Numbered files `<stem>_NNN.png` in increasing index order.
std::vector<std::string> numbered_files(const fs::path& dir, const std::string& stem) {
  std::vector<std::string> out;
  for (std::size_t i = 0;; ++i) {
    const fs::path p = dir / frame_name(stem.c_str(), i, ".png");
    if (!fs::is_regular_file(p)) break;
    out.push_back(p.string());
  }
  return out;
}

std::vector<std::string> resolve_frames(const std::string& input,
                                        const std::vector<std::string>& frames) {
  if (!frames.empty()) {
    for (const auto& f : frames) require_file(f, "frame");
    return frames;
  }
  if (input.empty()) throw Error(kModule, "no frames given (use --frames or --input)");
  auto found = numbered_files(input, "frame");
  if (found.empty()) throw IoError(kModule, "no frame_NNN.png files in " + input);
  return found;
}

LatticeKind parse_kind(const std::string& kind) {
  if (kind == "rect" || kind == "rectangular") return LatticeKind::rectangular;
  if (kind == "diamond") return LatticeKind::diamond;
  throw GeometryError(kModule, "unknown lattice kind: " + kind);
}

struct Detection {
  JointDetections joints;
  FenceMask mask;
  double thickness = 0.0;
};

Detection detect_frame(const CnnModel& model, const Image& frame, const ScanParams& scan_params,
                       double link_radius, double thickness) {
  Detection det;
  det.joints = scan(model, frame, scan_params);
  ConnectParams cp;
  cp.link_radius = link_radius;
  cp.extend_to_border = true;
  det.thickness = thickness > 0.0
                      ? thickness
                      : estimate_wire_thickness(frame, det.joints.joints, cp);
  cp.wire_thickness = det.thickness;
  det.mask = connect_joints(det.joints.joints, cp, frame.width(), frame.height()).mask;
  return det;
}

const std::vector<double> kThresholdGrid{0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.98};

TexelDataset synthetic_dataset(const SceneSetArgs& a, std::uint64_t seed, std::uint64_t stream,
                               int scenes, int positives, int negatives, bool augmented) {
  if (scenes < 1) throw Error(kModule, "need at least one scene");
  if (positives < 1 || negatives < 1) throw Error(kModule, "texel counts must be positive");
  const auto set = make_training_scenes(static_cast<std::size_t>(scenes), a.scene_size,
                                        a.scene_size, seed, stream);
  TexelDataset base = build_texel_dataset(set, static_cast<std::size_t>(positives),
                                          static_cast<std::size_t>(negatives),
                                          seed + stream);
  return augmented ? augment(base, !a.no_flips) : base;
}

// Writes every option of the subcommand and the global flags as key=value.
void write_effective_config(const CLI::App& app, const CLI::App& sub, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(kModule, "cannot write " + path.string());
  out << "# " << sub.get_name() << "\n";
  auto emit = [&](const CLI::App& a) {
    for (const CLI::Option* opt : a.get_options()) {
      const auto& names = opt->get_lnames();
      if (names.empty()) continue;
      const std::string& key = names.front();
      if (key == "help" || key == "config" || key == "dry-run") continue;
      std::string value;
      if (opt->get_type_size_max() == 0) {
        value = opt->count() > 0 && opt->as<bool>() ? "true" : "false";
      } else if (opt->count() > 0) {
        const auto& res = opt->results();
        for (std::size_t i = 0; i < res.size(); ++i) value += (i ? "," : "") + res[i];
      } else {
        value = opt->get_default_str();
      }
      out << key << "=" << value << "\n";
    }
  };
  emit(app);
  emit(sub);
  if (!out) throw IoError(kModule, "failed writing " + path.string());
}

class Runner {
 public:
  Runner(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

  int run(std::vector<std::string> args);

 private:
  void build();
  void info(const std::string& line) {
    if (!g_.quiet) out_ << line << "\n";
  }
  void begin(const CLI::App& sub);

  void synth();
  void dataset();
  void train();
  void detect();
  void defence_cmd();
  void eval();

  std::ostream& out_;
  std::ostream& err_;
  CLI::App app_{"Multi-frame image de-fencing", "defence"};
  CLI::App* active_ = nullptr;
  Global g_;
  SynthArgs synth_;
  SceneSetArgs scenes_;
  TrainArgs train_;
  DetectArgs detect_;
  DefenceArgs defence_;
  EvalArgs eval_;
};

void Runner::build() {
  app_.option_defaults()->always_capture_default();
  app_.require_subcommand(1);
  app_.fallthrough();
  app_.add_option("--seed", g_.seed, "Random seed");
  app_.add_option("--config", g_.config, "Flat key=value file; flags override it");
  app_.add_option("--out", g_.out, "Output directory");
  app_.add_flag("--quiet", g_.quiet, "Suppress progress output");
  app_.add_flag("--dry-run", g_.dry_run, "Validate arguments and write nothing");

  auto* s = app_.add_subcommand("synth", "Synthetic fenced frame sequence");
  s->add_option("--width", synth_.width);
  s->add_option("--height", synth_.height);
  s->add_option("--channels", synth_.channels)->check(CLI::IsMember({1, 3}));
  s->add_option("--spacing", synth_.spacing);
  s->add_option("--angle", synth_.angle, "Degrees");
  s->add_option("--thickness", synth_.thickness);
  s->add_option("--kind", synth_.kind)->check(CLI::IsMember({"rect", "diamond"}));
  s->add_option("--fence-color", synth_.color);
  s->add_option("--texture", synth_.texture);
  s->add_option("--shifts", synth_.shifts, "dx,dy;dx,dy;... for the non-reference frames");
  s->callback([this] { synth(); });

  auto add_scene_opts = [this](CLI::App* c) {
    c->add_option("--scenes", scenes_.scenes);
    c->add_option("--scene-size", scenes_.scene_size);
    c->add_option("--positives", scenes_.positives, "Joint texels before augmentation");
    c->add_option("--negatives", scenes_.negatives, "Non-joint texels before augmentation");
    c->add_flag("--no-augment", scenes_.no_augment);
    c->add_flag("--no-flips", scenes_.no_flips);
  };
  auto* d = app_.add_subcommand("dataset", "Synthetic labelled texel dataset");
  add_scene_opts(d);
  d->callback([this] { dataset(); });

  auto* t = app_.add_subcommand("train", "Train the texel classifier");
  add_scene_opts(t);
  t->add_option("--dataset", train_.dataset, "Dataset directory (default: synthesize)");
  t->add_option("--init-model", train_.init_model, "Start from this model");
  t->add_option("--epochs", train_.epochs);
  t->add_option("--batch", train_.batch);
  t->add_option("--lr", train_.lr);
  t->add_option("--holdout-scenes", train_.holdout_scenes);
  t->add_option("--holdout-positives", train_.holdout_positives);
  t->add_option("--holdout-negatives", train_.holdout_negatives);
  t->add_flag("--calibrate", train_.calibrate,
              "Pick a detection threshold on the training scenes (threshold.txt)");
  t->callback([this] { train(); });

  auto* k = app_.add_subcommand("detect", "Detect fence joints and masks");
  k->add_option("--model", detect_.model)->required();
  k->add_option("--input", detect_.input, "Directory with frame_NNN.png");
  k->add_option("--frames", detect_.frames)->delimiter(',');
  k->add_option("--threshold", detect_.threshold);
  k->add_option("--stride", detect_.stride);
  k->add_option("--cluster-radius", detect_.cluster_radius);
  k->add_option("--link-radius", detect_.link_radius, "0 = from joint spacing");
  k->add_option("--thickness", detect_.thickness, "Wire thickness, 0 = estimate");
  k->add_option("--edits", detect_.edits, "Manual mask edit file");
  k->add_option("--eval", detect_.eval, "Ground-truth joints per frame")->delimiter(',');
  k->add_option("--tol", detect_.tol);
  k->callback([this] { detect(); });

  auto* f = app_.add_subcommand("defence", "Reconstruct the background behind the fence");
  f->add_option("--input", defence_.input, "Directory with frame/mask/motion files");
  f->add_option("--frames", defence_.frames)->delimiter(',');
  f->add_option("--masks", defence_.masks)->delimiter(',');
  f->add_option("--model", defence_.model, "Detect masks with this model");
  f->add_flag("--known-motion", defence_.known_motion);
  f->add_option("--motion", defence_.motion, "Per-frame dx,dy file (default input/motion.txt)");
  f->add_option("--flow", defence_.flow, "Flow file per non-reference frame")->delimiter(',');
  f->add_option("--reference", defence_.reference);
  f->add_option("--mu", defence_.mu);
  f->add_option("--lambda", defence_.lambda);
  f->add_option("--outer", defence_.outer);
  f->add_option("--inner", defence_.inner);
  f->add_option("--step-mode", defence_.step_mode)
      ->check(CLI::IsMember({"backtracking", "fixed"}));
  f->add_option("--step", defence_.step);
  f->add_option("--tol", defence_.tol);
  f->add_option("--threshold-mode", defence_.threshold_mode)
      ->check(CLI::IsMember({"derived", "paper", "explicit"}));
  f->add_option("--shrink-threshold", defence_.shrink_threshold);
  f->add_option("--init", defence_.init)->check(CLI::IsMember({"fused", "masked-mean"}));
  f->add_option("--psnr-ref", defence_.psnr_ref, "Clean image for PSNR/SSIM");
  f->add_option("--det-threshold", defence_.det_threshold);
  f->add_option("--stride", defence_.stride);
  f->add_option("--wire-thickness", defence_.wire_thickness);
  f->add_flag("--reference-mask", defence_.reference_mask,
              "Detect on the reference frame only and reuse its mask (static fence)");
  f->callback([this] { defence_cmd(); });

  auto* e = app_.add_subcommand("eval", "Score an image or a joint set");
  e->add_option("--image", eval_.image);
  e->add_option("--ref", eval_.ref);
  e->add_option("--joints", eval_.joints);
  e->add_option("--truth", eval_.truth);
  e->add_option("--tol", eval_.tol);
  e->add_option("--margin", eval_.margin, "Ignore truth joints this close to the border");
  e->add_option("--width", eval_.width, "Frame width for the far margin, 0 = unknown");
  e->add_option("--height", eval_.height, "Frame height for the far margin, 0 = unknown");
  e->callback([this] { eval(); });
}

void Runner::begin(const CLI::App& sub) {
  active_ = const_cast<CLI::App*>(&sub);
  if (g_.dry_run) return;
  fs::create_directories(g_.out);
  write_effective_config(app_, sub, fs::path(g_.out) / (sub.get_name() + ".cfg"));
}

int Runner::run(std::vector<std::string> args) {
  build();
  // Config values go right after the subcommand so anything typed by the user
  // is parsed later and wins.
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config_path = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config_path = args[i].substr(9);
  }
  if (!config_path.empty()) {
    std::vector<std::pair<std::string, std::string>> entries;
    try {
      entries = parse_config(read_text(config_path));
    } catch (const std::exception& ex) {
      err_ << "error: " << ex.what() << "\n";
      return 2;
    }
    auto given = [&](const std::string& key) {
      const std::string flag = "--" + key;
      return std::any_of(args.begin(), args.end(), [&](const std::string& a) {
        return a == flag || a.rfind(flag + "=", 0) == 0;
      });
    };
    std::vector<std::string> injected;
    for (const auto& [key, value] : entries) {
      if (!given(key)) injected.push_back("--" + key + "=" + value);
    }
    auto sub = std::find_if(args.begin(), args.end(), [&](const std::string& a) {
      return app_.get_subcommand_no_throw(a) != nullptr;
    });
    if (sub != args.end()) args.insert(sub + 1, injected.begin(), injected.end());
  }
  std::reverse(args.begin(), args.end());
  try {
    app_.parse(args);
  } catch (const CLI::ParseError& e) {
    return app_.exit(e, out_, err_);
  } catch (const std::exception& e) {
    err_ << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

// The reference frame is shown unshifted; frame i > 0 uses shifts[i - 1].
void Runner::synth() {
  FenceParams p;
  p.width = synth_.width;
  p.height = synth_.height;
  p.spacing = synth_.spacing;
  p.angle = synth_.angle;
  p.wire_thickness = synth_.thickness;
  p.kind = parse_kind(synth_.kind);
  p.color = std::vector<double>(static_cast<std::size_t>(synth_.channels), synth_.color);
  p.texture_sigma = synth_.texture;
  p.seed = g_.seed;
  std::vector<Offset> shifts{{0, 0}};
  for (Offset o : parse_shifts(synth_.shifts)) shifts.push_back(o);
  const FenceLayer fence = generate_fence(p);
  const Image clean = generate_background(p.width, p.height, synth_.channels, g_.seed + 1);
  for (Offset o : shifts) {
    if (std::abs(o.dx) * 4 >= p.width || std::abs(o.dy) * 4 >= p.height) {
      throw GeometryError(kModule, "shift too large for the frame size");
    }
  }
  info("fence coverage " + format("%.4f", double(fence.mask.count()) / fence.mask.size()));
  begin(*app_.get_subcommand("synth"));
  if (g_.dry_run) return;

  const fs::path dir = g_.out;
  save_image(clean, dir / "clean.png");
  write_points(fence.joints, dir / "joints.txt");
  std::vector<Point2> motion;
  for (std::size_t i = 0; i < shifts.size(); ++i) {
    // Static fence over a moving scene: only the background is shifted.
    const Composite c = composite(shift_image(clean, shifts[i]), fence);
    save_image(c.frame, dir / frame_name("frame", i, ".png"));
    save_mask(c.mask, dir / frame_name("mask", i, ".png"));
    write_points(fence.joints, dir / frame_name("joints", i, ".txt"));
    motion.push_back({double(shifts[i].dx), double(shifts[i].dy)});
  }
  write_points(motion, dir / "motion.txt");
  info("wrote " + std::to_string(shifts.size()) + " frames to " + dir.string());
}

void Runner::dataset() {
  const auto& sub = *app_.get_subcommand("dataset");
  if (g_.dry_run) {
    begin(sub);
    return;
  }
  TexelDataset data = synthetic_dataset(scenes_, g_.seed, 0, scenes_.scenes, scenes_.positives,
                                        scenes_.negatives, !scenes_.no_augment);
  begin(sub);
  save_dataset(data, g_.out);
  info("wrote " + std::to_string(data.size()) + " texels (" +
       std::to_string(data.count(TexelLabel::joint)) + " joints)");
}

void Runner::train() {
  const auto& sub = *app_.get_subcommand("train");
  TrainConfig tc;
  tc.epochs = train_.epochs;
  tc.batch_size = train_.batch;
  tc.learning_rate = train_.lr;
  tc.seed = g_.seed;
  if (tc.epochs < 1 || tc.batch_size < 1 || !(tc.learning_rate > 0.0)) {
    throw Error(kModule, "epochs, batch and lr must be positive");
  }
  if (!train_.dataset.empty()) require_file((fs::path(train_.dataset) / "manifest.txt").string(),
                                            "dataset manifest");
  if (!train_.init_model.empty()) require_file(train_.init_model, "model");
  if (train_.calibrate && !train_.dataset.empty()) {
    throw Error(kModule, "--calibrate needs synthesized training scenes, not --dataset");
  }
  begin(sub);
  if (g_.dry_run) return;

  TexelDataset data = train_.dataset.empty()
                          ? synthetic_dataset(scenes_, g_.seed, 0, scenes_.scenes,
                                              scenes_.positives, scenes_.negatives,
                                              !scenes_.no_augment)
                          : load_dataset(train_.dataset);
  if (data.size() == 0) throw Error(kModule, "empty dataset");
  info("training on " + std::to_string(data.size()) + " texels");
  const CnnModel start =
      train_.init_model.empty() ? init_model(g_.seed) : load_model(train_.init_model);
  const TrainResult result = defence::train(start, data, tc, [this](int epoch, double mse) {
    if (epoch == 1 || epoch % 10 == 0) info("epoch " + std::to_string(epoch) + " mse " + format("%.6f", mse));
  });

  const fs::path dir = g_.out;
  save_model(result.model, dir / "model.txt");
  {
    std::ofstream csv(dir / "mse.csv", std::ios::binary);
    csv << "epoch,mse\n";
    const auto& mse = result.report.per_epoch_mse;
    for (std::size_t i = 0; i < mse.size(); ++i) csv << (i + 1) << "," << format("%.9g", mse[i]) << "\n";
    if (!csv) throw IoError(kModule, "failed writing mse.csv");
  }
  info("final mse " + format("%.6f", result.report.final_mse));
  info("training accuracy " + format("%.4f", accuracy(result.model, data)));
  if (train_.holdout_scenes > 0) {
    const TexelDataset held = synthetic_dataset(scenes_, g_.seed, 1, train_.holdout_scenes,
                                                train_.holdout_positives,
                                                train_.holdout_negatives, false);
    info("held-out accuracy " + format("%.4f", accuracy(result.model, held)));
  }
  if (train_.calibrate) {
    const auto set = make_training_scenes(static_cast<std::size_t>(scenes_.scenes),
                                          scenes_.scene_size, scenes_.scene_size, g_.seed, 0);
    std::vector<Image> images;
    std::vector<std::vector<Point2>> truth;
    for (const Scene& s : set) {
      images.push_back(s.image);
      truth.push_back(scannable_points(s.fence.joints, s.image.width(), s.image.height()));
    }
    const ThresholdChoice c = select_threshold(result.model, images, truth, kThresholdGrid);
    std::ofstream t(dir / "threshold.txt", std::ios::binary);
    t << format("%.2f", c.threshold) << "\n";
    if (!t) throw IoError(kModule, "failed writing threshold.txt");
    info("calibrated threshold " + format("%.2f", c.threshold) + " (training F " +
         format("%.3f", c.score.f_measure) + ")");
  }
}

void Runner::detect() {
  const auto& sub = *app_.get_subcommand("detect");
  require_file(detect_.model, "model");
  const auto frames = resolve_frames(detect_.input, detect_.frames);
  if (!detect_.eval.empty() && detect_.eval.size() != frames.size()) {
    throw Error(kModule, "--eval needs one truth file per frame");
  }
  for (const auto& t : detect_.eval) require_file(t, "truth joints");
  std::vector<MaskEdit> edits;
  if (!detect_.edits.empty()) edits = load_edits(detect_.edits);
  ScanParams sp;
  sp.threshold = detect_.threshold;
  sp.stride = detect_.stride;
  sp.cluster_radius = detect_.cluster_radius;
  if (sp.stride < 1) throw GeometryError(kModule, "stride must be at least 1");
  begin(sub);
  if (g_.dry_run) return;

  const CnnModel model = load_model(detect_.model);
  const fs::path dir = g_.out;
  std::size_t windows = 0;
  std::vector<Point2> all_pred, all_truth;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Image frame = load_image(frames[i]);
    Detection det = detect_frame(model, frame, sp, detect_.link_radius, detect_.thickness);
    if (!edits.empty()) det.mask = apply_manual_edits(det.mask, edits);
    save_mask(det.mask, dir / frame_name("mask", i, ".png"));
    write_points(det.joints.joints, dir / frame_name("joints", i, ".txt"));
    windows += det.joints.windows_evaluated;
    info("frame " + std::to_string(i) + ": " + std::to_string(det.joints.windows_evaluated) +
         " windows, " + std::to_string(det.joints.joints.size()) + " joints, wire " +
         format("%.1f", det.thickness) + " px");
    if (!detect_.eval.empty()) {
      const auto truth = scannable_points(read_points(detect_.eval[i]), frame.width(),
                                          frame.height(), model.arch().input_side);
      const DetectionScore s = eval_detection(det.joints.joints, truth, detect_.tol);
      info("frame " + std::to_string(i) + ": precision " + format("%.4f", s.precision) +
           " recall " + format("%.4f", s.recall) + " f " + format("%.4f", s.f_measure));
    }
  }
  info("windows scanned " + std::to_string(windows));
}

void Runner::defence_cmd() {
  const auto& sub = *app_.get_subcommand("defence");
  const auto frame_files = resolve_frames(defence_.input, defence_.frames);
  const std::size_t n = frame_files.size();
  if (defence_.reference < 0 || static_cast<std::size_t>(defence_.reference) >= n) {
    throw Error(kModule, "reference index out of range");
  }
  const std::size_t ref = static_cast<std::size_t>(defence_.reference);

  SolverParams sp;
  sp.mu = defence_.mu;
  sp.lambda = defence_.lambda;
  sp.outer_iters = defence_.outer;
  sp.inner_iters = defence_.inner;
  sp.step_mode = defence_.step_mode == "fixed" ? StepMode::fixed : StepMode::backtracking;
  sp.step = defence_.step;
  sp.tol = defence_.tol;
  sp.threshold_mode = defence_.threshold_mode == "paper"      ? ThresholdMode::paper
                      : defence_.threshold_mode == "explicit" ? ThresholdMode::explicit_value
                                                              : ThresholdMode::derived;
  sp.explicit_threshold = defence_.shrink_threshold;
  sp.validate();

  std::vector<std::string> mask_files = defence_.masks;
  if (mask_files.empty() && defence_.model.empty() && !defence_.input.empty()) {
    mask_files = numbered_files(defence_.input, "mask");
  }
  if (!mask_files.empty() && mask_files.size() != n) {
    throw Error(kModule, "need one mask per frame");
  }
  for (const auto& m : mask_files) require_file(m, "mask");
  if (!defence_.model.empty()) require_file(defence_.model, "model");
  if (defence_.reference_mask && defence_.model.empty()) {
    throw Error(kModule, "--reference-mask needs --model");
  }
  std::string motion_file = defence_.motion;
  if (defence_.known_motion) {
    if (motion_file.empty()) motion_file = (fs::path(defence_.input) / "motion.txt").string();
    require_file(motion_file, "motion file");
  }
  if (!defence_.flow.empty() && defence_.flow.size() != n - 1) {
    throw Error(kModule, "need one flow file per non-reference frame");
  }
  for (const auto& f : defence_.flow) require_file(f, "flow");
  if (!defence_.psnr_ref.empty()) require_file(defence_.psnr_ref, "reference image");
  begin(sub);
  if (g_.dry_run) return;

  std::vector<Image> frames;
  for (const auto& f : frame_files) frames.push_back(load_image(f));
  for (const Image& f : frames) {
    if (!f.same_shape(frames.front())) throw ShapeError(kModule, "frames differ in shape");
  }
  const int w = frames.front().width(), h = frames.front().height();

  std::vector<FenceMask> masks;
  if (!defence_.model.empty()) {
    const CnnModel model = load_model(defence_.model);
    ScanParams scan_params;
    scan_params.threshold = defence_.det_threshold;
    scan_params.stride = defence_.stride;
    if (defence_.reference_mask) {
      const FenceMask m =
          detect_frame(model, frames[ref], scan_params, 0.0, defence_.wire_thickness).mask;
      masks.assign(n, m);
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        masks.push_back(
            detect_frame(model, frames[i], scan_params, 0.0, defence_.wire_thickness).mask);
      }
    }
  } else if (!mask_files.empty()) {
    for (const auto& m : mask_files) masks.push_back(load_mask(m));
  } else {
    masks.assign(n, FenceMask(w, h));
  }
  for (const FenceMask& m : masks) {
    if (m.width() != w || m.height() != h) throw ShapeError(kModule, "mask size differs from frames");
  }

  std::vector<MotionField> motion(n, MotionField::translation(0.0, 0.0));
  if (defence_.known_motion) {
    const auto pts = read_points(motion_file);
    if (pts.size() != n) throw Error(kModule, "motion file needs one line per frame");
    for (std::size_t i = 0; i < n; ++i) {
      motion[i] = MotionField::translation(pts[i].x - pts[ref].x, pts[i].y - pts[ref].y);
    }
  } else if (!defence_.flow.empty()) {
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (i != ref) motion[i] = load_flow(defence_.flow[k++], w, h);
    }
  } else {
    std::vector<Point2> est(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (i == ref) continue;
      const Translation t = estimate_translation(frames[ref], frames[i], &masks[ref], &masks[i]);
      motion[i] = MotionField::translation(t.dx, t.dy);
      est[i] = {t.dx, t.dy};
      info("frame " + std::to_string(i) + ": motion " + format("%.3f", t.dx) + "," +
           format("%.3f", t.dy) + " ncc " + format("%.4f", t.ncc));
    }
    write_points(est, fs::path(g_.out) / "motion_estimated.txt");
  }

  // The reference goes first so the default initialization starts from it.
  std::vector<Observation> obs;
  obs.push_back(make_observation(frames[ref], masks[ref], WarpOperator::identity(w, h)));
  for (std::size_t i = 0; i < n; ++i) {
    if (i == ref) continue;
    obs.push_back(make_observation(frames[i], masks[i], build_warp(motion[i], w, h)));
  }
  const Image init =
      default_init(obs, defence_.init == "masked-mean" ? InitMode::masked_mean : InitMode::fused);
  const DefenceResult result = run_defence(obs, sp, init);

  const fs::path dir = g_.out;
  save_image(result.image, dir / "defenced.png");
  write_trace_csv(result.trace, dir / "trace.csv");
  info(std::to_string(result.trace.rows.size()) + " outer iterations, " +
       std::to_string(result.trace.uncovered_pixels) + " uncovered pixels");
  if (!defence_.psnr_ref.empty()) {
    // Compare what was written, so the numbers match a later `eval`.
    const Image written = load_image(dir / "defenced.png");
    const Image clean = load_image(defence_.psnr_ref);
    out_ << "psnr " << format("%.2f", psnr(written, clean)) << " ssim "
         << format("%.4f", ssim(written, clean)) << "\n";
  }
}

void Runner::eval() {
  const auto& sub = *app_.get_subcommand("eval");
  const bool image_mode = !eval_.image.empty() || !eval_.ref.empty();
  const bool joint_mode = !eval_.joints.empty() || !eval_.truth.empty();
  if (image_mode == joint_mode) throw Error(kModule, "give either --image/--ref or --joints/--truth");
  if (image_mode) {
    require_file(eval_.image, "image");
    require_file(eval_.ref, "reference image");
  } else {
    require_file(eval_.joints, "joints");
    require_file(eval_.truth, "truth joints");
  }
  begin(sub);
  if (g_.dry_run) return;

  std::ofstream report(fs::path(g_.out) / "eval.txt", std::ios::binary);
  if (image_mode) {
    const Image a = load_image(eval_.image), b = load_image(eval_.ref);
    const std::string line = "psnr " + format("%.2f", psnr(a, b)) + " ssim " + format("%.4f", ssim(a, b));
    report << line << "\n";
    out_ << line << "\n";
  } else {
    auto truth = read_points(eval_.truth);
    const double lo = eval_.margin;
    const double hx = eval_.width > 0 ? eval_.width - lo : 1e300;
    const double hy = eval_.height > 0 ? eval_.height - lo : 1e300;
    std::erase_if(truth, [&](const Point2& p) {
      return p.x < lo || p.y < lo || p.x > hx || p.y > hy;
    });
    const DetectionScore s = eval_detection(read_points(eval_.joints), truth, eval_.tol);
    const std::string line = "precision " + format("%.4f", s.precision) + " recall " +
                             format("%.4f", s.recall) + " f " + format("%.4f", s.f_measure);
    report << line << "\n";
    out_ << line << "\n";
  }
  if (!report) throw IoError(kModule, "failed writing eval.txt");
}

}  // namespace

std::vector<Offset> parse_shifts(const std::string& text) {
  std::vector<Offset> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ';')) {
    if (item.find_first_not_of(" \t") == std::string::npos) continue;
    Offset o;
    char comma = 0;
    std::istringstream is(item);
    if (!(is >> o.dx >> comma >> o.dy) || comma != ',' || !(is >> std::ws).eof()) {
      throw FormatError(kModule, "bad shift '" + item + "', expected dx,dy");
    }
    out.push_back(o);
  }
  return out;
}

std::vector<std::pair<std::string, std::string>> parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw FormatError(kModule, "config line " + std::to_string(lineno) + ": expected key=value");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Runner runner(out, err);
  try {
    return runner.run(args);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace defence::cli
