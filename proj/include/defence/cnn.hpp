#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "defence/fence_synth.hpp"
#include "defence/image.hpp"

namespace defence {

/// conv(conv1_maps, kernel) -> meanpool(pool) -> conv(conv2_maps, kernel,
/// fully connected across input maps) -> meanpool(pool) -> fc(classes).
/// Sigmoid after both convolutions and the output layer.
struct CnnArch {
  int input_side = 32;
  int conv1_maps = 6;
  int conv2_maps = 12;
  int kernel = 5;
  int pool = 2;
  int classes = 2;

  int conv1_side() const { return input_side - kernel + 1; }
  int pool1_side() const { return conv1_side() / pool; }
  int conv2_side() const { return pool1_side() - kernel + 1; }
  int pool2_side() const { return conv2_side() / pool; }
  int flat_size() const { return conv2_maps * pool2_side() * pool2_side(); }

  std::size_t conv1_weights() const { return std::size_t(conv1_maps) * kernel * kernel; }
  std::size_t conv2_weights() const {
    return std::size_t(conv2_maps) * conv1_maps * kernel * kernel;
  }
  std::size_t fc_weights() const { return std::size_t(classes) * flat_size(); }
  std::size_t parameter_count() const {
    return conv1_weights() + conv1_maps + conv2_weights() + conv2_maps +
           fc_weights() + classes;
  }

  /// Throws if the layer sizes do not divide cleanly.
  void validate() const;
  std::string describe() const;

  friend bool operator==(const CnnArch&, const CnnArch&) = default;
};

/// All learnable parameters live in one buffer, in the canonical file order:
/// conv1 kernels, conv1 biases, conv2 kernels, conv2 biases, fc weights,
/// fc biases.
class CnnModel {
 public:
  CnnModel() : CnnModel(CnnArch{}) {}
  explicit CnnModel(const CnnArch& arch);

  const CnnArch& arch() const { return arch_; }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  struct Offsets {
    std::size_t conv1_w, conv1_b, conv2_w, conv2_b, fc_w, fc_b, end;
  };
  Offsets offsets() const;

  friend bool operator==(const CnnModel&, const CnnModel&) = default;

 private:
  CnnArch arch_;
  std::vector<double> params_;
};

/// Uniform weights in [-a, a] with a = sqrt(6 / (fan_in + fan_out)); zero biases.
CnnModel init_model(std::uint64_t seed, const CnnArch& arch = {});

struct Scores {
  double joint = 0.0;
  double non_joint = 0.0;
};

/// Intermediate activations kept for backpropagation.
struct Activations {
  std::vector<double> input;
  std::vector<double> conv1;
  std::vector<double> pool1;
  std::vector<double> conv2;
  std::vector<double> pool2;  // also the flattened fc input
  std::vector<double> output;
  // Backpropagation scratch.
  std::vector<double> d_conv2;
  std::vector<double> d_pool1;
  std::vector<double> d_conv1;
};

/// In-place per-patch contrast normalization applied to every network input:
/// subtract the mean, divide by (standard deviation + 1e-3).
void standardize(std::span<double> values);

/// Runs the network on an already standardized input.
void forward(const CnnModel& model, std::span<const double> input, Activations& act);
/// Standardizes the patch, then runs the network.
Scores forward(const CnnModel& model, const Patch& patch);

/// One-hot target: joint -> (1, 0), non-joint -> (0, 1).
std::array<double, 2> target_for(TexelLabel label);

/// Loss 0.5 * sum (o - t)^2 for one input; gradient is accumulated into
/// `grad` (same layout as the parameters). Returns the loss.
double accumulate_gradient(const CnnModel& model, std::span<const double> input,
                           TexelLabel label, std::span<double> grad,
                           Activations& scratch);

double sample_loss(const CnnModel& model, std::span<const double> input,
                   TexelLabel label);

struct TrainConfig {
  int epochs = 500;
  int batch_size = 50;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
  // Abort when an epoch MSE exceeds this multiple of the first epoch.
  double divergence_factor = 10.0;
};

struct TrainReport {
  std::vector<double> per_epoch_mse;
  double final_mse = 0.0;
  double wall_time = 0.0;
};

struct TrainResult {
  CnnModel model;
  TrainReport report;
};

using EpochCallback = std::function<void(int epoch, double mse)>;

/// Mini-batch SGD on the batch-averaged loss; the sample order is reshuffled
/// every epoch from the seeded generator.
TrainResult train(const CnnModel& model, const TexelDataset& dataset,
                  const TrainConfig& config, const EpochCallback& on_epoch = {});

/// Standardized single-channel inputs for the network, converting RGB patches
/// to luminance.
std::vector<std::vector<double>> network_inputs(const TexelDataset& dataset,
                                                int input_side = 32);

/// Fraction of samples whose argmax class matches the label.
double accuracy(const CnnModel& model, const TexelDataset& dataset);

using GradientHook = std::function<void(const CnnModel&, std::span<double>)>;

/// Max relative error between the analytic gradient and central differences
/// over a seeded subset of `subset` parameters. `hook` may rewrite the
/// analytic gradient before comparison.
double gradient_check(const CnnModel& model, const Patch& patch, TexelLabel label,
                      double epsilon, std::uint64_t seed = 0,
                      std::size_t subset = 100, const GradientHook& hook = {});

inline constexpr const char* kModelMagic = "DEFENCE-CNN v1";

void save_model(const CnnModel& model, const std::filesystem::path& path);
CnnModel load_model(const std::filesystem::path& path);

}  // namespace defence
