#include "defence/cnn.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "defence/error.hpp"
#include "defence/kernels.hpp"

namespace defence {

namespace {

constexpr const char* kModule = "cnn";

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// out[y][x] += w * in[y+u][x+v] for every kernel tap, "valid" extent.
void correlate_add(const double* in, int in_side, const double* kernel, int k,
                   double* out, int out_side) {
  for (int u = 0; u < k; ++u) {
    for (int v = 0; v < k; ++v) {
      const double w = kernel[u * k + v];
      for (int y = 0; y < out_side; ++y) {
        const double* src = in + (y + u) * in_side + v;
        double* dst = out + y * out_side;
        for (int x = 0; x < out_side; ++x) dst[x] += w * src[x];
      }
    }
  }
}

void mean_pool(const double* in, int in_side, int pool, double* out) {
  const int out_side = in_side / pool;
  const double scale = 1.0 / (pool * pool);
  for (int y = 0; y < out_side; ++y) {
    for (int x = 0; x < out_side; ++x) {
      double acc = 0.0;
      for (int i = 0; i < pool; ++i)
        for (int j = 0; j < pool; ++j) acc += in[(y * pool + i) * in_side + x * pool + j];
      out[y * out_side + x] = acc * scale;
    }
  }
}

}  // namespace

void CnnArch::validate() const {
  if (input_side <= 0 || conv1_maps <= 0 || conv2_maps <= 0 || kernel <= 0 ||
      pool <= 0 || classes != 2) {
    throw ShapeError(kModule, "invalid architecture " + describe());
  }
  if (conv1_side() <= 0 || conv1_side() % pool != 0 || conv2_side() <= 0 ||
      conv2_side() % pool != 0) {
    throw ShapeError(kModule, "layer sizes do not divide evenly: " + describe());
  }
}

std::string CnnArch::describe() const {
  std::ostringstream ss;
  ss << "input=" << input_side << " conv1=" << conv1_maps << " conv2=" << conv2_maps
     << " kernel=" << kernel << " pool=" << pool << " classes=" << classes;
  return ss.str();
}

CnnModel::CnnModel(const CnnArch& arch) : arch_(arch) {
  arch_.validate();
  params_.assign(arch_.parameter_count(), 0.0);
}

CnnModel::Offsets CnnModel::offsets() const {
  Offsets o{};
  o.conv1_w = 0;
  o.conv1_b = o.conv1_w + arch_.conv1_weights();
  o.conv2_w = o.conv1_b + arch_.conv1_maps;
  o.conv2_b = o.conv2_w + arch_.conv2_weights();
  o.fc_w = o.conv2_b + arch_.conv2_maps;
  o.fc_b = o.fc_w + arch_.fc_weights();
  o.end = o.fc_b + arch_.classes;
  return o;
}

CnnModel init_model(std::uint64_t seed, const CnnArch& arch) {
  CnnModel model(arch);
  std::mt19937_64 rng(seed);
  const auto o = model.offsets();
  auto p = model.parameters();
  const int kk = arch.kernel * arch.kernel;
  auto fill = [&](std::size_t begin, std::size_t end, double fan_in, double fan_out) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    for (std::size_t i = begin; i < end; ++i) p[i] = dist(rng);
  };
  fill(o.conv1_w, o.conv1_b, kk, double(arch.conv1_maps) * kk);
  fill(o.conv2_w, o.conv2_b, double(arch.conv1_maps) * kk, double(arch.conv2_maps) * kk);
  fill(o.fc_w, o.fc_b, arch.flat_size(), arch.classes);
  return model;
}

void standardize(std::span<double> values) {
  if (values.empty()) return;
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double scale = 1.0 / (std::sqrt(var / n) + 1e-3);
  for (double& v : values) v = (v - mean) * scale;
}

void forward(const CnnModel& model, std::span<const double> input, Activations& act) {
  const CnnArch& a = model.arch();
  const auto o = model.offsets();
  const auto p = model.parameters();
  const int k = a.kernel, kk = k * k;
  const int s0 = a.input_side, s1 = a.conv1_side(), q1 = a.pool1_side();
  const int s2 = a.conv2_side(), q2 = a.pool2_side();
  if (input.size() != static_cast<std::size_t>(s0) * s0) {
    throw ShapeError(kModule, "network input must be a single-channel " +
                                  std::to_string(s0) + "x" + std::to_string(s0) + " patch");
  }
  act.input.assign(input.begin(), input.end());
  act.conv1.resize(std::size_t(a.conv1_maps) * s1 * s1);
  act.pool1.resize(std::size_t(a.conv1_maps) * q1 * q1);
  act.conv2.resize(std::size_t(a.conv2_maps) * s2 * s2);
  act.pool2.resize(std::size_t(a.conv2_maps) * q2 * q2);
  act.output.resize(a.classes);

  for (int m = 0; m < a.conv1_maps; ++m) {
    double* out = act.conv1.data() + std::size_t(m) * s1 * s1;
    std::fill(out, out + s1 * s1, p[o.conv1_b + m]);
    correlate_add(act.input.data(), s0, p.data() + o.conv1_w + std::size_t(m) * kk, k,
                  out, s1);
    for (int i = 0; i < s1 * s1; ++i) out[i] = sigmoid(out[i]);
    mean_pool(out, s1, a.pool, act.pool1.data() + std::size_t(m) * q1 * q1);
  }
  for (int n = 0; n < a.conv2_maps; ++n) {
    double* out = act.conv2.data() + std::size_t(n) * s2 * s2;
    std::fill(out, out + s2 * s2, p[o.conv2_b + n]);
    for (int m = 0; m < a.conv1_maps; ++m) {
      correlate_add(act.pool1.data() + std::size_t(m) * q1 * q1, q1,
                    p.data() + o.conv2_w + (std::size_t(n) * a.conv1_maps + m) * kk, k,
                    out, s2);
    }
    for (int i = 0; i < s2 * s2; ++i) out[i] = sigmoid(out[i]);
    mean_pool(out, s2, a.pool, act.pool2.data() + std::size_t(n) * q2 * q2);
  }
  const int flat = a.flat_size();
  for (int c = 0; c < a.classes; ++c) {
    const double* w = p.data() + o.fc_w + std::size_t(c) * flat;
    double acc = p[o.fc_b + c];
    for (int i = 0; i < flat; ++i) acc += w[i] * act.pool2[i];
    act.output[c] = sigmoid(acc);
  }
}

Scores forward(const CnnModel& model, const Patch& patch) {
  if (patch.channels() != 1 || patch.side() != model.arch().input_side) {
    throw ShapeError(kModule, "forward expects a single-channel " +
                                  std::to_string(model.arch().input_side) + "px patch");
  }
  std::vector<double> input(patch.pixels.samples().begin(), patch.pixels.samples().end());
  standardize(input);
  Activations act;
  forward(model, input, act);
  return {act.output[0], act.output[1]};
}

std::array<double, 2> target_for(TexelLabel label) {
  return label == TexelLabel::joint ? std::array<double, 2>{1.0, 0.0}
                                    : std::array<double, 2>{0.0, 1.0};
}

double sample_loss(const CnnModel& model, std::span<const double> input,
                   TexelLabel label) {
  Activations act;
  forward(model, input, act);
  const auto t = target_for(label);
  double loss = 0.0;
  for (int c = 0; c < 2; ++c) loss += 0.5 * (act.output[c] - t[c]) * (act.output[c] - t[c]);
  return loss;
}

// Each parameter receives exactly one `+=` per call so batch sums are
// independent of how samples are partitioned across threads.
double accumulate_gradient(const CnnModel& model, std::span<const double> input,
                           TexelLabel label, std::span<double> grad,
                           Activations& act) {
  forward(model, input, act);
  const CnnArch& a = model.arch();
  const auto o = model.offsets();
  const auto p = model.parameters();
  const int k = a.kernel, kk = k * k;
  const int s0 = a.input_side, s1 = a.conv1_side(), q1 = a.pool1_side();
  const int s2 = a.conv2_side(), q2 = a.pool2_side();
  const int flat = a.flat_size();
  const double pool_scale = 1.0 / (a.pool * a.pool);
  const auto t = target_for(label);

  double loss = 0.0;
  double d_out[2];
  for (int c = 0; c < 2; ++c) {
    const double e = act.output[c] - t[c];
    loss += 0.5 * e * e;
    d_out[c] = e * act.output[c] * (1.0 - act.output[c]);
  }
  for (int c = 0; c < 2; ++c) {
    double* g = grad.data() + o.fc_w + std::size_t(c) * flat;
    for (int i = 0; i < flat; ++i) g[i] += d_out[c] * act.pool2[i];
    grad[o.fc_b + c] += d_out[c];
  }

  // Flattened fc input gradient, spread through the mean pool and sigmoid.
  act.d_conv2.resize(act.conv2.size());
  for (int n = 0; n < a.conv2_maps; ++n) {
    for (int y = 0; y < s2; ++y) {
      for (int x = 0; x < s2; ++x) {
        const int fi = n * q2 * q2 + (y / a.pool) * q2 + x / a.pool;
        double df = 0.0;
        for (int c = 0; c < 2; ++c) df += p[o.fc_w + std::size_t(c) * flat + fi] * d_out[c];
        const std::size_t i = std::size_t(n) * s2 * s2 + y * s2 + x;
        const double av = act.conv2[i];
        act.d_conv2[i] = df * pool_scale * av * (1.0 - av);
      }
    }
  }

  act.d_pool1.assign(act.pool1.size(), 0.0);
  for (int n = 0; n < a.conv2_maps; ++n) {
    const double* dn = act.d_conv2.data() + std::size_t(n) * s2 * s2;
    grad[o.conv2_b + n] += std::accumulate(dn, dn + s2 * s2, 0.0);
    for (int m = 0; m < a.conv1_maps; ++m) {
      const double* in = act.pool1.data() + std::size_t(m) * q1 * q1;
      double* dpm = act.d_pool1.data() + std::size_t(m) * q1 * q1;
      const std::size_t wbase = o.conv2_w + (std::size_t(n) * a.conv1_maps + m) * kk;
      for (int u = 0; u < k; ++u) {
        for (int v = 0; v < k; ++v) {
          const double w = p[wbase + u * k + v];
          double acc = 0.0;
          for (int y = 0; y < s2; ++y) {
            const double* src = in + (y + u) * q1 + v;
            const double* d = dn + y * s2;
            double* dst = dpm + (y + u) * q1 + v;
            for (int x = 0; x < s2; ++x) {
              acc += d[x] * src[x];
              dst[x] += w * d[x];
            }
          }
          grad[wbase + u * k + v] += acc;
        }
      }
    }
  }

  act.d_conv1.resize(act.conv1.size());
  for (int m = 0; m < a.conv1_maps; ++m) {
    for (int y = 0; y < s1; ++y) {
      for (int x = 0; x < s1; ++x) {
        const std::size_t i = std::size_t(m) * s1 * s1 + y * s1 + x;
        const double dp = act.d_pool1[std::size_t(m) * q1 * q1 + (y / a.pool) * q1 + x / a.pool];
        const double av = act.conv1[i];
        act.d_conv1[i] = dp * pool_scale * av * (1.0 - av);
      }
    }
    const double* dm = act.d_conv1.data() + std::size_t(m) * s1 * s1;
    grad[o.conv1_b + m] += std::accumulate(dm, dm + s1 * s1, 0.0);
    const std::size_t wbase = o.conv1_w + std::size_t(m) * kk;
    for (int u = 0; u < k; ++u) {
      for (int v = 0; v < k; ++v) {
        double acc = 0.0;
        for (int y = 0; y < s1; ++y) {
          const double* src = act.input.data() + (y + u) * s0 + v;
          const double* d = dm + y * s1;
          for (int x = 0; x < s1; ++x) acc += d[x] * src[x];
        }
        grad[wbase + u * k + v] += acc;
      }
    }
  }
  return loss;
}

std::vector<std::vector<double>> network_inputs(const TexelDataset& dataset,
                                                int input_side) {
  std::vector<std::vector<double>> inputs;
  inputs.reserve(dataset.size());
  for (const TexelSample& s : dataset.samples) {
    if (s.patch.side() != input_side) {
      throw ShapeError(kModule, "dataset patch side " + std::to_string(s.patch.side()) +
                                    " does not match network input");
    }
    const Image lum = to_luminance(s.patch.pixels);
    inputs.emplace_back(lum.samples().begin(), lum.samples().end());
    standardize(inputs.back());
  }
  return inputs;
}

TrainResult train(const CnnModel& initial, const TexelDataset& dataset,
                  const TrainConfig& config, const EpochCallback& on_epoch) {
  if (dataset.size() == 0) throw ShapeError(kModule, "training dataset is empty");
  if (config.epochs < 1 || config.batch_size < 1 || !(config.learning_rate >= 0.0)) {
    throw ShapeError(kModule, "invalid training configuration");
  }
  const auto start = std::chrono::steady_clock::now();
  const auto inputs = network_inputs(dataset, initial.arch().input_side);
  std::vector<TexelLabel> labels;
  for (const auto& s : dataset.samples) labels.push_back(s.label);

  TrainResult result{initial, {}};
  auto params = result.model.parameters();
  std::vector<double> grad(params.size());
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(config.seed);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t len = std::min<std::size_t>(config.batch_size, order.size() - begin);
      std::fill(grad.begin(), grad.end(), 0.0);
      epoch_loss += kernels::batch_gradient(
          result.model, inputs, labels,
          std::span<const std::size_t>(order).subspan(begin, len), grad);
      const double step = config.learning_rate / static_cast<double>(len);
      for (std::size_t i = 0; i < params.size(); ++i) params[i] -= step * grad[i];
    }
    const double mse = epoch_loss / static_cast<double>(order.size());
    if (!std::isfinite(mse)) {
      throw NumericError(kModule, "non-finite training loss at epoch " +
                                      std::to_string(epoch + 1));
    }
    if (!result.report.per_epoch_mse.empty() &&
        mse > config.divergence_factor * result.report.per_epoch_mse.front()) {
      throw NumericError(kModule, "training diverged at epoch " + std::to_string(epoch + 1) +
                                      " (mse " + std::to_string(mse) + ")");
    }
    result.report.per_epoch_mse.push_back(mse);
    if (on_epoch) on_epoch(epoch + 1, mse);
  }
  result.report.final_mse = result.report.per_epoch_mse.back();
  result.report.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

double accuracy(const CnnModel& model, const TexelDataset& dataset) {
  if (dataset.size() == 0) return 0.0;
  const auto inputs = network_inputs(dataset, model.arch().input_side);
  Activations act;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    forward(model, inputs[i], act);
    const bool says_joint = act.output[0] > act.output[1];
    correct += says_joint == (dataset.samples[i].label == TexelLabel::joint);
  }
  return static_cast<double>(correct) / static_cast<double>(inputs.size());
}

double gradient_check(const CnnModel& model, const Patch& patch, TexelLabel label,
                      double epsilon, std::uint64_t seed, std::size_t subset,
                      const GradientHook& hook) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) {
    throw NumericError(kModule, "gradient_check epsilon must lie in [1e-6, 1e-3]");
  }
  const Image lum = to_luminance(patch.pixels);
  std::vector<double> input(lum.samples().begin(), lum.samples().end());
  standardize(input);
  std::vector<double> analytic(model.parameters().size(), 0.0);
  Activations act;
  accumulate_gradient(model, input, label, analytic, act);
  if (hook) hook(model, analytic);

  std::vector<std::size_t> indices(analytic.size());
  std::iota(indices.begin(), indices.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(indices.begin(), indices.end(), rng);
  indices.resize(std::min(subset, indices.size()));

  CnnModel probe = model;
  auto p = probe.parameters();
  double worst = 0.0;
  for (std::size_t idx : indices) {
    const double saved = p[idx];
    p[idx] = saved + epsilon;
    const double plus = sample_loss(probe, input, label);
    p[idx] = saved - epsilon;
    const double minus = sample_loss(probe, input, label);
    p[idx] = saved;
    const double numeric = (plus - minus) / (2.0 * epsilon);
    const double denom = std::max({std::abs(analytic[idx]), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic[idx] - numeric) / denom);
  }
  return worst;
}

}  // namespace defence
