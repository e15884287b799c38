#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "defence/cnn.hpp"
#include "defence/error.hpp"
#include "defence/fence_synth.hpp"

using namespace defence;
namespace fs = std::filesystem;

namespace {

double sig(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Loop-nest forward pass with explicit indexing, independent of the library's
// buffer walking.
std::array<double, 2> forward_oracle(const CnnModel& m, const std::vector<double>& in) {
  const auto p = m.parameters();
  const auto o = m.offsets();
  double c1[6][28][28], p1[6][14][14], c2[12][10][10], p2[12][5][5];
  for (int k = 0; k < 6; ++k)
    for (int y = 0; y < 28; ++y)
      for (int x = 0; x < 28; ++x) {
        double acc = p[o.conv1_b + k];
        for (int u = 0; u < 5; ++u)
          for (int v = 0; v < 5; ++v) acc += p[o.conv1_w + k * 25 + u * 5 + v] * in[(y + u) * 32 + x + v];
        c1[k][y][x] = sig(acc);
      }
  for (int k = 0; k < 6; ++k)
    for (int y = 0; y < 14; ++y)
      for (int x = 0; x < 14; ++x)
        p1[k][y][x] = (c1[k][2 * y][2 * x] + c1[k][2 * y][2 * x + 1] + c1[k][2 * y + 1][2 * x] +
                       c1[k][2 * y + 1][2 * x + 1]) / 4;
  for (int n = 0; n < 12; ++n)
    for (int y = 0; y < 10; ++y)
      for (int x = 0; x < 10; ++x) {
        double acc = p[o.conv2_b + n];
        for (int k = 0; k < 6; ++k)
          for (int u = 0; u < 5; ++u)
            for (int v = 0; v < 5; ++v)
              acc += p[o.conv2_w + (n * 6 + k) * 25 + u * 5 + v] * p1[k][y + u][x + v];
        c2[n][y][x] = sig(acc);
      }
  for (int n = 0; n < 12; ++n)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x)
        p2[n][y][x] = (c2[n][2 * y][2 * x] + c2[n][2 * y][2 * x + 1] + c2[n][2 * y + 1][2 * x] +
                       c2[n][2 * y + 1][2 * x + 1]) / 4;
  std::array<double, 2> out{};
  for (int c = 0; c < 2; ++c) {
    double acc = p[o.fc_b + c];
    for (int n = 0; n < 12; ++n)
      for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) acc += p[o.fc_w + c * 300 + n * 25 + y * 5 + x] * p2[n][y][x];
    out[c] = sig(acc);
  }
  return out;
}

std::vector<double> random_input(unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(32 * 32);
  for (double& x : v) x = u(rng);
  return v;
}

Patch random_patch(unsigned seed) {
  return {Image(32, 32, 1, random_input(seed)), {16, 16}};
}

CnnModel perturbed_model(std::uint64_t seed) {
  // Nonzero biases so their gradients are exercised too.
  CnnModel m = init_model(seed);
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (double& p : m.parameters()) p += u(rng);
  return m;
}

TexelDataset toy_dataset() {
  const auto scenes = make_training_scenes(2, 128, 128, 4);
  return build_texel_dataset(scenes, 12, 18, 3);
}

}  // namespace

TEST_CASE("architecture sizes and parameter layout") {
  const CnnArch a;
  CHECK(a.conv1_side() == 28);
  CHECK(a.pool1_side() == 14);
  CHECK(a.conv2_side() == 10);
  CHECK(a.pool2_side() == 5);
  CHECK(a.flat_size() == 300);
  CHECK(a.parameter_count() == 150 + 6 + 1800 + 12 + 600 + 2);
  const auto o = CnnModel().offsets();
  CHECK(o.conv1_b == 150);
  CHECK(o.conv2_w == 156);
  CHECK(o.conv2_b == 1956);
  CHECK(o.fc_w == 1968);
  CHECK(o.fc_b == 2568);
  CHECK(o.end == 2570);
  CnnArch bad;
  bad.input_side = 31;
  CHECK_THROWS_AS(bad.validate(), ShapeError);
}

TEST_CASE("initialization is seeded with zero biases within the Glorot bound") {
  const CnnModel m = init_model(3);
  CHECK(m == init_model(3));
  CHECK_FALSE(m == init_model(4));
  const auto o = m.offsets();
  const auto p = m.parameters();
  for (std::size_t i = o.conv1_b; i < o.conv2_w; ++i) CHECK(p[i] == 0.0);
  const double a1 = std::sqrt(6.0 / (25 + 150));
  for (std::size_t i = 0; i < o.conv1_b; ++i) CHECK(std::abs(p[i]) <= a1);
}

TEST_CASE("forward agrees with the loop-nest oracle") {
  for (unsigned s = 0; s < 4; ++s) {
    const CnnModel m = perturbed_model(s);
    const auto in = random_input(10 + s);
    Activations act;
    forward(m, in, act);
    const auto want = forward_oracle(m, in);
    CHECK(act.output[0] == doctest::Approx(want[0]).epsilon(1e-12));
    CHECK(act.output[1] == doctest::Approx(want[1]).epsilon(1e-12));
  }
  Activations act;
  CHECK_THROWS_AS(forward(CnnModel(), std::vector<double>(100), act), ShapeError);
}

TEST_CASE("patch forward standardizes its input") {
  const CnnModel m = perturbed_model(1);
  const Patch p = random_patch(3);
  std::vector<double> in(p.pixels.samples().begin(), p.pixels.samples().end());
  standardize(in);
  double mean = 0, var = 0;
  for (double v : in) mean += v;
  mean /= in.size();
  for (double v : in) var += (v - mean) * (v - mean);
  CHECK(mean == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::sqrt(var / in.size()) == doctest::Approx(1.0).epsilon(1e-2));
  const auto want = forward_oracle(m, in);
  const Scores s = forward(m, p);
  CHECK(s.joint == doctest::Approx(want[0]).epsilon(1e-12));
  CHECK(s.non_joint == doctest::Approx(want[1]).epsilon(1e-12));
  // A flat patch maps to all zeros rather than dividing by zero.
  std::vector<double> flat(1024, 0.4);
  standardize(flat);
  for (double v : flat) CHECK(std::abs(v) < 1e-8);
}

TEST_CASE("loss and one-hot targets") {
  CHECK(target_for(TexelLabel::joint) == std::array<double, 2>{1.0, 0.0});
  CHECK(target_for(TexelLabel::non_joint) == std::array<double, 2>{0.0, 1.0});
  const CnnModel m = perturbed_model(2);
  const auto in = random_input(5);
  const auto o = forward_oracle(m, in);
  CHECK(sample_loss(m, in, TexelLabel::joint) ==
        doctest::Approx(0.5 * ((o[0] - 1) * (o[0] - 1) + o[1] * o[1])));
}

TEST_CASE("analytic gradient matches central differences") {
  for (unsigned s = 0; s < 3; ++s) {
    const CnnModel m = perturbed_model(20 + s);
    const TexelLabel label = s % 2 ? TexelLabel::joint : TexelLabel::non_joint;
    CHECK(gradient_check(m, random_patch(30 + s), label, 1e-4, s, 2570) < 1e-3);
  }
}

TEST_CASE("gradient check catches a corrupted gradient") {
  const CnnModel m = perturbed_model(5);
  const auto hook = [](const CnnModel& model, std::span<double> g) {
    g[model.offsets().conv2_w + 7] *= 1.5;
  };
  CHECK(gradient_check(m, random_patch(1), TexelLabel::joint, 1e-4, 0, 2570, hook) > 0.1);
  CHECK_THROWS_AS(gradient_check(m, random_patch(1), TexelLabel::joint, 1e-2), NumericError);
}

TEST_CASE("model files round trip exactly and reject damage") {
  const fs::path dir = fs::temp_directory_path() / "defence_test_cnn";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const CnnModel m = perturbed_model(8);
  save_model(m, dir / "m.txt");
  CHECK(load_model(dir / "m.txt") == m);

  std::ifstream in(dir / "m.txt");
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  REQUIRE(lines.size() == 2 + 2570);
  CHECK(lines[0] == kModelMagic);
  auto write = [&](const char* name, std::size_t drop_tail, const std::string& extra,
                   const std::string& first) {
    std::ofstream out(dir / name);
    out << first << "\n";
    for (std::size_t i = 1; i + drop_tail < lines.size(); ++i) out << lines[i] << "\n";
    out << extra;
  };
  write("short.txt", 5, "", lines[0]);
  CHECK_THROWS_AS(load_model(dir / "short.txt"), FormatError);
  write("long.txt", 0, "0.5\n", lines[0]);
  CHECK_THROWS_AS(load_model(dir / "long.txt"), FormatError);
  write("magic.txt", 0, "", "OTHER v1");
  CHECK_THROWS_AS(load_model(dir / "magic.txt"), FormatError);
  CHECK_THROWS_AS(load_model(dir / "none.txt"), IoError);
}

TEST_CASE("training lowers the loss and is reproducible") {
  const TexelDataset d = toy_dataset();
  TrainConfig tc;
  tc.epochs = 12;
  tc.batch_size = 7;  // leaves a partial last batch
  tc.learning_rate = 1.0;
  tc.seed = 2;
  const TrainResult a = train(init_model(1), d, tc);
  CHECK(a.report.per_epoch_mse.size() == 12);
  CHECK(a.report.final_mse == a.report.per_epoch_mse.back());
  CHECK(a.report.final_mse < a.report.per_epoch_mse.front());
  const TrainResult b = train(init_model(1), d, tc);
  CHECK(a.model == b.model);
  CHECK(a.report.per_epoch_mse == b.report.per_epoch_mse);

  int calls = 0;
  tc.epochs = 3;
  train(init_model(1), d, tc, [&](int epoch, double) { CHECK(epoch == ++calls); });
  CHECK(calls == 3);
}

TEST_CASE("training rejects empty data and non-finite weights") {
  TrainConfig tc;
  tc.epochs = 1;
  CHECK_THROWS_AS(train(init_model(0), TexelDataset{}, tc), ShapeError);
  CnnModel broken = init_model(0);
  broken.parameters()[3] = std::nan("");
  CHECK_THROWS_AS(train(broken, toy_dataset(), tc), NumericError);
}

TEST_CASE("accuracy counts argmax agreement") {
  CnnModel m;  // all-zero parameters give outputs (0.5, 0.5)
  auto p = m.parameters();
  p[m.offsets().fc_b + 0] = 1.0;  // always says joint
  const TexelDataset d = toy_dataset();
  CHECK(accuracy(m, d) == doctest::Approx(12.0 / 30.0));
  CHECK(accuracy(m, TexelDataset{}) == 0.0);
}
