#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "defence/image.hpp"
#include "defence/motion.hpp"

namespace defence {

/// Horizontal and vertical forward differences, planar like Image samples.
struct GradientField {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> gx;
  std::vector<double> gy;

  std::size_t size() const { return gx.size(); }
};

GradientField grad(std::span<const double> x, int width, int height, int channels);
GradientField grad(const Image& x);
/// Exact negative adjoint of grad: <grad x, g> = -<x, div g>.
std::vector<double> div(const GradientField& g);

double shrink(double v, double theta);
GradientField shrink(const GradientField& v, double theta);

enum class ThresholdMode { derived, paper, explicit_value };
enum class StepMode { backtracking, fixed };

struct SolverParams {
  double mu = 0.01;
  double lambda = 1e-5;
  int outer_iters = 50;
  int inner_iters = 20;
  StepMode step_mode = StepMode::backtracking;
  double step = 1.0;  // initial (backtracking) or constant (fixed) step
  double armijo = 1e-4;
  int max_halvings = 40;
  double tol = 1e-4;
  ThresholdMode threshold_mode = ThresholdMode::derived;
  double explicit_threshold = 0.0;

  void validate() const;
};

/// derived: mu/lambda; paper: lambda/mu; explicit_value: explicit_threshold.
double shrink_threshold(const SolverParams& params);

/// One observed frame y_m with its visibility weights and warp W_m.
struct Observation {
  Image frame;
  std::vector<double> keep;  // one plane, 1 = background visible
  WarpOperator warp;
};

/// keep = complement of the fence mask. With drop_partial_rows, pixels whose
/// warp row lost taps off the reference border also get zero weight.
Observation make_observation(Image frame, const FenceMask& fence, WarpOperator warp,
                             bool drop_partial_rows = true);

struct SplitState {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<double> x;
  GradientField d;
  GradientField b;
  int iteration = 0;

  Image image() const;
};

/// x from `init`, d = b = 0.
SplitState init_state(const Image& init);

struct ObjectiveTerms {
  double data = 0.0;
  double tv = 0.0;  // already multiplied by mu
  double total() const { return data + tv; }
};

/// (1/2) sum_m ||keep_m (y_m - W_m x)||^2 + mu ||grad x||_1 (anisotropic).
ObjectiveTerms objective_terms(std::span<const double> x, int width, int height,
                               int channels, const std::vector<Observation>& obs,
                               double mu);
double objective(const Image& x, const std::vector<Observation>& obs, double mu);

/// F(x) = data(x) + (lambda/2) ||d - grad x - b||^2, the x-subproblem.
double split_objective(std::span<const double> x, const SplitState& state,
                       const std::vector<Observation>& obs, double lambda);
/// grad F = sum_m W_m^T keep_m (W_m x - y_m) - lambda div(grad x - d + b).
std::vector<double> split_gradient(std::span<const double> x, const SplitState& state,
                                   const std::vector<Observation>& obs, double lambda);

/// Gradient descent on F for up to inner_iters steps. If `f_trace` is given it
/// receives F before the first step and after every accepted step.
SplitState x_update(const SplitState& state, const std::vector<Observation>& obs,
                    const SolverParams& params, std::vector<double>* f_trace = nullptr);

struct TraceRow {
  int iter = 0;
  double objective = 0.0;
  double data_term = 0.0;
  double tv_term = 0.0;
  double rel_change = 0.0;
  std::size_t uncovered_pixels = 0;
};

struct ConvergenceTrace {
  std::vector<TraceRow> rows;
  std::size_t uncovered_pixels = 0;
};

struct DefenceResult {
  Image image;
  ConvergenceTrace trace;
};

/// Pixels of x seen through no observation (zero total keep weight under
/// every warp), one flag per pixel.
std::vector<std::uint8_t> uncovered_mask(const std::vector<Observation>& obs);

enum class InitMode {
  // Fenced reference pixels take the keep-weighted back-projection of all
  // observations where any frame sees them; the rest use masked_mean.
  fused,
  // Fenced reference pixels filled by repeated 5x5 masked means of
  // already-known neighbors.
  masked_mean,
};

/// Starts from the identity-warp observation (or the first one).
Image default_init(const std::vector<Observation>& obs, InitMode mode = InitMode::fused);

DefenceResult run_defence(const std::vector<Observation>& obs, const SolverParams& params,
                      const Image& init);
DefenceResult run_defence(const std::vector<Observation>& obs, const SolverParams& params);

void write_trace_csv(const ConvergenceTrace& trace, const std::filesystem::path& path);

}  // namespace defence
