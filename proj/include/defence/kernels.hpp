#pragma once

// Data-parallel inner loops. Each OpenMP kernel has a `_serial` reference
// with the same summation order; the two must agree bit-for-bit.

#include <cstddef>
#include <span>
#include <vector>

#include "defence/cnn.hpp"
#include "defence/image.hpp"

namespace defence::kernels {

/// Compressed sparse rows: row r owns entries [row_ptr[r], row_ptr[r+1]).
struct SparseRows {
  std::vector<std::size_t> row_ptr{0};
  std::vector<int> index;
  std::vector<double> weight;

  std::size_t rows() const { return row_ptr.size() - 1; }
};

/// Transpose keeping, for every column, the entries in increasing row order.
SparseRows transpose(const SparseRows& rows, std::size_t columns);

/// y[r] = sum_k w_k x[index_k].
void gather(const SparseRows& rows, std::span<const double> x, std::span<double> y);
void gather_serial(const SparseRows& rows, std::span<const double> x,
                   std::span<double> y);
/// y = A^T x by scatter-add over the rows of A (serial reference of a gather
/// over the transpose).
void scatter_add_serial(const SparseRows& rows, std::span<const double> x,
                        std::span<double> y);

/// Forward differences with zero at the far boundary, per plane.
void gradient(std::span<const double> x, int width, int height,
              std::span<double> gx, std::span<double> gy);
void gradient_serial(std::span<const double> x, int width, int height,
                     std::span<double> gx, std::span<double> gy);

/// Negative adjoint of `gradient`.
void divergence(std::span<const double> gx, std::span<const double> gy, int width,
                int height, std::span<double> out);
void divergence_serial(std::span<const double> gx, std::span<const double> gy,
                       int width, int height, std::span<double> out);

void shrink(std::span<const double> v, double theta, std::span<double> out);
void shrink_serial(std::span<const double> v, double theta, std::span<double> out);

/// Sum of per-sample gradients over `batch` (indices into inputs/labels),
/// added in batch order. Returns the summed loss.
double batch_gradient(const CnnModel& model,
                      const std::vector<std::vector<double>>& inputs,
                      std::span<const TexelLabel> labels,
                      std::span<const std::size_t> batch, std::span<double> grad);
double batch_gradient_serial(const CnnModel& model,
                             const std::vector<std::vector<double>>& inputs,
                             std::span<const TexelLabel> labels,
                             std::span<const std::size_t> batch,
                             std::span<double> grad);

/// Scores of every in-bounds window of a single-channel frame, row-major over
/// window positions.
std::vector<Scores> window_scores(const CnnModel& model, const Image& luminance,
                                  int stride);
std::vector<Scores> window_scores_serial(const CnnModel& model,
                                         const Image& luminance, int stride);

}  // namespace defence::kernels
