#include "defence/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace defence::kernels {

namespace {

using Index = long long;  // OpenMP loop counters must be signed

void fill_window(const Image& lum, int x0, int y0, int side, std::vector<double>& buf) {
  auto plane = lum.plane(0);
  for (int y = 0; y < side; ++y) {
    const double* row = plane.data() + static_cast<std::size_t>(y0 + y) * lum.width() + x0;
    std::copy(row, row + side, buf.begin() + static_cast<std::size_t>(y) * side);
  }
}

int window_count(int extent, int side, int stride) {
  return extent < side ? 0 : (extent - side) / stride + 1;
}

}  // namespace

SparseRows transpose(const SparseRows& rows, std::size_t columns) {
  SparseRows t;
  t.row_ptr.assign(columns + 1, 0);
  for (int c : rows.index) ++t.row_ptr[static_cast<std::size_t>(c) + 1];
  for (std::size_t c = 0; c < columns; ++c) t.row_ptr[c + 1] += t.row_ptr[c];
  t.index.resize(rows.index.size());
  t.weight.resize(rows.weight.size());
  std::vector<std::size_t> cursor(t.row_ptr.begin(), t.row_ptr.end() - 1);
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    for (std::size_t k = rows.row_ptr[r]; k < rows.row_ptr[r + 1]; ++k) {
      const std::size_t slot = cursor[static_cast<std::size_t>(rows.index[k])]++;
      t.index[slot] = static_cast<int>(r);
      t.weight[slot] = rows.weight[k];
    }
  }
  return t;
}

void gather(const SparseRows& rows, std::span<const double> x, std::span<double> y) {
  const Index n = static_cast<Index>(rows.rows());
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < n; ++r) {
    double acc = 0.0;
    for (std::size_t k = rows.row_ptr[r]; k < rows.row_ptr[r + 1]; ++k) {
      acc += rows.weight[k] * x[static_cast<std::size_t>(rows.index[k])];
    }
    y[static_cast<std::size_t>(r)] = acc;
  }
}

void gather_serial(const SparseRows& rows, std::span<const double> x,
                   std::span<double> y) {
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    double acc = 0.0;
    for (std::size_t k = rows.row_ptr[r]; k < rows.row_ptr[r + 1]; ++k) {
      acc += rows.weight[k] * x[static_cast<std::size_t>(rows.index[k])];
    }
    y[r] = acc;
  }
}

void scatter_add_serial(const SparseRows& rows, std::span<const double> x,
                        std::span<double> y) {
  std::fill(y.begin(), y.end(), 0.0);
  for (std::size_t r = 0; r < rows.rows(); ++r) {
    for (std::size_t k = rows.row_ptr[r]; k < rows.row_ptr[r + 1]; ++k) {
      y[static_cast<std::size_t>(rows.index[k])] += rows.weight[k] * x[r];
    }
  }
}

void gradient(std::span<const double> x, int width, int height,
              std::span<double> gx, std::span<double> gy) {
  const Index rows = static_cast<Index>(x.size() / width);
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < rows; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * width;
    const bool last_row = (static_cast<std::size_t>(r) % height) == std::size_t(height - 1);
    for (int j = 0; j < width; ++j) {
      const std::size_t i = base + j;
      gx[i] = j + 1 < width ? x[i + 1] - x[i] : 0.0;
      gy[i] = last_row ? 0.0 : x[i + width] - x[i];
    }
  }
}

void gradient_serial(std::span<const double> x, int width, int height,
                     std::span<double> gx, std::span<double> gy) {
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  for (std::size_t p0 = 0; p0 < x.size(); p0 += plane) {
    for (int y = 0; y < height; ++y) {
      for (int j = 0; j < width; ++j) {
        const std::size_t i = p0 + static_cast<std::size_t>(y) * width + j;
        gx[i] = j + 1 < width ? x[i + 1] - x[i] : 0.0;
        gy[i] = y + 1 < height ? x[i + width] - x[i] : 0.0;
      }
    }
  }
}

void divergence(std::span<const double> gx, std::span<const double> gy, int width,
                int height, std::span<double> out) {
  const Index rows = static_cast<Index>(gx.size() / width);
#pragma omp parallel for schedule(static)
  for (Index r = 0; r < rows; ++r) {
    const std::size_t base = static_cast<std::size_t>(r) * width;
    const int y = static_cast<int>(static_cast<std::size_t>(r) % height);
    for (int j = 0; j < width; ++j) {
      const std::size_t i = base + j;
      double v = 0.0;
      if (j + 1 < width) v += gx[i];
      if (j > 0) v -= gx[i - 1];
      if (y + 1 < height) v += gy[i];
      if (y > 0) v -= gy[i - width];
      out[i] = v;
    }
  }
}

void divergence_serial(std::span<const double> gx, std::span<const double> gy,
                       int width, int height, std::span<double> out) {
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  for (std::size_t p0 = 0; p0 < gx.size(); p0 += plane) {
    for (int y = 0; y < height; ++y) {
      for (int j = 0; j < width; ++j) {
        const std::size_t i = p0 + static_cast<std::size_t>(y) * width + j;
        double v = 0.0;
        if (j + 1 < width) v += gx[i];
        if (j > 0) v -= gx[i - 1];
        if (y + 1 < height) v += gy[i];
        if (y > 0) v -= gy[i - width];
        out[i] = v;
      }
    }
  }
}

namespace {

inline double soft_threshold(double v, double theta) {
  const double mag = std::abs(v) - theta;
  if (v == 0.0 || mag <= 0.0) return 0.0;
  return v > 0.0 ? mag : -mag;
}

}  // namespace

void shrink(std::span<const double> v, double theta, std::span<double> out) {
  const Index n = static_cast<Index>(v.size());
#pragma omp parallel for schedule(static)
  for (Index i = 0; i < n; ++i) out[i] = soft_threshold(v[i], theta);
}

void shrink_serial(std::span<const double> v, double theta, std::span<double> out) {
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = soft_threshold(v[i], theta);
}

double batch_gradient(const CnnModel& model,
                      const std::vector<std::vector<double>>& inputs,
                      std::span<const TexelLabel> labels,
                      std::span<const std::size_t> batch, std::span<double> grad) {
  const std::size_t n_params = model.parameters().size();
  const Index n = static_cast<Index>(batch.size());
  std::vector<double> partial(batch.size() * n_params, 0.0);
  std::vector<double> losses(batch.size(), 0.0);
#pragma omp parallel
  {
    Activations scratch;
#pragma omp for schedule(static)
    for (Index b = 0; b < n; ++b) {
      const std::size_t s = batch[static_cast<std::size_t>(b)];
      losses[b] = accumulate_gradient(
          model, inputs[s], labels[s],
          std::span<double>(partial).subspan(static_cast<std::size_t>(b) * n_params,
                                             n_params),
          scratch);
    }
  }
  double loss = 0.0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    loss += losses[b];
    const double* p = partial.data() + b * n_params;
    for (std::size_t k = 0; k < n_params; ++k) grad[k] += p[k];
  }
  return loss;
}

double batch_gradient_serial(const CnnModel& model,
                             const std::vector<std::vector<double>>& inputs,
                             std::span<const TexelLabel> labels,
                             std::span<const std::size_t> batch,
                             std::span<double> grad) {
  Activations scratch;
  double loss = 0.0;
  for (std::size_t s : batch) {
    loss += accumulate_gradient(model, inputs[s], labels[s], grad, scratch);
  }
  return loss;
}

std::vector<Scores> window_scores(const CnnModel& model, const Image& luminance,
                                  int stride) {
  const int side = model.arch().input_side;
  const int nx = window_count(luminance.width(), side, stride);
  const int ny = window_count(luminance.height(), side, stride);
  std::vector<Scores> out(static_cast<std::size_t>(nx) * ny);
  const Index total = static_cast<Index>(out.size());
#pragma omp parallel
  {
    Activations act;
    std::vector<double> buf(static_cast<std::size_t>(side) * side);
#pragma omp for schedule(dynamic, 8)
    for (Index k = 0; k < total; ++k) {
      const int wx = static_cast<int>(k % nx), wy = static_cast<int>(k / nx);
      fill_window(luminance, wx * stride, wy * stride, side, buf);
      standardize(buf);
      forward(model, buf, act);
      out[static_cast<std::size_t>(k)] = {act.output[0], act.output[1]};
    }
  }
  return out;
}

std::vector<Scores> window_scores_serial(const CnnModel& model,
                                         const Image& luminance, int stride) {
  const int side = model.arch().input_side;
  const int nx = window_count(luminance.width(), side, stride);
  const int ny = window_count(luminance.height(), side, stride);
  std::vector<Scores> out;
  out.reserve(static_cast<std::size_t>(nx) * ny);
  Activations act;
  std::vector<double> buf(static_cast<std::size_t>(side) * side);
  for (int wy = 0; wy < ny; ++wy) {
    for (int wx = 0; wx < nx; ++wx) {
      fill_window(luminance, wx * stride, wy * stride, side, buf);
      standardize(buf);
      forward(model, buf, act);
      out.push_back({act.output[0], act.output[1]});
    }
  }
  return out;
}

}  // namespace defence::kernels
