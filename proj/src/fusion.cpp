#include "defence/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "defence/error.hpp"
#include "defence/kernels.hpp"

namespace defence {

namespace {

constexpr const char* kModule = "fusion";

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void check_observations(const std::vector<Observation>& obs) {
  if (obs.empty()) throw ShapeError(kModule, "no observations");
  const Image& f0 = obs.front().frame;
  for (const Observation& o : obs) {
    if (!o.frame.same_shape(f0)) throw ShapeError(kModule, "observation shapes differ");
    if (o.keep.size() != f0.plane_size()) throw ShapeError(kModule, "keep plane size mismatch");
    if (o.warp.width() != f0.width() || o.warp.height() != f0.height()) {
      throw ShapeError(kModule, "warp dimensions differ from frame");
    }
  }
}

void check_finite(std::span<const double> v, const char* what, int iteration, double step) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "non-finite %s at iteration %d (step %.3g)", what,
                    iteration, step);
      throw NumericError(kModule, buf);
    }
  }
}

// Per-observation residual keep * (W x - y), all channels.
std::vector<double> residual(const Observation& o, std::span<const double> x) {
  std::vector<double> r = apply_warp(o.warp, x);
  const std::size_t n = o.frame.plane_size();
  auto y = o.frame.samples();
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = o.keep[i % n] * (r[i] - y[i]);
  return r;
}

double data_term(std::span<const double> x, const std::vector<Observation>& obs) {
  double s = 0.0;
  for (const Observation& o : obs) {
    const auto r = residual(o, x);
    s += 0.5 * dot(r, r);
  }
  return s;
}

}  // namespace

GradientField grad(std::span<const double> x, int width, int height, int channels) {
  GradientField g{width, height, channels, std::vector<double>(x.size()),
                  std::vector<double>(x.size())};
  kernels::gradient(x, width, height, g.gx, g.gy);
  return g;
}

GradientField grad(const Image& x) {
  return grad(x.samples(), x.width(), x.height(), x.channels());
}

std::vector<double> div(const GradientField& g) {
  std::vector<double> out(g.size());
  kernels::divergence(g.gx, g.gy, g.width, g.height, out);
  return out;
}

double shrink(double v, double theta) {
  double out = 0.0;
  kernels::shrink_serial(std::span<const double>(&v, 1), theta, std::span<double>(&out, 1));
  return out;
}

GradientField shrink(const GradientField& v, double theta) {
  if (theta < 0.0) throw NumericError(kModule, "shrink threshold must be non-negative");
  GradientField out = v;
  kernels::shrink(v.gx, theta, out.gx);
  kernels::shrink(v.gy, theta, out.gy);
  return out;
}

void SolverParams::validate() const {
  if (!(mu > 0.0) || !(lambda > 0.0) || outer_iters < 1 || inner_iters < 1 ||
      !(tol > 0.0) || !(step > 0.0) || max_halvings < 0) {
    throw NumericError(kModule, "invalid solver parameters");
  }
  if (threshold_mode == ThresholdMode::explicit_value && explicit_threshold < 0.0) {
    throw NumericError(kModule, "explicit shrink threshold must be non-negative");
  }
}

double shrink_threshold(const SolverParams& p) {
  switch (p.threshold_mode) {
    case ThresholdMode::derived: return p.mu / p.lambda;
    case ThresholdMode::paper: return p.lambda / p.mu;
    case ThresholdMode::explicit_value: return p.explicit_threshold;
  }
  return p.mu / p.lambda;
}

Observation make_observation(Image frame, const FenceMask& fence, WarpOperator warp,
                             bool drop_partial_rows) {
  if (fence.width() != frame.width() || fence.height() != frame.height() ||
      warp.width() != frame.width() || warp.height() != frame.height()) {
    throw ShapeError(kModule, "frame, mask and warp dimensions differ");
  }
  Observation o{std::move(frame), std::vector<double>(fence.size()), std::move(warp)};
  for (std::size_t i = 0; i < o.keep.size(); ++i) {
    bool visible = !fence.bits()[i];
    if (drop_partial_rows && o.warp.row_weight(i) < 1.0 - 1e-9) visible = false;
    o.keep[i] = visible ? 1.0 : 0.0;
  }
  return o;
}

Image SplitState::image() const { return Image(width, height, channels, x); }

SplitState init_state(const Image& init) {
  SplitState s;
  s.width = init.width();
  s.height = init.height();
  s.channels = init.channels();
  s.x.assign(init.samples().begin(), init.samples().end());
  s.d = GradientField{s.width, s.height, s.channels, std::vector<double>(s.x.size()),
                      std::vector<double>(s.x.size())};
  s.b = s.d;
  return s;
}

ObjectiveTerms objective_terms(std::span<const double> x, int width, int height,
                               int channels, const std::vector<Observation>& obs,
                               double mu) {
  check_observations(obs);
  if (x.size() != obs.front().frame.samples().size()) {
    throw ShapeError(kModule, "estimate does not match observations");
  }
  ObjectiveTerms t;
  t.data = data_term(x, obs);
  const GradientField g = grad(x, width, height, channels);
  double tv = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) tv += std::abs(g.gx[i]) + std::abs(g.gy[i]);
  t.tv = mu * tv;
  return t;
}

double objective(const Image& x, const std::vector<Observation>& obs, double mu) {
  return objective_terms(x.samples(), x.width(), x.height(), x.channels(), obs, mu).total();
}

double split_objective(std::span<const double> x, const SplitState& state,
                       const std::vector<Observation>& obs, double lambda) {
  const GradientField g = grad(x, state.width, state.height, state.channels);
  double q = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double ex = state.d.gx[i] - g.gx[i] - state.b.gx[i];
    const double ey = state.d.gy[i] - g.gy[i] - state.b.gy[i];
    q += ex * ex + ey * ey;
  }
  return data_term(x, obs) + 0.5 * lambda * q;
}

std::vector<double> split_gradient(std::span<const double> x, const SplitState& state,
                                   const std::vector<Observation>& obs, double lambda) {
  std::vector<double> g(x.size(), 0.0);
  const std::size_t n = state.x.size() / static_cast<std::size_t>(state.channels);
  for (const Observation& o : obs) {
    auto r = residual(o, x);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] *= o.keep[i % n];
    const auto back = apply_warp_adjoint(o.warp, r);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += back[i];
  }
  GradientField e = grad(x, state.width, state.height, state.channels);
  for (std::size_t i = 0; i < e.size(); ++i) {
    e.gx[i] += state.b.gx[i] - state.d.gx[i];
    e.gy[i] += state.b.gy[i] - state.d.gy[i];
  }
  const auto dv = div(e);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] -= lambda * dv[i];
  return g;
}

SplitState x_update(const SplitState& state, const std::vector<Observation>& obs,
                    const SolverParams& params, std::vector<double>* f_trace) {
  check_observations(obs);
  SplitState next = state;
  std::vector<double>& x = next.x;
  std::vector<double> trial(x.size());
  double f = split_objective(x, next, obs, params.lambda);
  if (f_trace) f_trace->push_back(f);
  for (int it = 0; it < params.inner_iters; ++it) {
    const auto g = split_gradient(x, next, obs, params.lambda);
    check_finite(g, "gradient", state.iteration, params.step);
    const double g2 = dot(g, g);
    if (g2 == 0.0) break;
    double tau = params.step;
    double f_trial = 0.0;
    bool accepted = false;
    for (int h = 0; h <= params.max_halvings; ++h) {
      for (std::size_t i = 0; i < x.size(); ++i) trial[i] = x[i] - tau * g[i];
      f_trial = split_objective(trial, next, obs, params.lambda);
      if (!std::isfinite(f_trial)) {
        if (params.step_mode == StepMode::fixed) {
          check_finite(std::span<const double>(&f_trial, 1), "objective", state.iteration, tau);
        }
      } else if (params.step_mode == StepMode::fixed ||
                 f_trial <= f - params.armijo * tau * g2) {
        accepted = true;
        break;
      }
      tau *= 0.5;
    }
    if (!accepted) break;
    double change2 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double dlt = trial[i] - x[i];
      change2 += dlt * dlt;
    }
    const double rel = std::sqrt(change2) / std::max(norm(x), 1e-12);
    x.swap(trial);
    f = f_trial;
    if (f_trace) f_trace->push_back(f);
    if (rel < params.tol) break;
  }
  check_finite(x, "estimate", state.iteration, params.step);
  return next;
}

std::vector<std::uint8_t> uncovered_mask(const std::vector<Observation>& obs) {
  check_observations(obs);
  const std::size_t n = obs.front().frame.plane_size();
  std::vector<double> coverage(n, 0.0);
  for (const Observation& o : obs) {
    const auto c = apply_warp_adjoint(o.warp, o.keep);
    for (std::size_t i = 0; i < n; ++i) coverage[i] += c[i];
  }
  std::vector<std::uint8_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = coverage[i] > 0.0 ? 0 : 1;
  return out;
}

Image default_init(const std::vector<Observation>& obs, InitMode mode) {
  check_observations(obs);
  const Observation* ref = &obs.front();
  for (const Observation& o : obs) {
    if (o.warp.is_identity()) {
      ref = &o;
      break;
    }
  }
  const Image& y = ref->frame;
  const int w = y.width(), h = y.height();
  const std::size_t n = y.plane_size();
  std::vector<double> x(y.samples().begin(), y.samples().end());
  std::vector<std::uint8_t> known(n);
  for (std::size_t i = 0; i < n; ++i) known[i] = ref->keep[i] > 0.0;
  if (mode == InitMode::fused) {
    std::vector<double> weight(n, 0.0), acc(x.size(), 0.0);
    for (const Observation& o : obs) {
      const auto wsum = apply_warp_adjoint(o.warp, o.keep);
      std::vector<double> ky(o.frame.samples().begin(), o.frame.samples().end());
      for (std::size_t i = 0; i < ky.size(); ++i) ky[i] *= o.keep[i % n];
      const auto back = apply_warp_adjoint(o.warp, ky);
      for (std::size_t i = 0; i < n; ++i) weight[i] += wsum[i];
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += back[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (known[i] || !(weight[i] > 0.0)) continue;
      for (int c = 0; c < y.channels(); ++c) x[c * n + i] = acc[c * n + i] / weight[i];
      known[i] = 1;
    }
  }
  if (std::none_of(known.begin(), known.end(), [](std::uint8_t k) { return k; })) {
    std::fill(x.begin(), x.end(), 0.5);
    return Image(w, h, y.channels(), std::move(x));
  }
  for (;;) {
    std::vector<std::size_t> fill;
    std::vector<double> values;
    for (int py = 0; py < h; ++py) {
      for (int px = 0; px < w; ++px) {
        const std::size_t i = static_cast<std::size_t>(py) * w + px;
        if (known[i]) continue;
        std::vector<double> sums(y.channels(), 0.0);
        int count = 0;
        for (int qy = std::max(0, py - 2); qy <= std::min(h - 1, py + 2); ++qy) {
          for (int qx = std::max(0, px - 2); qx <= std::min(w - 1, px + 2); ++qx) {
            const std::size_t j = static_cast<std::size_t>(qy) * w + qx;
            if (!known[j]) continue;
            ++count;
            for (int c = 0; c < y.channels(); ++c) sums[c] += x[c * n + j];
          }
        }
        if (count == 0) continue;
        fill.push_back(i);
        for (double s : sums) values.push_back(s / count);
      }
    }
    if (fill.empty()) break;
    for (std::size_t k = 0; k < fill.size(); ++k) {
      known[fill[k]] = 1;
      for (int c = 0; c < y.channels(); ++c) x[c * n + fill[k]] = values[k * y.channels() + c];
    }
  }
  return Image(w, h, y.channels(), std::move(x));
}

DefenceResult run_defence(const std::vector<Observation>& obs, const SolverParams& params,
                      const Image& init) {
  params.validate();
  check_observations(obs);
  if (obs.size() > 16) throw ShapeError(kModule, "at most 16 observations are supported");
  if (!init.same_shape(obs.front().frame)) {
    throw ShapeError(kModule, "initial estimate does not match observations");
  }
  const double theta = shrink_threshold(params);
  const std::size_t uncovered = [&] {
    const auto u = uncovered_mask(obs);
    return static_cast<std::size_t>(std::count(u.begin(), u.end(), 1));
  }();

  SplitState state = init_state(init);
  DefenceResult result;
  result.trace.uncovered_pixels = uncovered;
  for (int k = 1; k <= params.outer_iters; ++k) {
    const std::vector<double> previous = state.x;
    state = x_update(state, obs, params);
    for (double& v : state.x) v = std::clamp(v, 0.0, 1.0);
    GradientField gb = grad(state.x, state.width, state.height, state.channels);
    for (std::size_t i = 0; i < gb.size(); ++i) {
      gb.gx[i] += state.b.gx[i];
      gb.gy[i] += state.b.gy[i];
    }
    state.d = shrink(gb, theta);
    for (std::size_t i = 0; i < gb.size(); ++i) {
      state.b.gx[i] = gb.gx[i] - state.d.gx[i];
      state.b.gy[i] = gb.gy[i] - state.d.gy[i];
    }
    state.iteration = k;

    double change2 = 0.0;
    for (std::size_t i = 0; i < previous.size(); ++i) {
      const double dlt = state.x[i] - previous[i];
      change2 += dlt * dlt;
    }
    const double rel = std::sqrt(change2) / std::max(norm(previous), 1e-12);
    const ObjectiveTerms terms = objective_terms(state.x, state.width, state.height,
                                                 state.channels, obs, params.mu);
    result.trace.rows.push_back({k, terms.total(), terms.data, terms.tv, rel, uncovered});
    if (rel < params.tol) break;
  }
  result.image = state.image();
  return result;
}

DefenceResult run_defence(const std::vector<Observation>& obs, const SolverParams& params) {
  return run_defence(obs, params, default_init(obs));
}

void write_trace_csv(const ConvergenceTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError(kModule, "cannot write " + path.string());
  out << "iter,objective,data_term,tv_term,rel_change,uncovered_pixels\n";
  char buf[256];
  for (const TraceRow& r : trace.rows) {
    std::snprintf(buf, sizeof buf, "%d,%.12g,%.12g,%.12g,%.12g,%zu\n", r.iter, r.objective,
                  r.data_term, r.tv_term, r.rel_change, r.uncovered_pixels);
    out << buf;
  }
  if (!out) throw IoError(kModule, "write failed for " + path.string());
}

}  // namespace defence
