#pragma once

// Trainable per-feature input activations.
//
//   step ladder: y = (1/n) * sum_i erf(k_i * (x - x_i))      range (-1, 1)
//   peak sum:    y = sum_i exp(-(x - x_i)^2 / w_i)            range (0, n]
//
// plus the single-parameter forms erf(k * x) and erf(x - x0). Parameters are
// stored as (position, shape) pairs per knot: shape is the slope k for
// steps and the width w for peaks.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "twnids/errors.hpp"

namespace twnids {

enum class ActivationKind { None, Step, Peak, ErfScale, ErfShift };

inline std::string_view to_string(ActivationKind k) {
  switch (k) {
    case ActivationKind::None: return "none";
    case ActivationKind::Step: return "step";
    case ActivationKind::Peak: return "peak";
    case ActivationKind::ErfScale: return "erf_scale";
    case ActivationKind::ErfShift: return "erf_shift";
  }
  return "none";
}

inline ActivationKind parse_activation_kind(std::string_view s) {
  if (s == "none") return ActivationKind::None;
  if (s == "step") return ActivationKind::Step;
  if (s == "peak") return ActivationKind::Peak;
  if (s == "erf_scale") return ActivationKind::ErfScale;
  if (s == "erf_shift") return ActivationKind::ErfShift;
  throw ConfigError("unknown activation kind '" + std::string(s) + "'");
}

inline constexpr double kMinPeakWidth = 1e-6;
inline constexpr double kTwoOverSqrtPi = 2.0 / 1.7724538509055160273;  // 2/sqrt(pi)

struct StepLadderParams {
  std::vector<double> k;   // slopes
  std::vector<double> x0;  // positions
  std::size_t n() const { return x0.size(); }
};

struct PeakParams {
  std::vector<double> w;   // widths, > 0
  std::vector<double> x0;  // positions
  std::size_t n() const { return x0.size(); }
};

struct StepGradients {
  double dx = 0.0;
  std::vector<double> dk;
  std::vector<double> dx0;
};

struct PeakGradients {
  double dx = 0.0;
  std::vector<double> dw;
  std::vector<double> dx0;
};

namespace detail {

inline void require_finite(double x) {
  if (!std::isfinite(x)) throw InvariantError("activation input is not finite");
}

inline double step_eval(double x, std::span<const double> k, std::span<const double> x0) {
  double sum = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) sum += std::erf(k[i] * (x - x0[i]));
  return sum / static_cast<double>(x0.size());
}

// Adds upstream-weighted parameter gradients; returns dL/dx.
inline double step_accumulate(double x, std::span<const double> k, std::span<const double> x0,
                              double upstream, std::span<double> dk, std::span<double> dx0) {
  const double scale = upstream * kTwoOverSqrtPi / static_cast<double>(x0.size());
  double dx = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double d = x - x0[i];
    const double u = k[i] * d;
    const double g = scale * std::exp(-u * u);
    if (!dk.empty()) dk[i] += g * d;
    if (!dx0.empty()) dx0[i] -= g * k[i];
    dx += g * k[i];
  }
  return dx;
}

inline double peak_eval(double x, std::span<const double> w, std::span<const double> x0) {
  double sum = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double d = x - x0[i];
    sum += std::exp(-d * d / w[i]);
  }
  return sum;
}

inline double peak_accumulate(double x, std::span<const double> w, std::span<const double> x0,
                              double upstream, std::span<double> dw, std::span<double> dx0) {
  double dx = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const double d = x - x0[i];
    const double e = upstream * std::exp(-d * d / w[i]);
    const double g_pos = e * 2.0 * d / w[i];
    dx0[i] += g_pos;
    dw[i] += e * d * d / (w[i] * w[i]);
    dx -= g_pos;
  }
  return dx;
}

}  // namespace detail

inline double step_forward(double x, const StepLadderParams& p) {
  detail::require_finite(x);
  return detail::step_eval(x, p.k, p.x0);
}

inline double peak_forward(double x, const PeakParams& p) {
  detail::require_finite(x);
  return detail::peak_eval(x, p.w, p.x0);
}

inline StepGradients step_backward(double x, const StepLadderParams& p, double upstream) {
  detail::require_finite(x);
  StepGradients g;
  g.dk.assign(p.n(), 0.0);
  g.dx0.assign(p.n(), 0.0);
  g.dx = detail::step_accumulate(x, p.k, p.x0, upstream, g.dk, g.dx0);
  return g;
}

inline PeakGradients peak_backward(double x, const PeakParams& p, double upstream) {
  detail::require_finite(x);
  PeakGradients g;
  g.dw.assign(p.n(), 0.0);
  g.dx0.assign(p.n(), 0.0);
  g.dx = detail::peak_accumulate(x, p.w, p.x0, upstream, g.dw, g.dx0);
  return g;
}

// Index of the knot with the least |position gradient| (lowest index on
// ties). Every other knot has both of its gradients zeroed. Returns 0 and
// leaves the gradients unchanged when there is at most one knot.
inline std::size_t localize_gradients(std::span<double> position_grad, std::span<double> shape_grad) {
  if (position_grad.size() <= 1) return 0;
  std::size_t keep = 0;
  for (std::size_t i = 1; i < position_grad.size(); ++i)
    if (std::abs(position_grad[i]) < std::abs(position_grad[keep])) keep = i;
  for (std::size_t i = 0; i < position_grad.size(); ++i) {
    if (i == keep) continue;
    position_grad[i] = 0.0;
    if (i < shape_grad.size()) shape_grad[i] = 0.0;
  }
  return keep;
}

// A configured activation for one model input. `position` holds x_i (empty
// for None and ErfScale), `shape` holds k_i or w_i (empty for None and
// ErfShift).
struct ActivationUnit {
  ActivationKind kind = ActivationKind::None;
  std::vector<double> position;
  std::vector<double> shape;

  std::size_t knots() const { return std::max(position.size(), shape.size()); }

  double forward(double x) const {
    switch (kind) {
      case ActivationKind::None: return x;
      case ActivationKind::Step: return detail::step_eval(x, shape, position);
      case ActivationKind::Peak: return detail::peak_eval(x, shape, position);
      case ActivationKind::ErfScale: return std::erf(shape[0] * x);
      case ActivationKind::ErfShift: return std::erf(x - position[0]);
    }
    return x;
  }

  // Accumulates parameter gradients into `grad` (same layout); returns dL/dx.
  double backward(double x, double upstream, ActivationUnit& grad) const {
    switch (kind) {
      case ActivationKind::None: return upstream;
      case ActivationKind::Step:
        return detail::step_accumulate(x, shape, position, upstream, grad.shape, grad.position);
      case ActivationKind::Peak:
        return detail::peak_accumulate(x, shape, position, upstream, grad.shape, grad.position);
      case ActivationKind::ErfScale: {
        const double u = shape[0] * x;
        const double g = upstream * kTwoOverSqrtPi * std::exp(-u * u);
        grad.shape[0] += g * x;
        return g * shape[0];
      }
      case ActivationKind::ErfShift: {
        const double u = x - position[0];
        const double g = upstream * kTwoOverSqrtPi * std::exp(-u * u);
        grad.position[0] -= g;
        return g;
      }
    }
    return upstream;
  }

  ActivationUnit zeros_like() const {
    ActivationUnit z;
    z.kind = kind;
    z.position.assign(position.size(), 0.0);
    z.shape.assign(shape.size(), 0.0);
    return z;
  }
};

struct ActivationInitOptions {
  double slope_scale = 1.0;  // k_i = slope_scale / gap_i
  double min_gap = 1e-9;     // gaps below this fall back to range / (n + 1)
};

namespace detail {

// Linear-interpolation quantile of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

inline double quantile(std::vector<double> samples, double q) {
  if (samples.empty()) throw std::invalid_argument("quantile of empty sample");
  std::sort(samples.begin(), samples.end());
  return detail::quantile_sorted(samples, q);
}

// Data-driven knot placement: knot i sits at the i/(n+1) quantile; its scale
// is the spread between the neighbouring half-cell quantiles
// (i +- 0.5)/(n+1). Steps get slope c/gap, peaks get width gap^2. A
// constant feature falls back to unit slope/width at the constant.
inline ActivationUnit init_from_data(std::span<const double> samples, ActivationKind kind, std::size_t n,
                                     const ActivationInitOptions& opt = {}) {
  if (kind != ActivationKind::Step && kind != ActivationKind::Peak)
    throw ConfigError("init_from_data supports step and peak activations");
  if (n == 0) throw ConfigError("activation needs at least one knot");
  if (samples.empty()) throw ConfigError("init_from_data needs samples");
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front();
  const double hi = sorted.back();

  ActivationUnit u;
  u.kind = kind;
  u.position.resize(n);
  u.shape.resize(n);
  const double cells = static_cast<double>(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double q = static_cast<double>(i + 1) / cells;
    u.position[i] = detail::quantile_sorted(sorted, q);
    double gap = detail::quantile_sorted(sorted, std::min(1.0, q + 0.5 / cells)) -
                 detail::quantile_sorted(sorted, std::max(0.0, q - 0.5 / cells));
    if (gap < opt.min_gap) gap = (hi - lo) / cells;
    if (gap < opt.min_gap) {
      u.shape[i] = 1.0;  // constant feature
      continue;
    }
    u.shape[i] = kind == ActivationKind::Step ? opt.slope_scale / gap
                                              : std::max(gap * gap, kMinPeakWidth);
  }
  return u;
}

}  // namespace twnids
