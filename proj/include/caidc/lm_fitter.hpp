#pragma once

// Bounded Levenberg-Marquardt fit of the edged-plateau model to one line
// profile, with the data-driven initial guess used for CTA lines.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "caidc/error.hpp"
#include "caidc/sigmoid_model.hpp"

namespace caidc {

enum class Axis { row, column };

constexpr std::string_view to_string(Axis axis) { return axis == Axis::row ? "row" : "column"; }

/// Pixel interval [start_px, end_px], inclusive.
struct Span {
  double start_px = 0.0;
  double end_px = 0.0;
};

inline constexpr std::size_t kMinProfileLength = 8;

struct LineProfile {
  std::vector<double> values;
  double x0 = 0.0;  // coordinate of values[0]
  Axis axis = Axis::row;
  int index = 0;
  Span span;

  std::size_t size() const noexcept { return values.size(); }
  double x(std::size_t i) const noexcept { return x0 + static_cast<double>(i); }

  void check() const {
    if (values.size() < kMinProfileLength)
      throw Error(ErrorCode::invalid_argument, "profile needs at least 8 samples");
    const double last = x(values.size() - 1);
    if (span.start_px < x0 || span.end_px > last || span.start_px > span.end_px)
      throw Error(ErrorCode::invalid_argument, "span outside profile");
  }
};

struct FitConfig {
  int max_iterations = 100;
  double cost_tolerance = 1e-10;
  double step_tolerance = 1e-10;
  double damping_init = 1.0;
  double damping_up = 10.0;
  double damping_down = 0.1;
  int max_rejections = 20;
  std::array<double, 6> lower_bounds = {-std::numeric_limits<double>::infinity(),
                                        0.0, 1e-6, 0.0, 1e-6, 0.0};

  void check() const {
    if (max_iterations < 1) throw Error(ErrorCode::invalid_argument, "max_iterations < 1");
    if (!(cost_tolerance > 0 && step_tolerance > 0))
      throw Error(ErrorCode::invalid_argument, "tolerances must be positive");
    if (!(damping_init > 0 && damping_up > 0 && damping_down > 0))
      throw Error(ErrorCode::invalid_argument, "damping factors must be positive");
    if (lower_bounds[1] < 0 || lower_bounds[3] < 0 || lower_bounds[5] < 0 ||
        lower_bounds[2] < 1e-6 || lower_bounds[4] < 1e-6)
      throw Error(ErrorCode::invalid_argument, "lower bounds weaker than model constraints");
  }
};

enum class Termination {
  zero_residual,
  cost_tolerance,
  step_tolerance,
  max_iterations,
  singular_normal_equations,
};

constexpr std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::zero_residual: return "zero_residual";
    case Termination::cost_tolerance: return "cost_tolerance";
    case Termination::step_tolerance: return "step_tolerance";
    case Termination::max_iterations: return "max_iterations";
    case Termination::singular_normal_equations: return "singular_normal_equations";
  }
  return "unknown";
}

struct FitResult {
  ModelCoefficients coefficients;
  double rmse = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> residuals;  // observed - model
  Termination termination = Termination::max_iterations;
};

inline double rmse(std::span<const double> observed, std::span<const double> predicted) {
  if (observed.size() != predicted.size())
    throw Error(ErrorCode::length_mismatch, "rmse inputs differ in length");
  if (observed.empty()) throw Error(ErrorCode::length_mismatch, "rmse of empty sequences");
  double sum = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double r = observed[i] - predicted[i];
    sum += r * r;
  }
  return std::sqrt(sum / static_cast<double>(observed.size()));
}

/// Data-driven starting point: F0 is the minimum sample, a the distance from
/// the smallest positive sample to the maximum (the minimum stands in when no
/// sample is positive), the inflections sit on the span ends, b = d = 1.
inline ModelCoefficients initial_guess(const LineProfile& profile) {
  profile.check();
  const auto [lo, hi] = std::minmax_element(profile.values.begin(), profile.values.end());
  if (*lo == *hi) throw Error(ErrorCode::degenerate_profile, "constant profile");
  double min_positive = std::numeric_limits<double>::infinity();
  for (double v : profile.values)
    if (v > 0.0) min_positive = std::min(min_positive, v);
  const double reference = std::isfinite(min_positive) ? min_positive : *lo;
  ModelCoefficients init;
  init.baseline = *lo;
  init.amplitude = *hi - reference;
  init.rise_rate = 1.0;
  init.rise_shift = profile.span.start_px;
  init.fall_rate = 1.0;
  init.fall_shift = profile.span.end_px;
  return init;
}

namespace detail {

inline ModelCoefficients project(const ModelCoefficients& m, const std::array<double, 6>& lower) {
  auto p = m.to_array();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::max(p[i], lower[i]);
  return ModelCoefficients::from_array(p);
}

inline double sum_squares(const LineProfile& profile, const ModelCoefficients& m,
                          std::vector<double>& residuals) {
  residuals.resize(profile.size());
  double sse = 0.0;
  for (std::size_t i = 0; i < profile.size(); ++i) {
    residuals[i] = profile.values[i] - evaluate(m, profile.x(i));
    sse += residuals[i] * residuals[i];
  }
  return sse;
}

inline double relative_step(const ModelCoefficients& from, const ModelCoefficients& to) {
  const auto a = from.to_array();
  const auto b = to.to_array();
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs(b[i] - a[i]) / std::max(std::abs(a[i]), 1.0));
  return worst;
}

}  // namespace detail

/// Minimizes the sum of squared residuals from `init`. The shifts are solved
/// in coordinates centered on the profile (c' = c - b*xm) so the rate/shift
/// pairs are not nearly collinear; every trial point is mapped back and
/// clamped onto the lower bounds before it is evaluated.
inline FitResult fit_line(const LineProfile& profile, const ModelCoefficients& init,
                          const FitConfig& config = {}) {
  profile.check();
  config.check();
  const std::size_t n = profile.size();
  const double xm = profile.x0 + 0.5 * static_cast<double>(n - 1);

  FitResult result;
  ModelCoefficients current = detail::project(init, config.lower_bounds);
  std::vector<double> residuals;
  std::vector<double> trial_residuals;
  double cost = detail::sum_squares(profile, current, residuals);

  auto finish = [&](Termination why, bool converged) {
    result.coefficients = current;
    result.residuals = residuals;
    result.rmse = std::sqrt(cost / static_cast<double>(n));
    result.termination = why;
    result.converged = converged;
    return result;
  };

  if (cost == 0.0) return finish(Termination::zero_residual, true);

  using Mat6 = Eigen::Matrix<double, 6, 6>;
  using Vec6 = Eigen::Matrix<double, 6, 1>;
  double lambda = config.damping_init;

  for (int iter = 1; iter <= config.max_iterations; ++iter) {
    result.iterations = iter;
    Mat6 normal = Mat6::Zero();
    Vec6 rhs = Vec6::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      const double x = profile.x(i);
      auto g = gradient(current, x);
      // chain rule for the centered shifts: d/db' = d/db + xm * d/dc
      g[2] += xm * g[3];
      g[4] += xm * g[5];
      const Eigen::Map<const Vec6> row(g.data());
      normal.selfadjointView<Eigen::Lower>().rankUpdate(row);
      rhs += row * residuals[i];
    }
    normal = normal.selfadjointView<Eigen::Lower>();
    const double diag_floor = std::max(normal.diagonal().maxCoeff() * 1e-12, 1e-300);

    int rejections = 0;
    while (true) {
      Mat6 damped = normal;
      for (int k = 0; k < 6; ++k) damped(k, k) += lambda * std::max(normal(k, k), diag_floor);
      const Eigen::LDLT<Mat6> solver(damped);
      Vec6 delta = solver.solve(rhs);
      if (solver.info() != Eigen::Success || !delta.allFinite()) {
        lambda *= config.damping_up;
        if (++rejections >= config.max_rejections)
          return finish(Termination::singular_normal_equations, false);
        continue;
      }

      // map the centered step back to (F0, a, b, c, d, e)
      auto p = current.to_array();
      const double c_centered = p[3] - p[2] * xm + delta[3];
      const double e_centered = p[5] - p[4] * xm + delta[5];
      p[0] += delta[0];
      p[1] += delta[1];
      p[2] += delta[2];
      p[4] += delta[4];
      p[3] = c_centered + p[2] * xm;
      p[5] = e_centered + p[4] * xm;
      const ModelCoefficients trial =
          detail::project(ModelCoefficients::from_array(p), config.lower_bounds);

      const double step = detail::relative_step(current, trial);
      const double trial_cost = detail::sum_squares(profile, trial, trial_residuals);
      if (trial_cost < cost) {
        const double reduction = (cost - trial_cost) / cost;
        current = trial;
        cost = trial_cost;
        residuals.swap(trial_residuals);
        lambda = std::max(lambda * config.damping_down, 1e-15);
        if (cost == 0.0) return finish(Termination::zero_residual, true);
        if (reduction <= config.cost_tolerance) return finish(Termination::cost_tolerance, true);
        if (step <= config.step_tolerance) return finish(Termination::step_tolerance, true);
        break;
      }
      if (step <= config.step_tolerance) return finish(Termination::step_tolerance, true);
      lambda *= config.damping_up;
      if (++rejections >= config.max_rejections)
        return finish(Termination::singular_normal_equations, false);
    }
  }
  return finish(Termination::max_iterations, false);
}

}  // namespace caidc
