#pragma once

// Edged-plateau (double sigmoid) model of the contrast-agent-induced
// component of a CT density profile, plus its closed-form edge metrics.
//
//   f(x) = F0 - a * ( 1/(1+exp(b x - c)) - 1/(1+exp(d x - e)) )
//
// F0 is the baseline, a the plateau amplitude above it, (b, c) shape the
// rising edge and (d, e) the falling edge. Inflections sit at c/b and e/d.

#include <array>
#include <cmath>
#include <string>

#include "caidc/error.hpp"

namespace caidc {

struct ModelCoefficients {
  double baseline = 0.0;    // F0, HU
  double amplitude = 0.0;   // a, HU
  double rise_rate = 1.0;   // b, 1/px
  double rise_shift = 0.0;  // c
  double fall_rate = 1.0;   // d, 1/px
  double fall_shift = 0.0;  // e

  static constexpr std::size_t size = 6;

  std::array<double, size> to_array() const {
    return {baseline, amplitude, rise_rate, rise_shift, fall_rate, fall_shift};
  }
  static ModelCoefficients from_array(const std::array<double, size>& p) {
    return {p[0], p[1], p[2], p[3], p[4], p[5]};
  }

  double rising_inflection() const { return rise_shift / rise_rate; }
  double falling_inflection() const { return fall_shift / fall_rate; }

  friend bool operator==(const ModelCoefficients&, const ModelCoefficients&) = default;
};

inline constexpr std::array<const char*, ModelCoefficients::size> kCoefficientNames = {
    "baseline", "amplitude", "rise_rate", "rise_shift", "fall_rate", "fall_shift"};

/// Relative accuracy used to place transition-zone endpoints. The default
/// corresponds to 1 HU at the largest expected amplitude of 500 HU.
struct AccuracyPolicy {
  double delta_y = 0.002;

  void check() const {
    if (!(delta_y > 0.0 && delta_y < 0.5))
      throw Error(ErrorCode::invalid_argument, "delta_y must lie in (0, 0.5)");
  }
};

enum class Edge { rising, falling };

struct EdgeMetrics {
  double inflection_x = 0.0;
  double inflection_value = 0.0;
  double slope = 0.0;  // tangent at the inflection, HU/px
  double x1 = 0.0;
  double x2 = 0.0;
  double transition_width = 0.0;
};

namespace detail {

// Exponent arguments beyond this magnitude saturate the logistic term.
inline constexpr double kSaturation = 700.0;

/// 1 / (1 + exp(t)), saturated so it stays total over finite inputs.
inline double falling_logistic(double t) {
  if (t > kSaturation) return 0.0;
  if (t < -kSaturation) return 1.0;
  return 1.0 / (1.0 + std::exp(t));
}

}  // namespace detail

inline double evaluate(const ModelCoefficients& m, double x) {
  const double s_rise = detail::falling_logistic(m.rise_rate * x - m.rise_shift);
  const double s_fall = detail::falling_logistic(m.fall_rate * x - m.fall_shift);
  return m.baseline - m.amplitude * (s_rise - s_fall);
}

/// Analytic first derivative: the rising term a*b*s(1-s) plus the falling
/// term -a*d*s(1-s), with s the respective logistic value.
inline double derivative(const ModelCoefficients& m, double x) {
  const double s_rise = detail::falling_logistic(m.rise_rate * x - m.rise_shift);
  const double s_fall = detail::falling_logistic(m.fall_rate * x - m.fall_shift);
  return m.amplitude * (m.rise_rate * s_rise * (1.0 - s_rise) -
                        m.fall_rate * s_fall * (1.0 - s_fall));
}

/// Partial derivatives of f(x) with respect to (F0, a, b, c, d, e).
inline std::array<double, 6> gradient(const ModelCoefficients& m, double x) {
  const double s_rise = detail::falling_logistic(m.rise_rate * x - m.rise_shift);
  const double s_fall = detail::falling_logistic(m.fall_rate * x - m.fall_shift);
  const double w_rise = m.amplitude * s_rise * (1.0 - s_rise);
  const double w_fall = m.amplitude * s_fall * (1.0 - s_fall);
  return {1.0, s_fall - s_rise, w_rise * x, -w_rise, -w_fall * x, w_fall};
}

/// theta = |ln(delta_y)|. The exact endpoint solution is
/// |ln(delta_y / (1 - delta_y))|, about 0.03% larger at the default accuracy;
/// exact_theta() exposes it for comparison.
inline double theta(const AccuracyPolicy& policy) {
  policy.check();
  return std::abs(std::log(policy.delta_y));
}

inline double exact_theta(const AccuracyPolicy& policy) {
  policy.check();
  return std::abs(std::log(policy.delta_y / (1.0 - policy.delta_y)));
}

inline ValidationReport validate(const ModelCoefficients& m) {
  ValidationReport report;
  for (double v : m.to_array()) {
    if (!std::isfinite(v)) {
      report.add("all coefficients finite");
      return report;
    }
  }
  if (m.amplitude < 0.0) report.add("a >= 0");
  if (!(m.rise_rate > 0.0)) report.add("b > 0");
  if (m.rise_shift < 0.0) report.add("c >= 0");
  if (!(m.fall_rate > 0.0)) report.add("d > 0");
  if (m.fall_shift < 0.0) report.add("e >= 0");
  if (m.rise_rate > 0.0 && m.fall_rate > 0.0 && m.rising_inflection() > m.falling_inflection())
    report.add("rising precedes falling");
  return report;
}

namespace detail {

inline void require_well_formed(const ModelCoefficients& m) {
  const ValidationReport report = validate(m);
  if (report.ok()) return;
  std::string joined;
  for (const auto& v : report.violations) joined += (joined.empty() ? "" : ", ") + v;
  const bool only_ordering =
      report.violations.size() == 1 && report.violations.front() == "rising precedes falling";
  throw Error(only_ordering ? ErrorCode::ill_formed_model : ErrorCode::invalid_argument,
              "violated: " + joined);
}

}  // namespace detail

inline EdgeMetrics edge_metrics(const ModelCoefficients& m, const AccuracyPolicy& policy,
                                Edge edge) {
  detail::require_well_formed(m);
  const double th = theta(policy);
  EdgeMetrics out;
  out.inflection_value = m.baseline + m.amplitude / 2.0;
  if (edge == Edge::rising) {
    out.inflection_x = m.rising_inflection();
    out.slope = m.amplitude * m.rise_rate / 4.0;
    out.x1 = (m.rise_shift - th) / m.rise_rate;
    out.x2 = (m.rise_shift + th) / m.rise_rate;
  } else {
    out.inflection_x = m.falling_inflection();
    out.slope = -m.amplitude * m.fall_rate / 4.0;
    out.x1 = (m.fall_shift - th) / m.fall_rate;
    out.x2 = (m.fall_shift + th) / m.fall_rate;
  }
  out.transition_width = std::abs(out.x2 - out.x1);
  return out;
}

/// Signed plateau width. Non-positive values mean the two transition zones
/// overlap; they are reported, not clamped.
struct PlateauWidth {
  double value = 0.0;
  bool degenerate() const { return !(value > 0.0); }
};

inline PlateauWidth plateau_width(const ModelCoefficients& m, const AccuracyPolicy& policy) {
  detail::require_well_formed(m);
  const double th = theta(policy);
  return {m.falling_inflection() - m.rising_inflection() -
          th * (1.0 / m.rise_rate + 1.0 / m.fall_rate)};
}

/// Full extent of the profile: plateau plus both transition zones.
inline double estimated_diameter(const ModelCoefficients& m, const AccuracyPolicy& policy) {
  detail::require_well_formed(m);
  const double th = theta(policy);
  return m.falling_inflection() - m.rising_inflection() +
         th * (1.0 / m.rise_rate + 1.0 / m.fall_rate);
}

}  // namespace caidc
