#pragma once

// Flow-profile, branching and thrombus analyses built on fitted line models.

#include <algorithm>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "caidc/error.hpp"
#include "caidc/lm_fitter.hpp"
#include "caidc/sigmoid_model.hpp"
#include "caidc/slice_engine.hpp"
#include "caidc/stats.hpp"

namespace caidc::hemo {

struct LineMetrics {
  int slice_index = 0;
  Axis axis = Axis::row;
  std::size_t line = 0;
  EdgeMetrics rising;
  EdgeMetrics falling;
  double plateau_width = 0.0;  // px, signed
  std::optional<double> ratio_rising;   // transition width / plateau width
  std::optional<double> ratio_falling;
  double estimated_diameter_px = 0.0;
  double estimated_diameter_mm = 0.0;

  bool degenerate() const { return !(plateau_width > 0.0); }
};

/// Closed-form metrics of one fitted line. Ratios are left empty when the
/// plateau is degenerate.
inline LineMetrics line_metrics(const ModelCoefficients& model, const AccuracyPolicy& policy,
                                double spacing_mm, int slice_index = 0, Axis axis = Axis::row,
                                std::size_t line = 0) {
  LineMetrics m;
  m.slice_index = slice_index;
  m.axis = axis;
  m.line = line;
  m.rising = edge_metrics(model, policy, Edge::rising);
  m.falling = edge_metrics(model, policy, Edge::falling);
  m.plateau_width = plateau_width(model, policy).value;
  if (m.plateau_width > 0.0) {
    m.ratio_rising = m.rising.transition_width / m.plateau_width;
    m.ratio_falling = m.falling.transition_width / m.plateau_width;
  }
  m.estimated_diameter_px = estimated_diameter(model, policy);
  m.estimated_diameter_mm = m.estimated_diameter_px * spacing_mm;
  return m;
}

struct CentralLines {
  PixelIndex center;
  std::optional<LineMetrics> row;
  std::optional<LineMetrics> column;
  std::vector<std::string> flags;  // why a line is missing
};

/// Fits only the P-region runs through the lumen's geometric center.
inline DirectionFits fit_central_lines(const SliceData& slice, const FitConfig& config = {},
                                       const AccuracyPolicy& policy = {}) {
  slice.check();
  const PixelIndex center = geometric_center(slice.s_mask);
  DirectionFits fits;
  fits.rows.resize(slice.pixels.rows());
  fits.columns.resize(slice.pixels.cols());
  for (auto [s, e] : mask_runs(slice.p_mask, Axis::row, center.row))
    if (center.col >= s && center.col <= e)
      fits.rows[center.row].push_back(fit_span(slice.pixels, Axis::row, center.row, s, e, config, policy));
  for (auto [s, e] : mask_runs(slice.p_mask, Axis::column, center.col))
    if (center.row >= s && center.row <= e)
      fits.columns[center.col].push_back(fit_span(slice.pixels, Axis::column, center.col, s, e, config, policy));
  return fits;
}

/// Metrics of the central row and column through the geometric center.
/// Lines with a degenerate plateau are excluded and flagged.
inline CentralLines central_line_metrics(const SliceData& slice, const DirectionFits& fits,
                                         const AccuracyPolicy& policy = {}) {
  CentralLines out;
  out.center = geometric_center(slice.s_mask);
  auto extract = [&](Axis axis, double spacing) -> std::optional<LineMetrics> {
    const LineFit* lf = fits.find(axis, out.center.row, out.center.col);
    const std::string tag(to_string(axis));
    if (!lf) {
      out.flags.push_back("central " + tag + " not fitted");
      return std::nullopt;
    }
    if (!validate(lf->fit->coefficients).ok()) {
      out.flags.push_back("central " + tag + " fit ill-formed");
      return std::nullopt;
    }
    LineMetrics m = line_metrics(lf->fit->coefficients, policy, spacing, slice.slice_index, axis, lf->line);
    if (m.degenerate()) {
      out.flags.push_back(std::string(to_string(ErrorCode::degenerate_plateau)) + " on central " + tag);
      return std::nullopt;
    }
    return m;
  };
  out.row = extract(Axis::row, slice.spacing.col_mm);
  out.column = extract(Axis::column, slice.spacing.row_mm);
  return out;
}

inline CentralLines central_line_metrics(const SliceData& slice, const CaidcField& composed,
                                         const AccuracyPolicy& policy = {}) {
  return central_line_metrics(slice, composed.fits, policy);
}

enum class DiameterClass { norm, dilatation, aneurysm };

constexpr std::string_view to_string(DiameterClass c) {
  switch (c) {
    case DiameterClass::norm: return "norm";
    case DiameterClass::dilatation: return "dilatation";
    case DiameterClass::aneurysm: return "aneurysm";
  }
  return "norm";
}

/// < 25 mm norm, [25, 30) mm dilatation, >= 30 mm aneurysm.
inline DiameterClass classify_diameter(double diameter_mm) {
  if (!(diameter_mm > 0.0)) throw Error(ErrorCode::non_positive_diameter, "diameter must be positive");
  if (diameter_mm < 25.0) return DiameterClass::norm;
  if (diameter_mm < 30.0) return DiameterClass::dilatation;
  return DiameterClass::aneurysm;
}

// ---------------------------------------------------------------------------
// Cohort comparisons

struct CohortReport {
  std::string metric;
  std::vector<std::string> groups;
  std::vector<std::vector<double>> samples;
  std::string test;
  stats::TestResult result;
  std::string direction;  // e.g. "normal > aneurysm", from medians
  std::size_t excluded_lines = 0;
};

inline constexpr std::size_t kMinCohortSlices = 10;
inline constexpr std::size_t kMinThrombusRows = 5;

namespace detail {

inline std::string median_direction(const std::string& first, double a, const std::string& second, double b) {
  if (a > b) return first + " > " + second;
  if (a < b) return first + " < " + second;
  return first + " = " + second;
}

inline CohortReport u_test(std::string metric, const std::string& first, std::vector<double> x,
                           const std::string& second, std::vector<double> y, std::size_t excluded) {
  CohortReport r;
  r.metric = std::move(metric);
  r.groups = {first, second};
  r.test = "mann_whitney_u";
  r.result = stats::mann_whitney_u(x, y);
  r.direction = median_direction(first, stats::median(x), second, stats::median(y));
  r.samples = {std::move(x), std::move(y)};
  r.excluded_lines = excluded;
  return r;
}

inline std::size_t distinct_slices(const std::vector<LineMetrics>& lines) {
  std::set<int> s;
  for (const auto& l : lines) s.insert(l.slice_index);
  return s.size();
}

}  // namespace detail

struct FlowReport {
  std::vector<CohortReport> reports;  // ratio rising/falling/pooled, |slope| rising/falling/pooled
  /// Per-edge slope comparisons significant while the pooled slope is not,
  /// and the pooled ratio still significant.
  bool slope_pooling_caveat = false;

  const CohortReport& get(std::string_view metric) const {
    for (const auto& r : reports)
      if (r.metric == metric) return r;
    throw Error(ErrorCode::invalid_argument, "no report for metric " + std::string(metric));
  }
};

/// Two-sided U-tests between normal and aneurysmal central-line metrics:
/// transition-to-plateau ratio per edge and pooled, |slope| per edge and
/// pooled. Degenerate-plateau lines are left out of the ratio tests.
inline FlowReport flow_profile_compare(const std::vector<LineMetrics>& normal,
                                       const std::vector<LineMetrics>& aneurysmal) {
  if (detail::distinct_slices(normal) < kMinCohortSlices ||
      detail::distinct_slices(aneurysmal) < kMinCohortSlices)
    throw Error(ErrorCode::insufficient_slices, "each cohort needs at least 10 slices");

  struct Samples {
    std::vector<double> ratio_rising, ratio_falling, ratio_pooled;
    std::vector<double> slope_rising, slope_falling, slope_pooled;
    std::size_t excluded = 0;
  };
  auto collect = [](const std::vector<LineMetrics>& lines) {
    Samples s;
    for (const auto& l : lines) {
      s.slope_rising.push_back(std::abs(l.rising.slope));
      s.slope_falling.push_back(std::abs(l.falling.slope));
      if (l.degenerate() || !l.ratio_rising || !l.ratio_falling) {
        ++s.excluded;
        continue;
      }
      s.ratio_rising.push_back(*l.ratio_rising);
      s.ratio_falling.push_back(*l.ratio_falling);
    }
    s.ratio_pooled = s.ratio_rising;
    s.ratio_pooled.insert(s.ratio_pooled.end(), s.ratio_falling.begin(), s.ratio_falling.end());
    s.slope_pooled = s.slope_rising;
    s.slope_pooled.insert(s.slope_pooled.end(), s.slope_falling.begin(), s.slope_falling.end());
    return s;
  };
  const Samples n = collect(normal);
  const Samples a = collect(aneurysmal);
  if (n.ratio_rising.empty() || a.ratio_rising.empty())
    throw Error(ErrorCode::insufficient_slices, "no non-degenerate lines left for the ratio tests");

  const std::size_t excluded = n.excluded + a.excluded;
  FlowReport out;
  out.reports.push_back(detail::u_test("ratio_rising", "normal", n.ratio_rising, "aneurysm", a.ratio_rising, excluded));
  out.reports.push_back(detail::u_test("ratio_falling", "normal", n.ratio_falling, "aneurysm", a.ratio_falling, excluded));
  out.reports.push_back(detail::u_test("ratio_pooled", "normal", n.ratio_pooled, "aneurysm", a.ratio_pooled, excluded));
  out.reports.push_back(detail::u_test("abs_slope_rising", "normal", n.slope_rising, "aneurysm", a.slope_rising, 0));
  out.reports.push_back(detail::u_test("abs_slope_falling", "normal", n.slope_falling, "aneurysm", a.slope_falling, 0));
  out.reports.push_back(detail::u_test("abs_slope_pooled", "normal", n.slope_pooled, "aneurysm", a.slope_pooled, 0));

  const bool edge_significant = out.get("abs_slope_rising").result.p_value < kSignificance ||
                                out.get("abs_slope_falling").result.p_value < kSignificance;
  out.slope_pooling_caveat = edge_significant &&
                             out.get("abs_slope_pooled").result.p_value >= kSignificance &&
                             out.get("ratio_pooled").result.p_value < kSignificance;
  return out;
}

// ---------------------------------------------------------------------------

struct BranchSlice {
  const SliceData* slice = nullptr;
  const CaidcField* field = nullptr;
};

struct BranchingReport {
  CohortReport kruskal;
  std::vector<stats::DunnComparison> dunn;
  std::vector<int> slice_indices;  // group order
  std::vector<int> branch_slices;  // slices differing from most others
};

/// Plateau levels (F0 + a) of the fitted rows and columns crossing the
/// S-region with a non-degenerate plateau, one value per line.
inline std::vector<double> plateau_levels(const SliceData& slice, const CaidcField& field) {
  std::vector<double> out;
  auto visit = [&](const std::vector<std::vector<LineFit>>& lines, Axis axis) {
    for (const auto& per_line : lines)
      for (const auto& lf : per_line) {
        if (!lf.fit || !lf.zones) continue;
        if (!(lf.zones->falling.x1 > lf.zones->rising.x2)) continue;
        bool crosses = false;
        for (std::size_t pos = lf.start; pos <= lf.end && !crosses; ++pos)
          crosses = axis == Axis::row ? slice.s_mask(lf.line, pos) : slice.s_mask(pos, lf.line);
        if (!crosses) continue;
        const auto& m = lf.fit->coefficients;
        out.push_back(m.baseline + m.amplitude);
      }
  };
  visit(field.fits.rows, Axis::row);
  visit(field.fits.columns, Axis::column);
  return out;
}

/// Kruskal-Wallis across slices of their plateau levels, then Dunn's test.
/// A slice is marked as branching when it differs (Bonferroni p < 0.05)
/// from more than half of the other slices.
inline BranchingReport branching_analysis(const std::vector<BranchSlice>& slices) {
  if (slices.size() < 3) throw Error(ErrorCode::insufficient_slices, "branching analysis needs at least 3 slices");
  BranchingReport out;
  std::vector<std::vector<double>> groups;
  for (const auto& s : slices) {
    groups.push_back(plateau_levels(*s.slice, *s.field));
    if (groups.back().empty())
      throw Error(ErrorCode::insufficient_data, "slice " + std::to_string(s.slice->slice_index) +
                                                    " has no plateau lines");
    out.slice_indices.push_back(s.slice->slice_index);
    out.kruskal.groups.push_back("slice_" + std::to_string(s.slice->slice_index));
  }
  out.kruskal.metric = "plateau_level";
  out.kruskal.test = "kruskal_wallis";
  out.kruskal.result = stats::kruskal_wallis(groups);
  out.dunn = stats::dunn_posthoc(groups);
  if (out.kruskal.result.p_value < kSignificance) {
    std::vector<std::size_t> differs(groups.size(), 0);
    for (const auto& cmp : out.dunn)
      if (cmp.p_adjusted < kSignificance) {
        ++differs[cmp.first];
        ++differs[cmp.second];
      }
    for (std::size_t g = 0; g < groups.size(); ++g)
      if (2 * differs[g] > groups.size() - 1) out.branch_slices.push_back(out.slice_indices[g]);
    out.kruskal.direction = out.branch_slices.empty() ? "heterogeneous" : "branch slices differ";
  } else {
    out.kruskal.direction = "homogeneous";
  }
  out.kruskal.samples = std::move(groups);
  return out;
}

// ---------------------------------------------------------------------------

struct ThrombusReport {
  CohortReport width;
  CohortReport slope;
  bool rising_wider = false;      // rising edge (clot contact) has the wider transition
  bool rising_shallower = false;  // and the smaller |slope|
};

/// Paired signed-rank comparison of rising against falling edges across the
/// rows crossing the clot: transition widths and |slope|.
inline ThrombusReport thrombus_edge_compare(const std::vector<LineMetrics>& rows) {
  if (rows.size() < kMinThrombusRows) throw Error(ErrorCode::insufficient_rows, "need at least 5 clot rows");
  std::vector<double> w_rise, w_fall, s_rise, s_fall, w_diff, s_diff;
  for (const auto& r : rows) {
    w_rise.push_back(r.rising.transition_width);
    w_fall.push_back(r.falling.transition_width);
    s_rise.push_back(std::abs(r.rising.slope));
    s_fall.push_back(std::abs(r.falling.slope));
    w_diff.push_back(w_rise.back() - w_fall.back());
    s_diff.push_back(s_rise.back() - s_fall.back());
  }
  auto paired = [](std::string metric, std::vector<double> x, std::vector<double> y, const std::vector<double>& diff) {
    CohortReport r;
    r.metric = std::move(metric);
    r.groups = {"rising", "falling"};
    r.test = "wilcoxon_signed_rank";
    r.result = stats::wilcoxon_signed_rank(x, y);
    r.direction = detail::median_direction("rising", stats::median(diff), "falling", 0.0);
    r.samples = {std::move(x), std::move(y)};
    return r;
  };
  ThrombusReport out;
  out.width = paired("transition_width", w_rise, w_fall, w_diff);
  out.slope = paired("abs_slope", s_rise, s_fall, s_diff);
  out.rising_wider = stats::median(w_diff) > 0.0;
  out.rising_shallower = stats::median(s_diff) < 0.0;
  return out;
}

}  // namespace caidc::hemo
