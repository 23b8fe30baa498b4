#pragma once

// Per-slice processing: P-region propagation, calcinate suppression,
// row/column fitting, pointwise merge, zone classification with endpoint
// adjustment, edge-direction check, goodness-of-fit and CA elimination.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "caidc/error.hpp"
#include "caidc/grid.hpp"
#include "caidc/lm_fitter.hpp"
#include "caidc/sigmoid_model.hpp"
#include "caidc/stats.hpp"

namespace caidc {

struct Spacing {
  double row_mm = 1.0;
  double col_mm = 1.0;
};

struct SliceData {
  Image pixels;
  Mask s_mask;  // lumen
  Mask p_mask;  // lumen dilated into wall and surrounding tissue
  Spacing spacing;
  int slice_index = 0;

  void check() const {
    if (!pixels.same_shape(s_mask) || !pixels.same_shape(p_mask))
      throw Error(ErrorCode::dim_mismatch, "slice matrices differ in shape");
    if (!(spacing.row_mm > 0 && spacing.col_mm > 0))
      throw Error(ErrorCode::invalid_argument, "spacing must be positive");
    for (std::size_t i = 0; i < s_mask.size(); ++i)
      if (s_mask.data()[i] && !p_mask.data()[i])
        throw Error(ErrorCode::invalid_argument, "S-region not contained in P-region");
  }
};

enum class Direction : std::uint8_t { none, row, column };
enum class Zone : std::uint8_t { unfitted, baseline, transition, plateau };

constexpr std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::none: return "none";
    case Direction::row: return "row";
    case Direction::column: return "column";
  }
  return "none";
}

constexpr std::string_view to_string(Zone z) {
  switch (z) {
    case Zone::unfitted: return "unfitted";
    case Zone::baseline: return "baseline";
    case Zone::transition: return "transition";
    case Zone::plateau: return "plateau";
  }
  return "unfitted";
}

// ---------------------------------------------------------------------------
// Masks

inline double propagation_radius(double w_th_mm, double w_pix) { return 2.0 * w_th_mm * w_pix; }

/// Dilates the S-region by a Euclidean disk of radius 2 * w_th * w_pix pixels.
inline Mask propagate_mask(const Mask& s_mask, double w_th_mm, double w_pix) {
  if (!(w_th_mm > 0 && w_pix > 0))
    throw Error(ErrorCode::invalid_argument, "wall thickness and pixel density must be positive");
  if (count(s_mask) == 0) throw Error(ErrorCode::empty_mask, "S-region is empty");
  const double radius = propagation_radius(w_th_mm, w_pix);
  const auto reach = static_cast<std::ptrdiff_t>(std::floor(radius));
  const double r2 = radius * radius;
  const auto rows = static_cast<std::ptrdiff_t>(s_mask.rows());
  const auto cols = static_cast<std::ptrdiff_t>(s_mask.cols());
  // horizontal distance from each pixel to the nearest S pixel on its row
  const std::ptrdiff_t far = rows + cols + reach + 1;
  Grid<std::ptrdiff_t> nearest(s_mask.rows(), s_mask.cols(), far);
  for (std::ptrdiff_t r = 0; r < rows; ++r) {
    std::ptrdiff_t last = -far;
    for (std::ptrdiff_t c = 0; c < cols; ++c) {
      if (s_mask(r, c)) last = c;
      nearest(r, c) = std::min(nearest(r, c), c - last);
    }
    last = 2 * far;
    for (std::ptrdiff_t c = cols - 1; c >= 0; --c) {
      if (s_mask(r, c)) last = c;
      nearest(r, c) = std::min(nearest(r, c), last - c);
    }
  }
  Mask out(s_mask.rows(), s_mask.cols(), 0);
  for (std::ptrdiff_t r = 0; r < rows; ++r)
    for (std::ptrdiff_t c = 0; c < cols; ++c)
      for (std::ptrdiff_t dr = std::max(-reach, -r); dr <= std::min(reach, rows - 1 - r); ++dr) {
        const std::ptrdiff_t dc = nearest(r + dr, c);
        if (dc <= reach && static_cast<double>(dr * dr + dc * dc) <= r2) {
          out(r, c) = 1;
          break;
        }
      }
  return out;
}

/// Centroid of the mask rounded half toward the smaller index; a centroid
/// falling outside the mask snaps to the nearest mask pixel (ties toward the
/// smaller row, then column).
inline PixelIndex geometric_center(const Mask& s_mask) {
  double sum_r = 0.0;
  double sum_c = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < s_mask.rows(); ++r)
    for (std::size_t c = 0; c < s_mask.cols(); ++c)
      if (s_mask(r, c)) {
        sum_r += static_cast<double>(r);
        sum_c += static_cast<double>(c);
        ++n;
      }
  if (n == 0) throw Error(ErrorCode::empty_mask, "geometric center of an empty mask");
  const double mr = sum_r / static_cast<double>(n);
  const double mc = sum_c / static_cast<double>(n);
  const auto rr = static_cast<std::size_t>(std::ceil(mr - 0.5));
  const auto rc = static_cast<std::size_t>(std::ceil(mc - 0.5));
  if (s_mask(rr, rc)) return {rr, rc};
  PixelIndex best;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < s_mask.rows(); ++r)
    for (std::size_t c = 0; c < s_mask.cols(); ++c) {
      if (!s_mask(r, c)) continue;
      const double dr = static_cast<double>(r) - mr;
      const double dc = static_cast<double>(c) - mc;
      const double d2 = dr * dr + dc * dc;
      if (d2 < best_d2) {
        best_d2 = d2;
        best = {r, c};
      }
    }
  return best;
}

// ---------------------------------------------------------------------------
// Calcinates

inline constexpr double kDefaultCalcThreshold = 600.0;
inline constexpr double kCalcinateScale = 0.6;

struct CalcinateSuppression {
  SliceData slice;
  std::size_t replaced = 0;
  double reference_max = 0.0;
};

/// Replaces P-region pixels brighter than `threshold` by 60% of the brightest
/// non-calcinate lumen pixel of the slice.
inline CalcinateSuppression suppress_calcinates(const SliceData& slice,
                                                double threshold = kDefaultCalcThreshold) {
  slice.check();
  CalcinateSuppression out{slice};
  bool any_above = false;
  double reference = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < slice.pixels.size(); ++i) {
    const double v = slice.pixels.data()[i];
    if (slice.p_mask.data()[i] && v > threshold) any_above = true;
    if (slice.s_mask.data()[i] && v <= threshold) reference = std::max(reference, v);
  }
  if (!any_above) return out;
  if (!std::isfinite(reference))
    throw Error(ErrorCode::all_calcinate, "every lumen pixel exceeds the calcinate threshold");
  out.reference_max = reference;
  const double replacement = kCalcinateScale * reference;
  auto pixels = out.slice.pixels.data();
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (slice.p_mask.data()[i] && pixels[i] > threshold) {
      pixels[i] = replacement;
      ++out.replaced;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Line fits

/// Transition-zone geometry of one fitted line after endpoint adjustment.
struct LineZones {
  EdgeMetrics rising;
  EdgeMetrics falling;
  bool rising_collapsed = false;
  bool falling_collapsed = false;
};

struct LineFit {
  Axis axis = Axis::row;
  std::size_t line = 0;
  std::size_t start = 0;  // inclusive pixel index along the line
  std::size_t end = 0;    // inclusive
  std::optional<FitResult> fit;
  std::optional<LineZones> zones;  // absent when the fit is ill-formed
  std::string skipped;             // reason when `fit` is absent

  bool covers(std::size_t pos) const { return pos >= start && pos <= end; }
  std::size_t length() const { return end - start + 1; }
};

struct DirectionFits {
  std::vector<std::vector<LineFit>> rows;     // indexed by row
  std::vector<std::vector<LineFit>> columns;  // indexed by column

  /// Fitted span on row `r` (or column `c`) covering the given pixel.
  const LineFit* find(Axis axis, std::size_t r, std::size_t c) const {
    const auto& lines = axis == Axis::row ? rows : columns;
    const std::size_t line = axis == Axis::row ? r : c;
    const std::size_t pos = axis == Axis::row ? c : r;
    if (line >= lines.size()) return nullptr;
    for (const auto& lf : lines[line])
      if (lf.fit && lf.covers(pos)) return &lf;
    return nullptr;
  }
};

/// Moves the outer endpoint of an edge one pixel at a time toward the ROI
/// center while the model is non-positive there. The inner endpoint is kept.
inline EdgeMetrics adjust_transition_endpoints(const EdgeMetrics& metrics, Edge edge,
                                               const ModelCoefficients& model) {
  EdgeMetrics out = metrics;
  if (edge == Edge::rising) {
    while (evaluate(model, out.x1) <= 0.0) {
      out.x1 += 1.0;
      if (out.x1 >= out.inflection_x)
        throw Error(ErrorCode::endpoint_collapse, "rising edge non-positive up to its inflection");
    }
  } else {
    while (evaluate(model, out.x2) <= 0.0) {
      out.x2 -= 1.0;
      if (out.x2 <= out.inflection_x)
        throw Error(ErrorCode::endpoint_collapse, "falling edge non-positive up to its inflection");
    }
  }
  out.transition_width = std::abs(out.x2 - out.x1);
  return out;
}

inline std::optional<LineZones> line_zones(const ModelCoefficients& model, const AccuracyPolicy& policy) {
  if (!validate(model).ok()) return std::nullopt;
  LineZones z;
  z.rising = edge_metrics(model, policy, Edge::rising);
  z.falling = edge_metrics(model, policy, Edge::falling);
  try {
    z.rising = adjust_transition_endpoints(z.rising, Edge::rising, model);
  } catch (const Error&) {
    z.rising_collapsed = true;
  }
  try {
    z.falling = adjust_transition_endpoints(z.falling, Edge::falling, model);
  } catch (const Error&) {
    z.falling_collapsed = true;
  }
  return z;
}

inline Zone zone_at(const LineZones& z, double x) {
  if ((x >= z.rising.x1 && x <= z.rising.x2) || (x >= z.falling.x1 && x <= z.falling.x2))
    return Zone::transition;
  if (x > z.rising.x2 && x < z.falling.x1) return Zone::plateau;
  return Zone::baseline;
}

/// Maximal runs of set pixels along one line.
inline std::vector<std::pair<std::size_t, std::size_t>> mask_runs(const Mask& mask, Axis axis,
                                                                  std::size_t line) {
  std::vector<std::pair<std::size_t, std::size_t>> runs;
  const std::size_t len = axis == Axis::row ? mask.cols() : mask.rows();
  auto at = [&](std::size_t pos) { return axis == Axis::row ? mask(line, pos) : mask(pos, line); };
  for (std::size_t pos = 0; pos < len;) {
    if (!at(pos)) {
      ++pos;
      continue;
    }
    std::size_t end = pos;
    while (end + 1 < len && at(end + 1)) ++end;
    runs.emplace_back(pos, end);
    pos = end + 1;
  }
  return runs;
}

inline LineProfile extract_profile(const Image& pixels, Axis axis, std::size_t line,
                                   std::size_t start, std::size_t end) {
  LineProfile profile;
  profile.axis = axis;
  profile.index = static_cast<int>(line);
  profile.x0 = static_cast<double>(start);
  profile.span = {static_cast<double>(start), static_cast<double>(end)};
  for (std::size_t pos = start; pos <= end; ++pos)
    profile.values.push_back(axis == Axis::row ? pixels(line, pos) : pixels(pos, line));
  return profile;
}

inline LineFit fit_span(const Image& pixels, Axis axis, std::size_t line, std::size_t start,
                        std::size_t end, const FitConfig& config, const AccuracyPolicy& policy) {
  LineFit lf;
  lf.axis = axis;
  lf.line = line;
  lf.start = start;
  lf.end = end;
  if (lf.length() < kMinProfileLength) {
    lf.skipped = "short span";
    return lf;
  }
  const LineProfile profile = extract_profile(pixels, axis, line, start, end);
  try {
    lf.fit = fit_line(profile, initial_guess(profile), config);
    lf.zones = line_zones(lf.fit->coefficients, policy);
  } catch (const Error& e) {
    lf.fit.reset();
    lf.skipped = e.what();
  }
  return lf;
}

/// Fits every maximal P-region run of at least 8 pixels on every row and
/// column independently. Failures are recorded per line.
inline DirectionFits fit_directions(const SliceData& slice, const FitConfig& config = {},
                                    const AccuracyPolicy& policy = {}) {
  slice.check();
  DirectionFits fits;
  fits.rows.resize(slice.pixels.rows());
  fits.columns.resize(slice.pixels.cols());
  for (std::size_t r = 0; r < slice.pixels.rows(); ++r)
    for (auto [s, e] : mask_runs(slice.p_mask, Axis::row, r))
      fits.rows[r].push_back(fit_span(slice.pixels, Axis::row, r, s, e, config, policy));
  for (std::size_t c = 0; c < slice.pixels.cols(); ++c)
    for (auto [s, e] : mask_runs(slice.p_mask, Axis::column, c))
      fits.columns[c].push_back(fit_span(slice.pixels, Axis::column, c, s, e, config, policy));
  return fits;
}

inline double model_value(const LineFit& lf, std::size_t r, std::size_t c) {
  const double x = static_cast<double>(lf.axis == Axis::row ? c : r);
  return evaluate(lf.fit->coefficients, x);
}

// ---------------------------------------------------------------------------
// Composition

struct PointwiseMerge {
  Image values;
  Grid<Direction> source;
};

/// Per pixel, the row or column model value closer to the observation; ties
/// go to the row. Pixels with a single fitted direction take that direction.
inline PointwiseMerge merge_pointwise(const DirectionFits& fits, const SliceData& slice) {
  PointwiseMerge out{Image(slice.pixels.rows(), slice.pixels.cols(), 0.0),
                     Grid<Direction>(slice.pixels.rows(), slice.pixels.cols(), Direction::none)};
  for (std::size_t r = 0; r < slice.pixels.rows(); ++r) {
    for (std::size_t c = 0; c < slice.pixels.cols(); ++c) {
      if (!slice.p_mask(r, c)) continue;
      const LineFit* row_fit = fits.find(Axis::row, r, c);
      const LineFit* col_fit = fits.find(Axis::column, r, c);
      if (row_fit && col_fit) {
        const double observed = slice.pixels(r, c);
        const double fi = model_value(*row_fit, r, c);
        const double fj = model_value(*col_fit, r, c);
        const bool take_row = std::abs(fi - observed) <= std::abs(fj - observed);
        out.values(r, c) = take_row ? fi : fj;
        out.source(r, c) = take_row ? Direction::row : Direction::column;
      } else if (row_fit) {
        out.values(r, c) = model_value(*row_fit, r, c);
        out.source(r, c) = Direction::row;
      } else if (col_fit) {
        out.values(r, c) = model_value(*col_fit, r, c);
        out.source(r, c) = Direction::column;
      }
    }
  }
  return out;
}

struct ZoneMap {
  Grid<Zone> zone;
  Grid<Direction> decided_by;  // which direction's fit classified the pixel
};

/// Zones from the row fit through each pixel; pixels without a usable row
/// fit fall back to their column fit under the same rule.
inline ZoneMap classify_zones(const DirectionFits& fits, const SliceData& slice) {
  ZoneMap out{Grid<Zone>(slice.pixels.rows(), slice.pixels.cols(), Zone::unfitted),
              Grid<Direction>(slice.pixels.rows(), slice.pixels.cols(), Direction::none)};
  for (std::size_t r = 0; r < slice.pixels.rows(); ++r) {
    for (std::size_t c = 0; c < slice.pixels.cols(); ++c) {
      if (!slice.p_mask(r, c)) continue;
      const LineFit* row_fit = fits.find(Axis::row, r, c);
      const LineFit* col_fit = fits.find(Axis::column, r, c);
      if (row_fit && row_fit->zones) {
        out.zone(r, c) = zone_at(*row_fit->zones, static_cast<double>(c));
        out.decided_by(r, c) = Direction::row;
      } else if (col_fit && col_fit->zones) {
        out.zone(r, c) = zone_at(*col_fit->zones, static_cast<double>(r));
        out.decided_by(r, c) = Direction::column;
      } else if (row_fit || col_fit) {
        out.zone(r, c) = Zone::baseline;
        out.decided_by(r, c) = row_fit ? Direction::row : Direction::column;
      }
    }
  }
  return out;
}

struct CaidcField {
  Image values;  // composed deterministic component, 0 outside the P-region
  Grid<Zone> zone;
  Grid<Direction> source;
  Image pointwise;  // per-pixel row/column merge before the transition rule
  DirectionFits fits;
  Direction transition_direction = Direction::row;
};

/// Transition pixels take the full model of the direction that owns the
/// transition (row by default, column when overridden and available); all
/// other fitted pixels take the pointwise merge.
inline CaidcField compose_caidc(const SliceData& slice, DirectionFits fits,
                                Direction transition_direction = Direction::row) {
  const PointwiseMerge merged = merge_pointwise(fits, slice);
  ZoneMap zones = classify_zones(fits, slice);
  CaidcField out;
  out.values = merged.values;
  out.pointwise = merged.values;
  out.source = merged.source;
  out.zone = std::move(zones.zone);
  out.transition_direction = transition_direction;
  for (std::size_t r = 0; r < slice.pixels.rows(); ++r) {
    for (std::size_t c = 0; c < slice.pixels.cols(); ++c) {
      if (out.zone(r, c) != Zone::transition) continue;
      const LineFit* owner = fits.find(
          zones.decided_by(r, c) == Direction::row ? Axis::row : Axis::column, r, c);
      Direction used = zones.decided_by(r, c);
      if (transition_direction == Direction::column) {
        if (const LineFit* col_fit = fits.find(Axis::column, r, c)) {
          owner = col_fit;
          used = Direction::column;
        }
      }
      out.values(r, c) = model_value(*owner, r, c);
      out.source(r, c) = used;
    }
  }
  out.fits = std::move(fits);
  return out;
}

struct DirectionReport {
  stats::TestResult kruskal;
  std::vector<stats::DunnComparison> dunn;  // pairs over (row, column, pointwise)
  Direction chosen = Direction::row;
  bool overridden = false;
  std::size_t n_values = 0;
};

inline constexpr double kSignificance = 0.05;

/// Kruskal-Wallis across the transition-zone values modelled by rows, by
/// columns and by the pointwise merge. When they differ, the direction whose
/// values Dunn's test finds closer to the pointwise sample is chosen.
inline DirectionReport compare_edge_directions(const SliceData& slice, const CaidcField& composed) {
  std::vector<double> by_row;
  std::vector<double> by_column;
  std::vector<double> by_point;
  for (std::size_t r = 0; r < slice.pixels.rows(); ++r) {
    for (std::size_t c = 0; c < slice.pixels.cols(); ++c) {
      if (composed.zone(r, c) != Zone::transition) continue;
      const LineFit* row_fit = composed.fits.find(Axis::row, r, c);
      const LineFit* col_fit = composed.fits.find(Axis::column, r, c);
      if (!row_fit || !col_fit) continue;
      by_row.push_back(model_value(*row_fit, r, c));
      by_column.push_back(model_value(*col_fit, r, c));
      by_point.push_back(composed.pointwise(r, c));
    }
  }
  if (by_row.size() < 3)
    throw Error(ErrorCode::insufficient_data, "fewer than 3 transition pixels with both fits");
  const std::vector<std::vector<double>> groups = {by_row, by_column, by_point};
  DirectionReport report;
  report.n_values = by_row.size();
  report.kruskal = stats::kruskal_wallis(groups);
  if (report.kruskal.p_value < kSignificance) {
    report.dunn = stats::dunn_posthoc(groups);
    const double row_vs_point = report.dunn[1].p_value;     // (0, 2)
    const double column_vs_point = report.dunn[2].p_value;  // (1, 2)
    if (column_vs_point > row_vs_point) {
      report.chosen = Direction::column;
      report.overridden = true;
    }
  }
  return report;
}

struct GoodnessOfFit {
  double p_value = std::numeric_limits<double>::quiet_NaN();
  double rmse = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_pixels = 0;
};

/// Two-sided U-test between observed and composed values over the fitted
/// P-region, plus the RMSE between them.
inline GoodnessOfFit goodness_of_fit(const SliceData& slice, const CaidcField& composed) {
  std::vector<double> observed;
  std::vector<double> modelled;
  for (std::size_t r = 0; r < slice.pixels.rows(); ++r)
    for (std::size_t c = 0; c < slice.pixels.cols(); ++c)
      if (slice.p_mask(r, c) && composed.zone(r, c) != Zone::unfitted) {
        observed.push_back(slice.pixels(r, c));
        modelled.push_back(composed.values(r, c));
      }
  GoodnessOfFit out;
  out.n_pixels = observed.size();
  if (observed.empty()) return out;
  out.p_value = stats::mann_whitney_u(observed, modelled).p_value;
  out.rmse = rmse(observed, modelled);
  return out;
}

inline constexpr double kDefaultBloodBaseline = 40.0;

/// Inside the lumen: observed - composed + blood_baseline. Elsewhere the
/// observation passes through.
inline SliceData eliminate_ca(const SliceData& slice, const CaidcField& composed,
                              double blood_baseline = kDefaultBloodBaseline) {
  SliceData out = slice;
  for (std::size_t r = 0; r < slice.pixels.rows(); ++r)
    for (std::size_t c = 0; c < slice.pixels.cols(); ++c) {
      if (!slice.s_mask(r, c)) continue;
      if (composed.zone(r, c) == Zone::unfitted)
        throw Error(ErrorCode::insufficient_data, "composed field does not cover the lumen");
      out.pixels(r, c) = slice.pixels(r, c) - composed.values(r, c) + blood_baseline;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Whole-slice pipeline

struct SliceOptions {
  FitConfig fit;
  AccuracyPolicy accuracy;
  double calc_threshold = kDefaultCalcThreshold;
  bool check_directions = true;
};

struct SliceResult {
  int slice_index = 0;
  SliceData processed;  // after calcinate suppression
  CaidcField field;
  std::optional<DirectionReport> directions;
  GoodnessOfFit fit_quality;
  std::size_t calcinates_replaced = 0;
  std::string note;
  bool empty() const { return count(processed.s_mask) == 0; }
};

inline SliceResult process_slice(const SliceData& slice, const SliceOptions& options = {}) {
  slice.check();
  SliceResult out;
  out.slice_index = slice.slice_index;
  out.processed = slice;
  const std::size_t rows = slice.pixels.rows();
  const std::size_t cols = slice.pixels.cols();
  out.field.values = Image(rows, cols, 0.0);
  out.field.pointwise = Image(rows, cols, 0.0);
  out.field.zone = Grid<Zone>(rows, cols, Zone::unfitted);
  out.field.source = Grid<Direction>(rows, cols, Direction::none);
  if (count(slice.s_mask) == 0) {
    out.note = "empty lumen";
    return out;
  }
  try {
    auto suppressed = suppress_calcinates(slice, options.calc_threshold);
    out.processed = std::move(suppressed.slice);
    out.calcinates_replaced = suppressed.replaced;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::all_calcinate) throw;
    out.note = "all lumen pixels above calcinate threshold; suppression skipped";
  }
  DirectionFits fits = fit_directions(out.processed, options.fit, options.accuracy);
  out.field = compose_caidc(out.processed, fits);
  if (options.check_directions) {
    try {
      out.directions = compare_edge_directions(out.processed, out.field);
      if (out.directions->overridden)
        out.field = compose_caidc(out.processed, std::move(out.field.fits), Direction::column);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::insufficient_data) throw;
    }
  }
  out.fit_quality = goodness_of_fit(out.processed, out.field);
  return out;
}

}  // namespace caidc
