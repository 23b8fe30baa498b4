#pragma once

// Seeded synthetic CTA data with known ground truth: single lines, slices
// and volumes for the norm, aneurysm, thrombus and branching scenarios.
//
// Each row of a slice is generated from its own model coefficients (the
// lumen chord on that row sets the inflections, and the row amplitude is
// tapered by a vertical edged plateau so columns have smooth edges too),
// so every fitted row has an exact ground truth. The `separable` shape
// multiplies a row profile by a column profile instead, making rows and
// columns exact at the same time.
// Noise is additive Gaussian from caidc::Rng (mt19937_64 + Box-Muller),
// seeded per slice with derive_seed(seed, slice_index).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string_view>
#include <vector>

#include "caidc/error.hpp"
#include "caidc/grid.hpp"
#include "caidc/lm_fitter.hpp"
#include "caidc/nifti_io.hpp"
#include "caidc/random.hpp"
#include "caidc/sigmoid_model.hpp"
#include "caidc/slice_engine.hpp"

namespace caidc::phantom {

enum class ScenarioKind { norm, aneurysm, thrombus, branching };
enum class LumenShape { disk, separable };

constexpr std::string_view to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::norm: return "norm";
    case ScenarioKind::aneurysm: return "aneurysm";
    case ScenarioKind::thrombus: return "thrombus";
    case ScenarioKind::branching: return "branching";
  }
  return "norm";
}

constexpr std::string_view to_string(LumenShape s) { return s == LumenShape::disk ? "disk" : "separable"; }

struct Scenario {
  ScenarioKind kind = ScenarioKind::norm;
  LumenShape shape = LumenShape::disk;
  double lumen_diameter_mm = 20.0;
  double amplitude_hu = 300.0;
  double rise_rate = 1.2;  // 1/px
  double fall_rate = 1.2;  // 1/px
  double background_hu = -80.0;
  double background_sigma = 20.0;
  double noise_sigma = 10.0;  // inside the lumen
  std::uint64_t seed = 1;
  std::size_t rows = 64;
  std::size_t cols = 64;
  std::size_t n_slices = 1;
  double spacing_mm = 1.0;
  double slice_thickness_mm = 1.0;
  double w_th_mm = 2.0;
  double diameter_drift_mm = 0.5;  // radius swing of a smooth sinusoidal change along z

  // thrombus: a band of rows whose rising (blood-to-clot) edge is shallower
  std::size_t clot_rows = 10;
  double clot_edge_factor = 0.5;
  double clot_amplitude_factor = 0.85;

  // branching: a lateral lobe with lower contrast on the rows it crosses
  double lobe_diameter_mm = 12.0;
  double branch_amplitude_factor = 0.6;
  int branch_first_slice = -1;  // -1: second slice
  int branch_last_slice = -1;   // -1: second to last slice

  double w_pix() const { return 1.0 / spacing_mm; }
  double diameter_px() const { return lumen_diameter_mm / spacing_mm; }

  void check() const {
    const double swing = 2.0 * std::abs(diameter_drift_mm);
    if (kind == ScenarioKind::norm && !(lumen_diameter_mm + swing < 25.0))
      throw Error(ErrorCode::invalid_argument, "norm scenario needs a diameter below 25 mm");
    if (kind == ScenarioKind::aneurysm && !(lumen_diameter_mm - swing >= 30.0))
      throw Error(ErrorCode::invalid_argument, "aneurysm scenario needs a diameter of at least 30 mm");
    if (!(lumen_diameter_mm > 0))
      throw Error(ErrorCode::invalid_argument, "lumen diameter must be positive");
    if (amplitude_hu < 100.0 || amplitude_hu > 500.0)
      throw Error(ErrorCode::invalid_argument, "amplitude must lie in [100, 500] HU");
    if (!(rise_rate > 0 && fall_rate > 0))
      throw Error(ErrorCode::invalid_argument, "edge rates must be positive");
    if (noise_sigma < 0 || background_sigma < 0)
      throw Error(ErrorCode::invalid_argument, "noise levels must be non-negative");
    if (!(spacing_mm > 0 && slice_thickness_mm > 0 && w_th_mm > 0))
      throw Error(ErrorCode::invalid_argument, "spacing and wall thickness must be positive");
    if (n_slices < 1) throw Error(ErrorCode::invalid_argument, "need at least one slice");
    if (kind == ScenarioKind::thrombus && !(clot_edge_factor > 0 && clot_edge_factor < 1))
      throw Error(ErrorCode::invalid_argument, "clot edge factor must lie in (0, 1)");
    if (kind == ScenarioKind::branching && !(branch_amplitude_factor > 0 && branch_amplitude_factor <= 1))
      throw Error(ErrorCode::invalid_argument, "branch amplitude factor must lie in (0, 1]");
    const double radius = 0.5 * (diameter_px() + 2.0 * std::abs(diameter_drift_mm) / spacing_mm);
    double reach_x = radius;
    if (kind == ScenarioKind::branching) reach_x += 0.7 * lobe_diameter_mm / spacing_mm;
    const double margin = propagation_radius(w_th_mm, w_pix()) + 2.0;
    if (2.0 * (radius + margin) > static_cast<double>(rows) ||
        2.0 * (reach_x + margin) > static_cast<double>(cols))
      throw Error(ErrorCode::scenario_geometry_too_large, "lumen plus P-region does not fit the slice");
  }

  bool branched(std::size_t z) const {
    if (kind != ScenarioKind::branching) return false;
    const int last_default = static_cast<int>(n_slices) - 2;
    const int first = branch_first_slice >= 0 ? branch_first_slice : (n_slices >= 3 ? 1 : 0);
    const int last = branch_last_slice >= 0 ? branch_last_slice
                                            : (n_slices >= 3 ? last_default : static_cast<int>(n_slices) - 1);
    return static_cast<int>(z) >= first && static_cast<int>(z) <= last;
  }
};

// ---------------------------------------------------------------------------

struct GeneratedLine {
  LineProfile profile;
  ModelCoefficients truth;
};

/// Samples the model at x = 0..n-1 plus Gaussian noise. The span marks the
/// inflections widened by `margin` pixels, mirroring a P-region run.
inline GeneratedLine generate_line(const ModelCoefficients& truth, std::size_t n, double noise_sigma,
                                   std::uint64_t seed, double margin = 4.0) {
  if (n < kMinProfileLength) throw Error(ErrorCode::invalid_argument, "line needs at least 8 samples");
  Rng rng(seed);
  GeneratedLine out{{}, truth};
  out.profile.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double clean = evaluate(truth, static_cast<double>(i));
    out.profile.values[i] = noise_sigma > 0 ? clean + rng.normal(0.0, noise_sigma) : clean;
  }
  const double last = static_cast<double>(n - 1);
  out.profile.span.start_px = std::clamp(std::floor(truth.rising_inflection() - margin), 0.0, last);
  out.profile.span.end_px = std::clamp(std::ceil(truth.falling_inflection() + margin), 0.0, last);
  if (out.profile.span.end_px < out.profile.span.start_px) out.profile.span.end_px = out.profile.span.start_px;
  return out;
}

// ---------------------------------------------------------------------------

struct PhantomSlice {
  SliceData slice;
  Image truth;
  std::vector<ModelCoefficients> row_truth;  // amplitude 0 on rows missing the lumen
  std::vector<std::size_t> clot_rows;
  bool branched = false;
};

namespace detail {

inline double unit_plateau(double x, double rise_rate, double left, double fall_rate, double right) {
  return caidc::detail::falling_logistic(fall_rate * (x - right)) -
         caidc::detail::falling_logistic(rise_rate * (x - left));
}

}  // namespace detail

inline PhantomSlice generate_slice(const Scenario& scenario, std::size_t slice_index = 0) {
  scenario.check();
  const std::size_t rows = scenario.rows;
  const std::size_t cols = scenario.cols;
  const double cy = 0.5 * static_cast<double>(rows - 1);
  const double cx = 0.5 * static_cast<double>(cols - 1);
  const double drift_px = scenario.n_slices > 1
      ? scenario.diameter_drift_mm / scenario.spacing_mm *
            std::sin(2.0 * std::numbers::pi * static_cast<double>(slice_index) /
                     static_cast<double>(scenario.n_slices))
      : 0.0;
  const double radius = 0.5 * scenario.diameter_px() + drift_px;
  const double b = scenario.rise_rate;
  const double d = scenario.fall_rate;
  const double a = scenario.amplitude_hu;
  const double f0 = scenario.background_hu;

  PhantomSlice out;
  out.branched = scenario.branched(slice_index);
  out.truth = Image(rows, cols, f0);
  Mask s_mask(rows, cols, 0);
  out.row_truth.assign(rows, ModelCoefficients{f0, 0.0, b, 0.0, d, 0.0});

  if (scenario.kind == ScenarioKind::thrombus) {
    const auto center_row = static_cast<std::ptrdiff_t>(std::llround(cy));
    const auto first = center_row - static_cast<std::ptrdiff_t>(scenario.clot_rows / 2);
    for (std::size_t k = 0; k < scenario.clot_rows; ++k) {
      const auto r = first + static_cast<std::ptrdiff_t>(k);
      if (r >= 0 && r < static_cast<std::ptrdiff_t>(rows) && std::abs(static_cast<double>(r) - cy) < radius)
        out.clot_rows.push_back(static_cast<std::size_t>(r));
    }
  }

  if (scenario.shape == LumenShape::separable) {
    for (std::size_t r = 0; r < rows; ++r) {
      const double h = detail::unit_plateau(static_cast<double>(r), b, cy - radius, d, cy + radius);
      out.row_truth[r] = {f0, a * h, b, b * (cx - radius), d, d * (cx + radius)};
      for (std::size_t c = 0; c < cols; ++c) {
        const double g = detail::unit_plateau(static_cast<double>(c), b, cx - radius, d, cx + radius);
        out.truth(r, c) = f0 + a * g * h;
        s_mask(r, c) = g * h >= 0.5;
      }
    }
  } else {
    const double lobe_r = 0.5 * scenario.lobe_diameter_mm / scenario.spacing_mm;
    const double lobe_cx = cx + radius - 0.3 * lobe_r;
    for (std::size_t r = 0; r < rows; ++r) {
      const double dy = static_cast<double>(r) - cy;
      if (std::abs(dy) >= radius) continue;
      const double half = std::sqrt(radius * radius - dy * dy);
      double left = cx - half;
      double right = cx + half;
      double row_a = a * detail::unit_plateau(static_cast<double>(r), b, cy - radius, d, cy + radius);
      double row_b = b;
      if (out.branched && std::abs(dy) < lobe_r) {
        right = std::max(right, lobe_cx + std::sqrt(lobe_r * lobe_r - dy * dy));
        row_a *= scenario.branch_amplitude_factor;
      }
      if (std::find(out.clot_rows.begin(), out.clot_rows.end(), r) != out.clot_rows.end()) {
        row_b *= scenario.clot_edge_factor;
        row_a *= scenario.clot_amplitude_factor;
      }
      const ModelCoefficients m{f0, row_a, row_b, row_b * left, d, d * right};
      out.row_truth[r] = m;
      for (std::size_t c = 0; c < cols; ++c) {
        const double x = static_cast<double>(c);
        out.truth(r, c) = evaluate(m, x);
        s_mask(r, c) = x >= left && x <= right;
      }
    }
  }
  if (count(s_mask) == 0) throw Error(ErrorCode::scenario_geometry_too_large, "lumen covers no pixel centre");

  out.slice.s_mask = s_mask;
  out.slice.p_mask = propagate_mask(s_mask, scenario.w_th_mm, scenario.w_pix());
  out.slice.spacing = {scenario.spacing_mm, scenario.spacing_mm};
  out.slice.slice_index = static_cast<int>(slice_index);
  out.slice.pixels = out.truth;
  Rng rng(derive_seed(scenario.seed, slice_index));
  auto pixels = out.slice.pixels.data();
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double sigma = s_mask.data()[i] ? scenario.noise_sigma : scenario.background_sigma;
    const double noise = rng.normal();  // drawn for every pixel to keep streams aligned
    pixels[i] += sigma * noise;
  }
  return out;
}

struct PhantomVolume {
  nifti::Volume volume;
  nifti::Volume s_mask;
  nifti::Volume truth;
  std::vector<PhantomSlice> slices;
};

inline PhantomVolume generate_volume(const Scenario& scenario) {
  scenario.check();
  PhantomVolume out;
  nifti::Volume base;
  base.dims = {scenario.cols, scenario.rows, scenario.n_slices};
  base.spacing = {scenario.spacing_mm, scenario.spacing_mm, scenario.slice_thickness_mm};
  out.volume = nifti::like(base, nifti::Datatype::float32);
  out.s_mask = nifti::like(base, nifti::Datatype::uint8);
  out.truth = nifti::like(base, nifti::Datatype::float32);
  for (std::size_t z = 0; z < scenario.n_slices; ++z) {
    PhantomSlice ps = generate_slice(scenario, z);
    out.volume.set_slice(z, ps.slice.pixels);
    out.truth.set_slice(z, ps.truth);
    Image mask_img(scenario.rows, scenario.cols);
    for (std::size_t i = 0; i < mask_img.size(); ++i) mask_img.data()[i] = ps.slice.s_mask.data()[i];
    out.s_mask.set_slice(z, mask_img);
    out.slices.push_back(std::move(ps));
  }
  return out;
}

}  // namespace caidc::phantom
