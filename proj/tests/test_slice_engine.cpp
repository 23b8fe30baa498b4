#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "caidc/phantom.hpp"
#include "caidc/random.hpp"
#include "caidc/slice_engine.hpp"

using namespace caidc;

namespace {

ErrorCode code_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::io_failure;
}

Mask disk(std::size_t n, double cy, double cx, double r) {
  Mask m(n, n, 0);
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      m(y, x) = dy * dy + dx * dx <= r * r;
    }
  return m;
}

// Stamps a disk of radius R on every S pixel.
Mask brute_dilate(const Mask& s, double radius) {
  Mask out(s.rows(), s.cols(), 0);
  const auto reach = static_cast<long>(std::floor(radius));
  for (long r = 0; r < static_cast<long>(s.rows()); ++r)
    for (long c = 0; c < static_cast<long>(s.cols()); ++c) {
      if (!s(r, c)) continue;
      for (long dr = -reach; dr <= reach; ++dr)
        for (long dc = -reach; dc <= reach; ++dc) {
          const long rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<long>(s.rows()) || cc >= static_cast<long>(s.cols())) continue;
          if (static_cast<double>(dr * dr + dc * dc) <= radius * radius) out(rr, cc) = 1;
        }
    }
  return out;
}

SliceData slice_from(Image pixels, Mask s, Mask p) {
  SliceData d;
  d.pixels = std::move(pixels);
  d.s_mask = std::move(s);
  d.p_mask = std::move(p);
  return d;
}

phantom::Scenario clean(phantom::LumenShape shape) {
  phantom::Scenario sc;
  sc.shape = shape;
  sc.noise_sigma = 0.0;
  sc.background_sigma = 0.0;
  return sc;
}

LineFit fitted(Axis axis, std::size_t line, std::size_t start, std::size_t end, ModelCoefficients m) {
  LineFit lf;
  lf.axis = axis;
  lf.line = line;
  lf.start = start;
  lf.end = end;
  lf.fit = FitResult{m};
  lf.zones = line_zones(m, {});
  return lf;
}

}  // namespace

TEST(PropagateMask, Radius) {
  EXPECT_DOUBLE_EQ(propagation_radius(2.0, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(propagation_radius(2.0, 2.0), 8.0);
  Mask one(9, 9, 0);
  one(4, 4) = 1;
  const Mask plus = propagate_mask(one, 0.5, 1.0);
  EXPECT_EQ(count(plus), 5u);
  EXPECT_TRUE(plus(3, 4) && plus(5, 4) && plus(4, 3) && plus(4, 5) && plus(4, 4));
  const Mask r4 = propagate_mask(one, 2.0, 1.0);
  EXPECT_EQ(count(r4), 49u);  // lattice points with x^2 + y^2 <= 16
}

TEST(PropagateMask, MatchesBruteForce) {
  Rng rng(31);
  for (int k = 0; k < 60; ++k) {
    Mask s(24 + rng.below(10), 20 + rng.below(10), 0);
    for (auto& v : s.data()) v = rng.uniform() < 0.04;
    s(rng.below(s.rows()), rng.below(s.cols())) = 1;
    const double w_th = rng.uniform(0.3, 3.0), w_pix = rng.uniform(0.5, 2.0);
    EXPECT_EQ(propagate_mask(s, w_th, w_pix), brute_dilate(s, propagation_radius(w_th, w_pix)));
  }
}

TEST(PropagateMask, ContainsSourceAndErrors) {
  const Mask s = disk(40, 20, 20, 7);
  const Mask p = propagate_mask(s, 2.0, 1.0);
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s.data()[i]) EXPECT_TRUE(p.data()[i]);
  EXPECT_EQ(code_of([] { propagate_mask(Mask(5, 5, 0), 2.0, 1.0); }), ErrorCode::empty_mask);
  EXPECT_EQ(code_of([&] { propagate_mask(s, 0.0, 1.0); }), ErrorCode::invalid_argument);
}

TEST(GeometricCenter, Examples) {
  EXPECT_EQ(geometric_center(disk(129, 64, 64, 20)), (PixelIndex{64, 64}));
  Mask pair(3, 3, 0);
  pair(0, 0) = pair(0, 2) = 1;
  EXPECT_EQ(geometric_center(pair), (PixelIndex{0, 0}));
  Mask crescent = disk(40, 20, 20, 12);
  const Mask bite = disk(40, 20, 26, 12);
  for (std::size_t i = 0; i < crescent.size(); ++i)
    if (bite.data()[i]) crescent.data()[i] = 0;
  const PixelIndex c = geometric_center(crescent);
  EXPECT_TRUE(crescent(c.row, c.col));
  EXPECT_EQ(code_of([] { geometric_center(Mask(4, 4, 0)); }), ErrorCode::empty_mask);
}

TEST(Calcinates, SixtyPercentRule) {
  const Mask s = disk(20, 10, 10, 4);
  const Mask p = propagate_mask(s, 1.0, 1.0);
  Image px(20, 20, 0.0);
  for (std::size_t i = 0; i < px.size(); ++i) px.data()[i] = s.data()[i] ? 300.0 : -50.0;
  px(10, 10) = 400;
  px(10, 11) = 900;
  const auto out = suppress_calcinates(slice_from(px, s, p));
  EXPECT_EQ(out.replaced, 1u);
  EXPECT_DOUBLE_EQ(out.reference_max, 400);
  EXPECT_DOUBLE_EQ(out.slice.pixels(10, 11), 240);
  EXPECT_EQ(out.slice.s_mask, s);
  EXPECT_EQ(out.slice.p_mask, p);

  px(10, 11) = 350;
  const auto untouched = suppress_calcinates(slice_from(px, s, p));
  EXPECT_EQ(untouched.replaced, 0u);
  EXPECT_EQ(untouched.slice.pixels, px);

  Image hot(20, 20, 0.0);
  for (std::size_t i = 0; i < hot.size(); ++i) hot.data()[i] = s.data()[i] ? 700.0 : 0.0;
  EXPECT_EQ(code_of([&] { suppress_calcinates(slice_from(hot, s, p)); }), ErrorCode::all_calcinate);
}

TEST(FitDirections, OneSpanPerLineOnDisk) {
  const Mask p = disk(48, 23.5, 23.5, 19.6);  // 40 rows and 40 columns
  Image px(48, 48, 0.0);
  Rng rng(32);
  for (auto& v : px.data()) v = rng.normal(0, 1);
  const auto fits = fit_directions(slice_from(px, p, p));
  std::size_t rows = 0, cols = 0;
  for (const auto& r : fits.rows) {
    EXPECT_LE(r.size(), 1u);
    rows += r.size();
  }
  for (const auto& c : fits.columns) cols += c.size();
  EXPECT_EQ(rows, 40u);
  EXPECT_EQ(cols, 40u);
}

TEST(FitDirections, TwoSpansOnOneRow) {
  Mask p(20, 40, 0);
  for (std::size_t c = 2; c < 16; ++c) p(10, c) = 1;
  for (std::size_t c = 22; c < 38; ++c) p(10, c) = 1;
  Image px(20, 40, 0.0);
  for (std::size_t c = 0; c < 40; ++c) px(10, c) = (c % 20 > 6 && c % 20 < 12) ? 200 : 0;
  const auto fits = fit_directions(slice_from(px, p, p));
  ASSERT_EQ(fits.rows[10].size(), 2u);
  EXPECT_EQ(fits.rows[10][0].start, 2u);
  EXPECT_EQ(fits.rows[10][1].end, 37u);
  for (const auto& c : fits.columns)
    for (const auto& lf : c) {
      EXPECT_FALSE(lf.fit);
      EXPECT_EQ(lf.skipped, "short span");
    }
}

TEST(FitDirections, CentralRowRecoversPhantom) {
  auto sc = phantom::Scenario{};
  sc.seed = 33;
  const auto ps = phantom::generate_slice(sc);
  const auto fits = fit_directions(ps.slice);
  const std::size_t r = 32;
  const LineFit* lf = fits.find(Axis::row, r, 32);
  ASSERT_TRUE(lf);
  const double truth = ps.row_truth[r].amplitude;
  EXPECT_LT(std::abs(lf->fit->coefficients.amplitude - truth) / truth, 0.05);
}

TEST(MergePointwise, Rules) {
  Image px(12, 12, 0.0);
  Mask p(12, 12, 0);
  for (std::size_t i = 2; i < 12; ++i) p(5, i) = p(i, 5) = 1;
  px(5, 5) = 310;
  DirectionFits fits;
  fits.rows.resize(12);
  fits.columns.resize(12);
  // constant-ish models: baseline 305 on the row, 318 on the column
  fits.rows[5].push_back(fitted(Axis::row, 5, 2, 11, {305, 0, 1, 2, 1, 11}));
  fits.columns[5].push_back(fitted(Axis::column, 5, 2, 11, {318, 0, 1, 2, 1, 11}));
  auto m = merge_pointwise(fits, slice_from(px, p, p));
  EXPECT_EQ(m.values(5, 5), 305);
  EXPECT_EQ(m.source(5, 5), Direction::row);

  px(5, 5) = 311.5;  // equidistant
  m = merge_pointwise(fits, slice_from(px, p, p));
  EXPECT_EQ(m.source(5, 5), Direction::row);

  fits.rows[5].clear();
  m = merge_pointwise(fits, slice_from(px, p, p));
  EXPECT_EQ(m.values(5, 5), 318);
  EXPECT_EQ(m.source(5, 5), Direction::column);
  EXPECT_EQ(m.source(0, 0), Direction::none);
}

TEST(Zones, InflectionTransitionMidpointPlateau) {
  const ModelCoefficients m{20, 300, 2, 20, 2, 100};  // inflections 10 and 50
  const auto z = line_zones(m, {});
  ASSERT_TRUE(z);
  EXPECT_EQ(zone_at(*z, 10.0), Zone::transition);
  EXPECT_EQ(zone_at(*z, 50.0), Zone::transition);
  EXPECT_EQ(zone_at(*z, 30.0), Zone::plateau);
  EXPECT_EQ(zone_at(*z, 0.0), Zone::baseline);
  const ModelCoefficients overlap{20, 300, 1, 5, 1, 15};
  const auto zo = line_zones(overlap, {});
  for (double x = 0; x <= 20; x += 0.25) EXPECT_NE(zone_at(*zo, x), Zone::plateau);
  EXPECT_FALSE(line_zones({20, 300, 1, 15, 1, 5}, {}));
}

TEST(AdjustEndpoints, NegativeBaselineMovesInward) {
  const ModelCoefficients fat{-60, 300, 1, 20, 1, 60};
  const auto r = edge_metrics(fat, {}, Edge::rising);
  EXPECT_LT(evaluate(fat, r.x1), 0.0);
  const auto adj = adjust_transition_endpoints(r, Edge::rising, fat);
  EXPECT_GT(evaluate(fat, adj.x1), 0.0);
  EXPECT_LE(evaluate(fat, adj.x1 - 1.0), 0.0);
  EXPECT_EQ(adj.x2, r.x2);
  EXPECT_NEAR(std::fmod(adj.x1 - r.x1, 1.0), 0.0, 1e-12);
  const auto f = edge_metrics(fat, {}, Edge::falling);
  const auto fadj = adjust_transition_endpoints(f, Edge::falling, fat);
  EXPECT_GT(evaluate(fat, fadj.x2), 0.0);
  EXPECT_EQ(fadj.x1, f.x1);

  const ModelCoefficients positive{20, 300, 1, 20, 1, 60};
  const auto p = edge_metrics(positive, {}, Edge::rising);
  const auto padj = adjust_transition_endpoints(p, Edge::rising, positive);
  EXPECT_EQ(padj.x1, p.x1);

  const ModelCoefficients sunk{-400, 300, 1, 20, 1, 60};
  EXPECT_EQ(code_of([&] { adjust_transition_endpoints(edge_metrics(sunk, {}, Edge::rising), Edge::rising, sunk); }),
            ErrorCode::endpoint_collapse);
  const auto z = line_zones(sunk, {});
  EXPECT_TRUE(z->rising_collapsed && z->falling_collapsed);
}

TEST(Compose, SeparableNoiselessPhantomIdentity) {
  const auto ps = phantom::generate_slice(clean(phantom::LumenShape::separable));
  const auto fits = fit_directions(ps.slice);
  const auto field = compose_caidc(ps.slice, fits);
  double worst = 0.0;
  for (std::size_t i = 0; i < field.values.size(); ++i)
    if (ps.slice.p_mask.data()[i]) worst = std::max(worst, std::abs(field.values.data()[i] - ps.truth.data()[i]));
  EXPECT_LE(worst, 1e-3);
}

TEST(Compose, TransitionFromRowAndMergeOptimality) {
  auto sc = phantom::Scenario{};
  sc.seed = 34;
  const auto ps = phantom::generate_slice(sc);
  const auto fits = fit_directions(ps.slice);
  const auto field = compose_caidc(ps.slice, fits);
  std::size_t transitions = 0;
  for (std::size_t r = 0; r < 64; ++r)
    for (std::size_t c = 0; c < 64; ++c) {
      if (!ps.slice.p_mask(r, c)) continue;
      const LineFit* row = fits.find(Axis::row, r, c);
      const LineFit* col = fits.find(Axis::column, r, c);
      if (field.zone(r, c) == Zone::transition && row && row->zones) {
        ++transitions;
        EXPECT_EQ(field.values(r, c), model_value(*row, r, c));
      } else if (field.zone(r, c) != Zone::unfitted && row && col) {
        const double obs = ps.slice.pixels(r, c);
        const double best = std::min(std::abs(model_value(*row, r, c) - obs), std::abs(model_value(*col, r, c) - obs));
        EXPECT_EQ(std::abs(field.values(r, c) - obs), best);
      }
    }
  EXPECT_GT(transitions, 100u);
  // recomposing from the stored fits is bit-identical
  const auto again = compose_caidc(ps.slice, field.fits);
  EXPECT_EQ(again.values, field.values);
  EXPECT_EQ(again.zone, field.zone);
  EXPECT_EQ(again.source, field.source);
}

TEST(EdgeDirections, IsotropicLumenKeepsRows) {
  auto sc = phantom::Scenario{};
  sc.seed = 35;
  const auto ps = phantom::generate_slice(sc);
  const auto field = compose_caidc(ps.slice, fit_directions(ps.slice));
  const auto rep = compare_edge_directions(ps.slice, field);
  EXPECT_GT(rep.kruskal.p_value, 0.05);
  EXPECT_EQ(rep.chosen, Direction::row);
  EXPECT_FALSE(rep.overridden);
}

TEST(EdgeDirections, IdenticalModelsGiveUnitP) {
  // One row whose pixels all sit in a transition zone; every column model is
  // the constant the row model takes there, so the three samples coincide.
  const ModelCoefficients m{0, 300, 0.3, 3, 0.3, 3.6};
  Mask p(12, 12, 0);
  for (std::size_t c = 0; c < 12; ++c) p(5, c) = 1;
  const SliceData slice = slice_from(Image(12, 12, 0.0), p, p);
  CaidcField field;
  field.values = Image(12, 12, 0.0);
  field.pointwise = Image(12, 12, 0.0);
  field.zone = Grid<Zone>(12, 12, Zone::unfitted);
  field.fits.rows.resize(12);
  field.fits.columns.resize(12);
  field.fits.rows[5].push_back(fitted(Axis::row, 5, 0, 11, m));
  for (std::size_t c = 0; c < 12; ++c) {
    const double v = evaluate(m, static_cast<double>(c));
    field.fits.columns[c].push_back(fitted(Axis::column, c, 5, 5, {v, 0, 1, 0, 1, 0}));
    field.zone(5, c) = Zone::transition;
    field.pointwise(5, c) = v;
  }
  const auto rep = compare_edge_directions(slice, field);
  EXPECT_EQ(rep.n_values, 12u);
  EXPECT_EQ(rep.kruskal.statistic, 0.0);
  EXPECT_EQ(rep.kruskal.p_value, 1.0);
  EXPECT_EQ(rep.chosen, Direction::row);

  field.zone = Grid<Zone>(12, 12, Zone::unfitted);
  field.zone(5, 0) = field.zone(5, 1) = Zone::transition;
  EXPECT_EQ(code_of([&] { compare_edge_directions(slice, field); }), ErrorCode::insufficient_data);
}

TEST(GoodnessOfFit, Examples) {
  const auto ps = phantom::generate_slice(clean(phantom::LumenShape::separable));
  CaidcField exact;
  exact.values = ps.slice.pixels;
  exact.zone = Grid<Zone>(64, 64, Zone::plateau);
  const auto same = goodness_of_fit(ps.slice, exact);
  EXPECT_EQ(same.p_value, 1.0);
  EXPECT_EQ(same.rmse, 0.0);
  EXPECT_EQ(same.n_pixels, count(ps.slice.p_mask));

  CaidcField shifted = exact;
  for (auto& v : shifted.values.data()) v += 200.0;
  const auto off = goodness_of_fit(ps.slice, shifted);
  EXPECT_LT(off.p_value, 0.001);
  EXPECT_NEAR(off.rmse, 200.0, 1e-9);

  auto sc = phantom::Scenario{};
  sc.seed = 36;
  const auto noisy = phantom::generate_slice(sc);
  const auto res = process_slice(noisy.slice);
  EXPECT_GE(res.fit_quality.rmse, 8.0);
  EXPECT_LE(res.fit_quality.rmse, 20.0);
  EXPECT_GT(res.fit_quality.p_value, 0.05);
}

TEST(Eliminate, Arithmetic) {
  Mask s(3, 3, 0);
  s(1, 1) = 1;
  Mask p(3, 3, 1);
  Image px(3, 3, 100.0);
  px(1, 1) = 362;
  CaidcField f;
  f.values = Image(3, 3, 0.0);
  f.values(1, 1) = 350;
  f.zone = Grid<Zone>(3, 3, Zone::plateau);
  const auto out = eliminate_ca(slice_from(px, s, p), f);
  EXPECT_EQ(out.pixels(1, 1), 52);
  EXPECT_EQ(out.pixels(0, 0), 100);

  f.values = px;
  const auto flat = eliminate_ca(slice_from(px, s, p), f, 40.0);
  EXPECT_EQ(flat.pixels(1, 1), 40);

  f.zone(1, 1) = Zone::unfitted;
  EXPECT_EQ(code_of([&] { eliminate_ca(slice_from(px, s, p), f); }), ErrorCode::insufficient_data);
}

TEST(ProcessSlice, EmptyLumenAndShapeChecks) {
  const Mask none(16, 16, 0);
  const auto res = process_slice(slice_from(Image(16, 16, 0.0), none, none));
  EXPECT_TRUE(res.empty());
  EXPECT_EQ(res.note, "empty lumen");
  EXPECT_EQ(code_of([&] { process_slice(slice_from(Image(16, 16, 0.0), none, Mask(15, 16, 0))); }),
            ErrorCode::dim_mismatch);
  Mask s(16, 16, 0), p(16, 16, 0);
  s(3, 3) = 1;
  EXPECT_EQ(code_of([&] { process_slice(slice_from(Image(16, 16, 0.0), s, p)); }), ErrorCode::invalid_argument);
}

TEST(ProcessSlice, MaskContainmentPreserved) {
  auto sc = phantom::Scenario{};
  sc.seed = 37;
  auto ps = phantom::generate_slice(sc);
  ps.slice.pixels(32, 32) = 1200;  // a calcinate
  const auto res = process_slice(ps.slice);
  EXPECT_EQ(res.calcinates_replaced, 1u);
  for (std::size_t i = 0; i < res.processed.s_mask.size(); ++i)
    if (res.processed.s_mask.data()[i]) EXPECT_TRUE(res.processed.p_mask.data()[i]);
  EXPECT_EQ(res.processed.s_mask, ps.slice.s_mask);
}
