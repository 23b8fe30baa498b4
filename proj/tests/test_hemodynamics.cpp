#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "caidc/hemodynamics.hpp"
#include "caidc/phantom.hpp"
#include "caidc/random.hpp"

using namespace caidc;
using hemo::DiameterClass;

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

ModelCoefficients with_inflections(double f0, double a, double b, double left, double d, double right) {
  return {f0, a, b, b * left, d, d * right};
}

// One central-row-like line per slice, coefficients drawn around the given rates.
std::vector<hemo::LineMetrics> cohort(Rng& rng, std::size_t slices, double b, double d, double plateau) {
  std::vector<hemo::LineMetrics> out;
  for (std::size_t s = 0; s < slices; ++s) {
    const auto m = with_inflections(-50, 300, b * rng.uniform(0.9, 1.1), 10, d * rng.uniform(0.9, 1.1),
                                    10 + plateau * rng.uniform(0.95, 1.05));
    out.push_back(hemo::line_metrics(m, {}, 1.0, static_cast<int>(s)));
  }
  return out;
}

std::vector<hemo::LineMetrics> row_metrics(const phantom::PhantomSlice& ps, const SliceResult& res,
                                           const std::vector<std::size_t>& rows) {
  std::vector<hemo::LineMetrics> out;
  const auto center = geometric_center(ps.slice.s_mask);
  for (std::size_t r : rows) {
    const LineFit* lf = res.field.fits.find(Axis::row, r, center.col);
    if (lf && validate(lf->fit->coefficients).ok())
      out.push_back(hemo::line_metrics(lf->fit->coefficients, {}, 1.0, 0, Axis::row, r));
  }
  return out;
}

}  // namespace

TEST(Classify, TableCasesAndBoundaries) {
  EXPECT_EQ(hemo::classify_diameter(34), DiameterClass::aneurysm);
  EXPECT_EQ(hemo::classify_diameter(27), DiameterClass::dilatation);
  EXPECT_EQ(hemo::classify_diameter(16), DiameterClass::norm);
  EXPECT_EQ(hemo::classify_diameter(std::nextafter(25.0, 0.0)), DiameterClass::norm);
  EXPECT_EQ(hemo::classify_diameter(25.0), DiameterClass::dilatation);
  EXPECT_EQ(hemo::classify_diameter(std::nextafter(30.0, 0.0)), DiameterClass::dilatation);
  EXPECT_EQ(hemo::classify_diameter(30.0), DiameterClass::aneurysm);
  EXPECT_EQ(code_of([] { hemo::classify_diameter(0.0); }), ErrorCode::non_positive_diameter);
  EXPECT_EQ(code_of([] { hemo::classify_diameter(-3.0); }), ErrorCode::non_positive_diameter);
  EXPECT_EQ(code_of([] { hemo::classify_diameter(std::nan("")); }), ErrorCode::non_positive_diameter);
}

TEST(Classify, MonotoneStepFunction) {
  int last = 0;
  for (double x = 0.5; x < 60; x += 0.01) {
    const int c = static_cast<int>(hemo::classify_diameter(x));
    EXPECT_GE(c, last);
    last = c;
  }
}

TEST(LineMetrics, KnownTruth) {
  const ModelCoefficients m{0, 1, 2, 10, 2, 50};
  const auto lm = hemo::line_metrics(m, {}, 0.5);
  EXPECT_NEAR(lm.plateau_width, 13.7853919015778, 1e-10);
  ASSERT_TRUE(lm.ratio_rising && lm.ratio_falling);
  EXPECT_NEAR(*lm.ratio_rising, 0.450811129838891, 1e-12);
  EXPECT_NEAR(*lm.ratio_falling, 0.450811129838891, 1e-12);
  EXPECT_NEAR(lm.estimated_diameter_px, 26.2146080984222, 1e-10);
  EXPECT_NEAR(lm.estimated_diameter_mm, 13.1073040492111, 1e-10);
  EXPECT_NEAR(std::abs(lm.rising.slope), std::abs(lm.falling.slope), 1e-12);
}

TEST(LineMetrics, FlattenedProfileWidensTransitions) {
  const auto sharp = hemo::line_metrics(with_inflections(-50, 300, 2, 10, 2, 40), {}, 1.0);
  const auto flat = hemo::line_metrics(with_inflections(-50, 300, 1, 10, 1, 40), {}, 1.0);
  EXPECT_GT(flat.rising.transition_width, sharp.rising.transition_width);
  EXPECT_GT(*flat.ratio_rising, *sharp.ratio_rising);
  EXPECT_LT(std::abs(flat.rising.slope), std::abs(sharp.rising.slope));
}

TEST(LineMetrics, RatioScaleInvariant) {
  Rng rng(41);
  for (int k = 0; k < 100; ++k) {
    const auto m = with_inflections(-50, 300, rng.uniform(0.5, 3), rng.uniform(5, 20), rng.uniform(0.5, 3),
                                    rng.uniform(40, 80));
    const double s = rng.uniform(0.2, 5.0);
    ModelCoefficients scaled = m;
    scaled.rise_rate /= s;
    scaled.fall_rate /= s;
    const auto a = hemo::line_metrics(m, {}, 1.0);
    const auto b = hemo::line_metrics(scaled, {}, 1.0);
    if (!a.ratio_rising) continue;
    EXPECT_NEAR(b.plateau_width, s * a.plateau_width, 1e-9 * s * std::abs(a.plateau_width));
    EXPECT_NEAR(*b.ratio_rising, *a.ratio_rising, 1e-12);
    EXPECT_NEAR(*b.ratio_falling, *a.ratio_falling, 1e-12);
  }
}

TEST(LineMetrics, DegeneratePlateauHasNoRatio) {
  const auto lm = hemo::line_metrics({0, 1, 1, 5, 1, 15}, {}, 1.0);
  EXPECT_TRUE(lm.degenerate());
  EXPECT_FALSE(lm.ratio_rising);
}

TEST(CentralLines, FlagsAndCenter) {
  auto sc = phantom::Scenario{};
  sc.seed = 42;
  const auto ps = phantom::generate_slice(sc);
  const auto lines = hemo::central_line_metrics(ps.slice, hemo::fit_central_lines(ps.slice));
  EXPECT_EQ(lines.center, geometric_center(ps.slice.s_mask));
  ASSERT_TRUE(lines.row && lines.column);
  EXPECT_TRUE(lines.flags.empty());
  EXPECT_NEAR(lines.row->estimated_diameter_mm, 20.0 + 2.0 * theta({}) / 1.2, 2.0);
}

TEST(FlowCompare, DistinctRegimesDiffer) {
  Rng rng(43);
  const auto normal = cohort(rng, 12, 2.0, 2.0, 40);
  const auto aneurysm = cohort(rng, 12, 0.8, 0.8, 40);
  const auto rep = hemo::flow_profile_compare(normal, aneurysm);
  EXPECT_LT(rep.get("ratio_pooled").result.p_value, 0.05);
  EXPECT_EQ(rep.get("ratio_pooled").direction, "normal < aneurysm");
  EXPECT_EQ(rep.get("ratio_pooled").samples[0].size(), 24u);
  EXPECT_EQ(rep.reports.size(), 6u);
  EXPECT_EQ(code_of([&] { rep.get("nope"); }), ErrorCode::invalid_argument);
}

TEST(FlowCompare, MirroredSlopesCancelWhenPooled) {
  Rng rng(44);
  const auto normal = cohort(rng, 15, 2.0, 1.0, 30);
  const auto aneurysm = cohort(rng, 15, 1.0, 2.0, 50);
  const auto rep = hemo::flow_profile_compare(normal, aneurysm);
  EXPECT_LT(rep.get("abs_slope_rising").result.p_value, 0.05);
  EXPECT_LT(rep.get("abs_slope_falling").result.p_value, 0.05);
  EXPECT_GE(rep.get("abs_slope_pooled").result.p_value, 0.05);
  EXPECT_LT(rep.get("ratio_pooled").result.p_value, 0.05);
  EXPECT_TRUE(rep.slope_pooling_caveat);

  // exact mirror: the pooled slope samples coincide
  std::vector<hemo::LineMetrics> mirrored;
  for (const auto& l : normal) {
    hemo::LineMetrics m = l;
    std::swap(m.rising.slope, m.falling.slope);
    m.rising.slope = std::abs(m.rising.slope);
    m.falling.slope = -std::abs(m.falling.slope);
    mirrored.push_back(m);
  }
  const auto exact = hemo::flow_profile_compare(normal, mirrored);
  EXPECT_LT(exact.get("abs_slope_rising").result.p_value, 0.05);
  EXPECT_EQ(exact.get("abs_slope_pooled").result.p_value, 1.0);
}

TEST(FlowCompare, ExcludesDegenerateLinesAndNeedsTenSlices) {
  Rng rng(45);
  auto normal = cohort(rng, 10, 2.0, 2.0, 40);
  const auto aneurysm = cohort(rng, 10, 1.0, 1.0, 40);
  normal.push_back(hemo::line_metrics({0, 300, 1, 5, 1, 15}, {}, 1.0, 3));
  const auto rep = hemo::flow_profile_compare(normal, aneurysm);
  EXPECT_EQ(rep.get("ratio_rising").excluded_lines, 1u);
  EXPECT_EQ(rep.get("ratio_rising").samples[0].size(), 10u);
  EXPECT_EQ(rep.get("abs_slope_rising").samples[0].size(), 11u);

  const std::vector<hemo::LineMetrics> short_cohort(normal.begin(), normal.begin() + 9);
  EXPECT_EQ(code_of([&] { hemo::flow_profile_compare(short_cohort, aneurysm); }), ErrorCode::insufficient_slices);
}

TEST(FlowCompare, Deterministic) {
  Rng rng(46);
  const auto normal = cohort(rng, 10, 2.0, 2.0, 40);
  const auto aneurysm = cohort(rng, 10, 1.5, 1.5, 40);
  const auto a = hemo::flow_profile_compare(normal, aneurysm);
  const auto b = hemo::flow_profile_compare(normal, aneurysm);
  for (std::size_t i = 0; i < a.reports.size(); ++i) EXPECT_EQ(a.reports[i].result.p_value, b.reports[i].result.p_value);
}

TEST(Thrombus, ClotSideWiderAndShallower) {
  auto sc = phantom::Scenario{};
  sc.kind = phantom::ScenarioKind::thrombus;
  sc.seed = 47;
  const auto ps = phantom::generate_slice(sc);
  for (std::size_t r : ps.clot_rows) EXPECT_LT(ps.row_truth[r].rise_rate, ps.row_truth[r].fall_rate);
  const auto res = process_slice(ps.slice);
  const auto rep = hemo::thrombus_edge_compare(row_metrics(ps, res, ps.clot_rows));
  EXPECT_LT(rep.width.result.p_value, 0.05);
  EXPECT_LT(rep.slope.result.p_value, 0.05);
  EXPECT_TRUE(rep.rising_wider);
  EXPECT_TRUE(rep.rising_shallower);
}

TEST(Thrombus, SymmetricLumenNotSignificant) {
  auto sc = phantom::Scenario{};
  sc.seed = 48;
  const auto ps = phantom::generate_slice(sc);
  const auto res = process_slice(ps.slice);
  std::vector<std::size_t> rows;
  for (std::size_t r = 27; r < 37; ++r) rows.push_back(r);
  const auto metrics = row_metrics(ps, res, rows);
  ASSERT_EQ(metrics.size(), 10u);
  const auto rep = hemo::thrombus_edge_compare(metrics);
  EXPECT_GT(rep.width.result.p_value, 0.05);
  EXPECT_GT(rep.slope.result.p_value, 0.05);
  EXPECT_EQ(code_of([&] {
              hemo::thrombus_edge_compare(std::vector<hemo::LineMetrics>(metrics.begin(), metrics.begin() + 4));
            }),
            ErrorCode::insufficient_rows);
}

TEST(Branching, HomogeneousSlicesNotSignificant) {
  auto sc = phantom::Scenario{};
  sc.n_slices = 5;
  sc.seed = 49;
  std::vector<phantom::PhantomSlice> slices;
  std::vector<SliceResult> results;
  for (std::size_t z = 0; z < sc.n_slices; ++z) {
    slices.push_back(phantom::generate_slice(sc, z));
    results.push_back(process_slice(slices.back().slice));
  }
  std::vector<hemo::BranchSlice> input;
  for (std::size_t z = 0; z < sc.n_slices; ++z) input.push_back({&results[z].processed, &results[z].field});
  const auto rep = hemo::branching_analysis(input);
  EXPECT_GT(rep.kruskal.result.p_value, 0.05);
  EXPECT_TRUE(rep.branch_slices.empty());
  EXPECT_EQ(rep.kruskal.direction, "homogeneous");
  EXPECT_EQ(rep.slice_indices, (std::vector<int>{0, 1, 2, 3, 4}));
  input.resize(2);
  EXPECT_EQ(code_of([&] { hemo::branching_analysis(input); }), ErrorCode::insufficient_slices);
}

TEST(Branching, SingleBranchSliceIsolated) {
  auto sc = phantom::Scenario{};
  sc.kind = phantom::ScenarioKind::branching;
  sc.n_slices = 7;
  sc.branch_first_slice = sc.branch_last_slice = 3;
  sc.seed = 50;
  std::vector<SliceResult> results;
  for (std::size_t z = 0; z < sc.n_slices; ++z) results.push_back(process_slice(phantom::generate_slice(sc, z).slice));
  std::vector<hemo::BranchSlice> input;
  for (const auto& r : results) input.push_back({&r.processed, &r.field});
  const auto rep = hemo::branching_analysis(input);
  EXPECT_LT(rep.kruskal.result.p_value, 0.05);
  EXPECT_EQ(rep.branch_slices, std::vector<int>{3});
}
