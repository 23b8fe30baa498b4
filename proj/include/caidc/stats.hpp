#pragma once

// Rank-based tests: Mann-Whitney U, Wilcoxon signed-rank, Kruskal-Wallis and
// Dunn's post-hoc comparisons. Exact null distributions are counted by dynamic
// programming for small tie-free samples; larger samples use the normal or
// chi-square approximations with tie and continuity corrections.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "caidc/error.hpp"
#include "caidc/random.hpp"

namespace caidc::stats {

enum class Method { exact, normal_approximation, chi_square, permutation };

constexpr std::string_view to_string(Method m) {
  switch (m) {
    case Method::exact: return "exact";
    case Method::normal_approximation: return "normal_approximation";
    case Method::chi_square: return "chi_square";
    case Method::permutation: return "permutation";
  }
  return "unknown";
}

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  Method method = Method::exact;
  std::vector<std::size_t> n;
  bool tie_correction_applied = false;
  /// Large-sample p-value, always filled for Kruskal-Wallis even when the
  /// reported p_value comes from permutations.
  std::optional<double> p_asymptotic;
};

inline constexpr std::size_t kExactMannWhitneyMaxTotal = 16;
inline constexpr std::size_t kExactSignedRankMaxN = 15;
inline constexpr std::size_t kPermutationKruskalMaxTotal = 30;
inline constexpr std::size_t kPermutationCount = 10000;
inline constexpr std::uint64_t kPermutationSeed = 0x4B57'2023'0002ULL;

/// Upper tail of the standard normal.
inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

inline double chi_square_sf(double x, double df) {
  if (x <= 0.0) return 1.0;
  return boost::math::gamma_q(df / 2.0, x / 2.0);
}

struct Ranking {
  std::vector<double> ranks;            // midranks, 1-based
  std::vector<std::size_t> tie_groups;  // sizes of groups with size > 1
  bool has_ties() const noexcept { return !tie_groups.empty(); }
  /// sum of (t^3 - t) over tie groups
  double tie_sum() const {
    double s = 0.0;
    for (auto t : tie_groups) {
      const double td = static_cast<double>(t);
      s += td * td * td - td;
    }
    return s;
  }
};

inline Ranking rank(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  Ranking out;
  out.ranks.resize(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) out.ranks[order[k]] = mid;
    if (j - i > 1) out.tie_groups.push_back(j - i);
    i = j;
  }
  return out;
}

namespace detail {

/// Two-sided p from a discrete null given as counts over statistic values
/// 0..max (integers), observed statistic `s`.
inline double two_sided_from_counts(const std::vector<double>& counts, double s) {
  const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
  double lower = 0.0;
  double upper = 0.0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const double v = static_cast<double>(k);
    if (v <= s) lower += counts[k];
    if (v >= s) upper += counts[k];
  }
  return std::min(1.0, 2.0 * std::min(lower, upper) / total);
}

/// Counts of the Mann-Whitney U statistic over all C(m+n, m) arrangements.
inline std::vector<double> mann_whitney_counts(std::size_t m, std::size_t n) {
  // table[i][j] holds the distribution for sizes (i, j); built incrementally
  // from f(i, j, u) = f(i-1, j, u-j) + f(i, j-1, u).
  std::vector<std::vector<std::vector<double>>> table(
      m + 1, std::vector<std::vector<double>>(n + 1));
  for (std::size_t i = 0; i <= m; ++i) {
    for (std::size_t j = 0; j <= n; ++j) {
      auto& cell = table[i][j];
      cell.assign(i * j + 1, 0.0);
      if (i == 0 || j == 0) {
        cell[0] = 1.0;
        continue;
      }
      const auto& left = table[i - 1][j];
      const auto& down = table[i][j - 1];
      for (std::size_t u = 0; u < left.size(); ++u) cell[u + j] += left[u];
      for (std::size_t u = 0; u < down.size(); ++u) cell[u] += down[u];
    }
  }
  return table[m][n];
}

/// Counts of the signed-rank sum W+ over all 2^n sign patterns.
inline std::vector<double> signed_rank_counts(std::size_t n) {
  const std::size_t max_sum = n * (n + 1) / 2;
  std::vector<double> counts(max_sum + 1, 0.0);
  counts[0] = 1.0;
  for (std::size_t r = 1; r <= n; ++r)
    for (std::size_t s = max_sum; s >= r; --s) counts[s] += counts[s - r];
  return counts;
}

}  // namespace detail

/// Two-sided Mann-Whitney U test. The statistic is U for `x`.
inline TestResult mann_whitney_u(std::span<const double> x, std::span<const double> y) {
  if (x.empty() || y.empty()) throw Error(ErrorCode::empty_sample, "Mann-Whitney needs two non-empty samples");
  const std::size_t m = x.size();
  const std::size_t n = y.size();
  std::vector<double> pooled(x.begin(), x.end());
  pooled.insert(pooled.end(), y.begin(), y.end());
  const Ranking ranking = rank(pooled);
  double rank_sum_x = 0.0;
  for (std::size_t i = 0; i < m; ++i) rank_sum_x += ranking.ranks[i];
  const double md = static_cast<double>(m);
  const double nd = static_cast<double>(n);
  const double u = rank_sum_x - md * (md + 1.0) / 2.0;

  TestResult out;
  out.statistic = u;
  out.n = {m, n};
  if (m + n <= kExactMannWhitneyMaxTotal && !ranking.has_ties()) {
    out.method = Method::exact;
    out.p_value = detail::two_sided_from_counts(detail::mann_whitney_counts(m, n), u);
    return out;
  }
  out.method = Method::normal_approximation;
  out.tie_correction_applied = ranking.has_ties();
  const double total = md + nd;
  const double variance =
      md * nd / 12.0 * ((total + 1.0) - ranking.tie_sum() / (total * (total - 1.0)));
  const double centered = u - md * nd / 2.0;
  if (!(variance > 0.0) || centered == 0.0) {
    out.p_value = 1.0;
    return out;
  }
  const double correction = centered > 0 ? 0.5 : -0.5;
  const double z = (centered - correction) / std::sqrt(variance);
  out.p_value = std::min(1.0, 2.0 * normal_sf(std::abs(z)));
  return out;
}

/// Wilcoxon signed-rank test on paired samples, two-sided. Zero differences
/// are dropped; the statistic is W+ (sum of ranks of positive differences).
inline TestResult wilcoxon_signed_rank(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error(ErrorCode::length_mismatch, "paired samples differ in length");
  if (x.empty()) throw Error(ErrorCode::empty_sample, "signed-rank test on empty samples");
  std::vector<double> diffs;
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] - y[i] != 0.0) diffs.push_back(x[i] - y[i]);
  if (diffs.empty()) throw Error(ErrorCode::all_zero_differences, "all paired differences are zero");
  const bool zeros_dropped = diffs.size() != x.size();

  std::vector<double> magnitudes(diffs.size());
  std::transform(diffs.begin(), diffs.end(), magnitudes.begin(), [](double d) { return std::abs(d); });
  const Ranking ranking = rank(magnitudes);
  double w_plus = 0.0;
  for (std::size_t i = 0; i < diffs.size(); ++i)
    if (diffs[i] > 0) w_plus += ranking.ranks[i];

  const std::size_t n = diffs.size();
  TestResult out;
  out.statistic = w_plus;
  out.n = {n};
  if (n <= kExactSignedRankMaxN && !ranking.has_ties() && !zeros_dropped) {
    out.method = Method::exact;
    out.p_value = detail::two_sided_from_counts(detail::signed_rank_counts(n), w_plus);
    return out;
  }
  out.method = Method::normal_approximation;
  out.tie_correction_applied = ranking.has_ties();
  const double nd = static_cast<double>(n);
  const double variance = nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - ranking.tie_sum() / 48.0;
  const double centered = w_plus - nd * (nd + 1.0) / 4.0;
  if (!(variance > 0.0) || centered == 0.0) {
    out.p_value = 1.0;
    return out;
  }
  const double correction = centered > 0 ? 0.5 : -0.5;
  const double z = (centered - correction) / std::sqrt(variance);
  out.p_value = std::min(1.0, 2.0 * normal_sf(std::abs(z)));
  return out;
}

namespace detail {

inline void check_groups(std::span<const std::vector<double>> groups) {
  if (groups.size() < 2) throw Error(ErrorCode::too_few_groups, "need at least two groups");
  for (const auto& g : groups)
    if (g.empty()) throw Error(ErrorCode::empty_sample, "empty group");
}

/// Tie-corrected H from per-observation ranks and group labels.
inline double kruskal_h(std::span<const double> ranks, std::span<const std::size_t> labels,
                        std::span<const std::size_t> sizes, double tie_factor) {
  std::vector<double> sums(sizes.size(), 0.0);
  for (std::size_t i = 0; i < ranks.size(); ++i) sums[labels[i]] += ranks[i];
  const double total = static_cast<double>(ranks.size());
  double acc = 0.0;
  for (std::size_t g = 0; g < sizes.size(); ++g) acc += sums[g] * sums[g] / static_cast<double>(sizes[g]);
  const double h = 12.0 / (total * (total + 1.0)) * acc - 3.0 * (total + 1.0);
  return std::max(0.0, h / tie_factor);
}

}  // namespace detail

/// Kruskal-Wallis H test. For pooled samples of at most 30 observations the
/// reported p-value comes from kPermutationCount label permutations drawn with
/// kPermutationSeed; the chi-square p-value is always in p_asymptotic.
inline TestResult kruskal_wallis(std::span<const std::vector<double>> groups,
                                 std::uint64_t permutation_seed = kPermutationSeed) {
  detail::check_groups(groups);
  std::vector<double> pooled;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> sizes;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    pooled.insert(pooled.end(), groups[g].begin(), groups[g].end());
    labels.insert(labels.end(), groups[g].size(), g);
    sizes.push_back(groups[g].size());
  }
  const Ranking ranking = rank(pooled);
  const double total = static_cast<double>(pooled.size());
  const double tie_factor = 1.0 - ranking.tie_sum() / (total * total * total - total);

  TestResult out;
  out.n = sizes;
  out.tie_correction_applied = ranking.has_ties();
  if (!(tie_factor > 0.0)) {
    // every observation equal
    out.statistic = 0.0;
    out.p_value = 1.0;
    out.p_asymptotic = 1.0;
    out.method = pooled.size() <= kPermutationKruskalMaxTotal ? Method::permutation : Method::chi_square;
    return out;
  }
  const double h = detail::kruskal_h(ranking.ranks, labels, sizes, tie_factor);
  out.statistic = h;
  out.p_asymptotic = chi_square_sf(h, static_cast<double>(groups.size() - 1));

  if (pooled.size() > kPermutationKruskalMaxTotal) {
    out.method = Method::chi_square;
    out.p_value = *out.p_asymptotic;
    return out;
  }
  out.method = Method::permutation;
  Rng rng(permutation_seed);
  std::vector<std::size_t> shuffled = labels;
  std::size_t at_least = 0;
  const double tolerance = 1e-9 * std::max(1.0, h);
  for (std::size_t k = 0; k < kPermutationCount; ++k) {
    rng.shuffle(shuffled.begin(), shuffled.end());
    if (detail::kruskal_h(ranking.ranks, shuffled, sizes, tie_factor) >= h - tolerance) ++at_least;
  }
  out.p_value = static_cast<double>(at_least + 1) / static_cast<double>(kPermutationCount + 1);
  return out;
}

struct DunnComparison {
  std::size_t first = 0;
  std::size_t second = 0;
  double z = 0.0;  // positive when `first` has the larger mean rank
  double p_value = 1.0;
  double p_adjusted = 1.0;  // Bonferroni
};

/// Dunn's pairwise comparisons of mean ranks with tie correction; two-sided
/// p-values, unadjusted and Bonferroni-adjusted.
inline std::vector<DunnComparison> dunn_posthoc(std::span<const std::vector<double>> groups) {
  detail::check_groups(groups);
  std::vector<double> pooled;
  for (const auto& g : groups) pooled.insert(pooled.end(), g.begin(), g.end());
  const Ranking ranking = rank(pooled);
  const double total = static_cast<double>(pooled.size());
  const double base_variance =
      total * (total + 1.0) / 12.0 - ranking.tie_sum() / (12.0 * (total - 1.0));

  std::vector<double> mean_rank(groups.size(), 0.0);
  std::size_t offset = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t i = 0; i < groups[g].size(); ++i) mean_rank[g] += ranking.ranks[offset + i];
    mean_rank[g] /= static_cast<double>(groups[g].size());
    offset += groups[g].size();
  }

  const double comparisons = static_cast<double>(groups.size() * (groups.size() - 1) / 2);
  std::vector<DunnComparison> out;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    for (std::size_t j = i + 1; j < groups.size(); ++j) {
      DunnComparison cmp{i, j};
      const double se = std::sqrt(base_variance * (1.0 / static_cast<double>(groups[i].size()) +
                                                   1.0 / static_cast<double>(groups[j].size())));
      const double diff = mean_rank[i] - mean_rank[j];
      if (se > 0.0 && diff != 0.0) {
        cmp.z = diff / se;
        cmp.p_value = std::min(1.0, 2.0 * normal_sf(std::abs(cmp.z)));
      }
      cmp.p_adjusted = std::min(1.0, cmp.p_value * comparisons);
      out.push_back(cmp);
    }
  }
  return out;
}

inline double median(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::empty_sample, "median of empty sample");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

}  // namespace caidc::stats
