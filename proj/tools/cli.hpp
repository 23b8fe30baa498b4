#pragma once

// caidc command-line front end: fit, analyze, eliminate, phantom, stats.
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "caidc/hemodynamics.hpp"
#include "caidc/nifti_io.hpp"
#include "caidc/phantom.hpp"
#include "caidc/pipeline.hpp"
#include "caidc/report.hpp"
#include "caidc/stats.hpp"

namespace caidc::cli {

namespace fs = std::filesystem;
using report::Json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CohortSource {
  std::string volume;  // empty: the run's volume
  std::string mask;
  std::vector<std::size_t> slices;
};

struct RunConfig {
  std::string volume;
  std::string mask;
  std::string out;
  std::string truth;  // truth_lines.csv from `phantom`, optional
  double delta_y = 0.002;
  double blood_baseline = kDefaultBloodBaseline;
  double calc_threshold = kDefaultCalcThreshold;
  double w_th = 2.0;
  std::optional<double> w_pix;
  int max_iterations = 100;
  double cost_tolerance = 1e-10;
  double step_tolerance = 1e-10;
  std::uint64_t seed = 1;
  std::optional<unsigned> jobs;

  std::optional<CohortSource> flow_normal;
  std::optional<CohortSource> flow_aneurysm;
  std::optional<std::vector<std::size_t>> branching_slices;
  std::optional<std::size_t> thrombus_slice;
  std::vector<std::size_t> thrombus_rows;

  VolumeOptions volume_options() const {
    VolumeOptions o;
    o.slice.accuracy.delta_y = delta_y;
    o.slice.calc_threshold = calc_threshold;
    o.slice.fit.max_iterations = max_iterations;
    o.slice.fit.cost_tolerance = cost_tolerance;
    o.slice.fit.step_tolerance = step_tolerance;
    o.w_th_mm = w_th;
    o.w_pix = w_pix;
    o.blood_baseline = blood_baseline;
    o.jobs = resolve_jobs(jobs);
    return o;
  }

  void check() const {
    volume_options().slice.accuracy.check();
    volume_options().slice.fit.check();
    if (!(w_th > 0)) throw Error(ErrorCode::invalid_argument, "w_th must be positive");
    if (w_pix && !(*w_pix > 0)) throw Error(ErrorCode::invalid_argument, "w_pix must be positive");
  }
};

inline CohortSource cohort_from_json(const Json& j) {
  report::detail::reject_unknown_keys(j, {"volume", "mask", "slices"}, "cohort");
  CohortSource c;
  report::detail::read_field(j, "volume", c.volume);
  report::detail::read_field(j, "mask", c.mask);
  report::detail::read_field(j, "slices", c.slices);
  return c;
}

/// Fields present in the file replace the defaults.
inline void apply_config(RunConfig& cfg, const Json& j) {
  using report::detail::read_field;
  report::detail::reject_unknown_keys(
      j,
      {"volume", "mask", "out", "truth", "delta_y", "blood_baseline", "calc_threshold", "w_th", "w_pix",
       "max_iterations", "cost_tolerance", "step_tolerance", "seed", "jobs", "flow", "branching", "thrombus"},
      "config");
  read_field(j, "volume", cfg.volume);
  read_field(j, "mask", cfg.mask);
  read_field(j, "out", cfg.out);
  read_field(j, "truth", cfg.truth);
  read_field(j, "delta_y", cfg.delta_y);
  read_field(j, "blood_baseline", cfg.blood_baseline);
  read_field(j, "calc_threshold", cfg.calc_threshold);
  read_field(j, "w_th", cfg.w_th);
  if (j.contains("w_pix")) cfg.w_pix = j.at("w_pix").get<double>();
  read_field(j, "max_iterations", cfg.max_iterations);
  read_field(j, "cost_tolerance", cfg.cost_tolerance);
  read_field(j, "step_tolerance", cfg.step_tolerance);
  read_field(j, "seed", cfg.seed);
  if (j.contains("jobs")) cfg.jobs = j.at("jobs").get<unsigned>();
  if (j.contains("flow")) {
    const Json& f = j.at("flow");
    report::detail::reject_unknown_keys(f, {"normal", "aneurysm"}, "flow");
    if (!f.contains("normal") || !f.contains("aneurysm"))
      throw Error(ErrorCode::invalid_argument, "flow needs both \"normal\" and \"aneurysm\" cohorts");
    cfg.flow_normal = cohort_from_json(f.at("normal"));
    cfg.flow_aneurysm = cohort_from_json(f.at("aneurysm"));
  }
  if (j.contains("branching")) {
    const Json& b = j.at("branching");
    report::detail::reject_unknown_keys(b, {"slices"}, "branching");
    cfg.branching_slices = b.at("slices").get<std::vector<std::size_t>>();
  }
  if (j.contains("thrombus")) {
    const Json& t = j.at("thrombus");
    report::detail::reject_unknown_keys(t, {"slice", "rows"}, "thrombus");
    cfg.thrombus_slice = t.at("slice").get<std::size_t>();
    cfg.thrombus_rows = t.at("rows").get<std::vector<std::size_t>>();
  }
}

/// Command-line values, present only when the flag was given.
struct Overrides {
  std::optional<std::string> volume, mask, out, config, truth;
  std::optional<double> delta_y, blood_baseline, calc_threshold, w_th, w_pix;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> jobs;
};

inline void add_common(CLI::App& sub, Overrides& o) {
  sub.add_option("--config", o.config, "JSON run configuration; flags override its fields");
  sub.add_option("--out", o.out, "output directory");
  sub.add_option("--jobs", o.jobs, "worker threads (fallback: CAIDC_JOBS, then 1)");
  sub.add_option("--seed", o.seed, "random seed");
}

inline void add_volume_inputs(CLI::App& sub, Overrides& o) {
  sub.add_option("--volume", o.volume, "input NIfTI-1 volume (.nii or .nii.gz)");
  sub.add_option("--mask", o.mask, "lumen (S-region) mask, same geometry as the volume");
  sub.add_option("--delta-y", o.delta_y, "relative accuracy defining the transition zone (default 0.002)");
  sub.add_option("--calc-threshold", o.calc_threshold, "calcinate threshold in HU (default 600)");
  sub.add_option("--w-th", o.w_th, "wall thickness in mm for the P-region radius (default 2)");
  sub.add_option("--w-pix", o.w_pix, "pixel density in px/mm (default 1 / in-plane spacing)");
}

inline RunConfig resolve(const Overrides& o) {
  RunConfig cfg;
  if (o.config) apply_config(cfg, report::read_json(*o.config));
  if (o.volume) cfg.volume = *o.volume;
  if (o.mask) cfg.mask = *o.mask;
  if (o.out) cfg.out = *o.out;
  if (o.truth) cfg.truth = *o.truth;
  if (o.delta_y) cfg.delta_y = *o.delta_y;
  if (o.blood_baseline) cfg.blood_baseline = *o.blood_baseline;
  if (o.calc_threshold) cfg.calc_threshold = *o.calc_threshold;
  if (o.w_th) cfg.w_th = *o.w_th;
  if (o.w_pix) cfg.w_pix = *o.w_pix;
  if (o.seed) cfg.seed = *o.seed;
  if (o.jobs) cfg.jobs = *o.jobs;
  cfg.check();
  return cfg;
}

inline void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required (flag or config file)");
}

inline fs::path prepare_out(const RunConfig& cfg) {
  require(cfg.out, "--out");
  std::error_code ec;
  fs::create_directories(cfg.out, ec);
  if (ec) throw Error(ErrorCode::io_failure, "cannot create " + cfg.out + ": " + ec.message());
  return cfg.out;
}

inline void log(const std::string& msg) { std::cerr << "caidc: " << msg << '\n'; }

inline void log_notes(const std::vector<SliceResult>& results) {
  for (const auto& r : results)
    if (!r.note.empty()) log("slice " + std::to_string(r.slice_index) + ": " + r.note);
}

// ---------------------------------------------------------------------------

inline int run_fit(const RunConfig& cfg) {
  require(cfg.volume, "--volume");
  require(cfg.mask, "--mask");
  const fs::path out = prepare_out(cfg);
  const nifti::Volume volume = nifti::read_volume(cfg.volume);
  const nifti::Volume mask = nifti::read_volume(cfg.mask);
  const VolumeOptions options = cfg.volume_options();
  const auto results = process_volume(volume, mask, options);
  log_notes(results);
  report::write_slice_diagnostics(results, out / "slice_diagnostics.csv");
  report::write_line_fits(results, out / "line_fits.csv");
  report::write_metrics_long(results, options.slice.accuracy, out / "metrics.csv");
  nifti::Volume field = nifti::like(volume, nifti::Datatype::float32);
  for (const auto& r : results) field.set_slice(static_cast<std::size_t>(r.slice_index), r.field.values);
  nifti::write_volume(field, out / "caidc.nii", nifti::Datatype::float32);
  if (!cfg.truth.empty()) {
    const std::size_t n = report::write_truth_vs_fit(results, report::read_csv(cfg.truth), out / "truth_vs_fit.csv");
    log("compared " + std::to_string(n) + " fitted rows with ground truth");
  }
  log("fitted " + std::to_string(results.size()) + " slices into " + out.string());
  return kExitOk;
}

inline int run_eliminate(const RunConfig& cfg) {
  require(cfg.volume, "--volume");
  require(cfg.mask, "--mask");
  const fs::path out = prepare_out(cfg);
  const nifti::Volume volume = nifti::read_volume(cfg.volume);
  const nifti::Volume mask = nifti::read_volume(cfg.mask);
  const VolumeOptions options = cfg.volume_options();
  const auto results = process_volume(volume, mask, options);
  log_notes(results);
  const Elimination elim = eliminate_volume(volume, results, cfg.blood_baseline);
  for (int z : elim.skipped_slices) log("slice " + std::to_string(z) + ": lumen not covered by fits, left unchanged");
  const auto written = nifti::write_volume(elim.volume, out / "eliminated.nii", nifti::Datatype::float32);
  if (written.lossy()) log(std::to_string(written.saturated) + " voxels saturated on output");
  report::write_slice_diagnostics(results, out / "slice_diagnostics.csv");
  return kExitOk;
}

namespace detail {

inline std::vector<hemo::LineMetrics> central_cohort(const RunConfig& cfg, const CohortSource& src,
                                                     const nifti::Volume& run_volume, const nifti::Volume& run_mask,
                                                     std::size_t& flagged) {
  std::optional<nifti::Volume> own_volume, own_mask;
  if (!src.volume.empty()) own_volume = nifti::read_volume(src.volume);
  if (!src.mask.empty()) own_mask = nifti::read_volume(src.mask);
  const nifti::Volume& volume = own_volume ? *own_volume : run_volume;
  const nifti::Volume& mask = own_mask ? *own_mask : run_mask;
  const VolumeOptions options = cfg.volume_options();
  const auto results = process_volume(volume, mask, options, src.slices);
  std::vector<hemo::LineMetrics> out;
  for (const auto& r : results) {
    if (r.empty()) continue;
    const hemo::CentralLines cl = hemo::central_line_metrics(r.processed, r.field, options.slice.accuracy);
    for (const auto& f : cl.flags) log("slice " + std::to_string(r.slice_index) + ": " + f);
    flagged += cl.flags.size();
    if (cl.row) out.push_back(*cl.row);
    if (cl.column) out.push_back(*cl.column);
  }
  return out;
}

/// Row metrics of the fitted span on each listed row that crosses the lumen.
inline std::vector<hemo::LineMetrics> clot_rows(const SliceResult& r, const std::vector<std::size_t>& rows,
                                                const AccuracyPolicy& policy) {
  std::vector<hemo::LineMetrics> out;
  for (std::size_t row : rows) {
    if (row >= r.field.fits.rows.size()) throw Error(ErrorCode::invalid_argument, "thrombus row out of range");
    for (const auto& lf : r.field.fits.rows[row]) {
      if (!lf.fit || !lf.zones) continue;
      bool crosses = false;
      for (std::size_t c = lf.start; c <= lf.end; ++c) crosses = crosses || r.processed.s_mask(row, c);
      if (!crosses) continue;
      out.push_back(hemo::line_metrics(lf.fit->coefficients, policy, r.processed.spacing.col_mm, r.slice_index,
                                       Axis::row, row));
      break;
    }
  }
  return out;
}

}  // namespace detail

inline int run_analyze(const RunConfig& cfg) {
  const bool any = cfg.flow_normal || cfg.branching_slices || cfg.thrombus_slice;
  if (!any) throw UsageError("analyze needs a config with \"flow\", \"branching\" or \"thrombus\" sections");
  const fs::path out = prepare_out(cfg);
  nifti::Volume volume, mask;
  const bool needs_run_volume = cfg.branching_slices || cfg.thrombus_slice ||
                                (cfg.flow_normal && (cfg.flow_normal->volume.empty() || cfg.flow_aneurysm->volume.empty()));
  if (needs_run_volume) {
    require(cfg.volume, "--volume");
    require(cfg.mask, "--mask");
    volume = nifti::read_volume(cfg.volume);
    mask = nifti::read_volume(cfg.mask);
  }
  const VolumeOptions options = cfg.volume_options();
  Json reports = Json::array();

  if (cfg.flow_normal) {
    std::size_t flagged = 0;
    const auto normal = detail::central_cohort(cfg, *cfg.flow_normal, volume, mask, flagged);
    const auto aneurysm = detail::central_cohort(cfg, *cfg.flow_aneurysm, volume, mask, flagged);
    hemo::FlowReport flow = hemo::flow_profile_compare(normal, aneurysm);
    for (auto& c : flow.reports)
      if (c.metric.rfind("ratio", 0) == 0) c.excluded_lines += flagged;
    if (flow.slope_pooling_caveat) log("flow: per-edge slope differences vanish when edges are pooled");
    reports.push_back(report::to_json(flow));
  }
  if (cfg.branching_slices) {
    const auto results = process_volume(volume, mask, options, *cfg.branching_slices);
    log_notes(results);
    std::vector<hemo::BranchSlice> slices;
    for (const auto& r : results) slices.push_back({&r.processed, &r.field});
    reports.push_back(report::to_json(hemo::branching_analysis(slices)));
  }
  if (cfg.thrombus_slice) {
    const auto results = process_volume(volume, mask, options, {*cfg.thrombus_slice});
    log_notes(results);
    const auto rows = detail::clot_rows(results.front(), cfg.thrombus_rows, options.slice.accuracy);
    reports.push_back(report::to_json(hemo::thrombus_edge_compare(rows)));
  }
  report::write_json(Json{{"reports", reports}}, out / "report.json");
  log("wrote " + (out / "report.json").string());
  return kExitOk;
}

inline int run_phantom(const std::optional<std::string>& scenario_path, const Overrides& o) {
  require(o.out.value_or(""), "--out");
  phantom::Scenario scenario;
  if (scenario_path) scenario = report::scenario_from_json(report::read_json(*scenario_path));
  if (o.seed) scenario.seed = *o.seed;
  if (o.w_th) scenario.w_th_mm = *o.w_th;
  RunConfig dirs;
  dirs.out = *o.out;
  const fs::path out = prepare_out(dirs);
  const phantom::PhantomVolume pv = phantom::generate_volume(scenario);
  nifti::write_volume(pv.volume, out / "vol.nii", nifti::Datatype::float32);
  nifti::write_volume(pv.s_mask, out / "mask.nii", nifti::Datatype::uint8);
  nifti::write_volume(pv.truth, out / "truth.nii", nifti::Datatype::float32);
  report::write_truth_lines(pv, out / "truth_lines.csv");
  report::write_json(report::to_json(scenario), out / "scenario.json");
  log("wrote " + std::to_string(scenario.n_slices) + "-slice " + std::string(to_string(scenario.kind)) +
      " phantom to " + out.string());
  return kExitOk;
}

struct StatsArgs {
  std::string test;
  std::string csv;
  std::vector<std::string> columns;
};

inline int run_stats(const StatsArgs& args, const Overrides& o) {
  require(o.out.value_or(""), "--out");
  RunConfig dirs;
  dirs.out = *o.out;
  const report::Table table = report::read_csv(args.csv);
  std::vector<std::vector<double>> groups;
  for (const auto& c : args.columns) groups.push_back(table.numbers(c));
  Json result{{"test", args.test}, {"columns", args.columns}};
  auto need = [&](std::size_t k, bool exact) {
    if (exact ? groups.size() != k : groups.size() < k)
      throw UsageError(args.test + " needs " + (exact ? "exactly " : "at least ") + std::to_string(k) + " columns");
  };
  if (args.test == "mann-whitney") {
    need(2, true);
    result["result"] = report::to_json(stats::mann_whitney_u(groups[0], groups[1]));
  } else if (args.test == "signed-rank") {
    need(2, true);
    result["result"] = report::to_json(stats::wilcoxon_signed_rank(groups[0], groups[1]));
  } else if (args.test == "kruskal-wallis") {
    need(2, false);
    result["result"] = report::to_json(stats::kruskal_wallis(groups, o.seed.value_or(stats::kPermutationSeed)));
    result["dunn"] = report::to_json(stats::dunn_posthoc(groups), args.columns);
  } else {
    throw UsageError("unknown test \"" + args.test + "\"");
  }
  const fs::path out = prepare_out(dirs);
  report::write_json(result, out / "stats.json");
  return kExitOk;
}

// ---------------------------------------------------------------------------

inline constexpr const char* kPrecedenceNote =
    "Settings resolve as: command-line flags, then the --config JSON file, then built-in defaults.\n"
    "Config keys: volume, mask, out, truth, delta_y, blood_baseline, calc_threshold, w_th, w_pix,\n"
    "max_iterations, cost_tolerance, step_tolerance, seed, jobs, flow {normal, aneurysm: {volume, mask,\n"
    "slices}}, branching {slices}, thrombus {slice, rows}.\n"
    "Exit codes: 0 success, 1 usage error, 2 data error.";

inline int dispatch(int argc, const char* const* argv) {
  CLI::App app{"Edged-plateau modelling of contrast in CT vessel cross-sections"};
  app.footer(kPrecedenceNote);
  app.require_subcommand(1);

  Overrides fit_o, elim_o, analyze_o, phantom_o, stats_o;
  std::optional<std::string> scenario_path;
  StatsArgs stats_args;

  CLI::App* fit = app.add_subcommand("fit", "fit CAiDC fields for every slice; write diagnostics and coefficients");
  add_common(*fit, fit_o);
  add_volume_inputs(*fit, fit_o);
  fit->add_option("--truth", fit_o.truth, "truth_lines.csv from `phantom`; adds truth_vs_fit.csv");

  CLI::App* elim = app.add_subcommand("eliminate", "write a synthetic non-contrast volume");
  add_common(*elim, elim_o);
  add_volume_inputs(*elim, elim_o);
  elim->add_option("--blood-baseline", elim_o.blood_baseline, "non-contrast blood level in HU (default 40)");

  CLI::App* analyze = app.add_subcommand("analyze", "flow-profile, branching and thrombus reports (config driven)");
  add_common(*analyze, analyze_o);
  add_volume_inputs(*analyze, analyze_o);

  CLI::App* phan = app.add_subcommand("phantom", "generate a seeded phantom volume, mask and ground truth");
  add_common(*phan, phantom_o);
  phan->add_option("--scenario", scenario_path, "scenario JSON (missing fields keep defaults)");
  phan->add_option("--w-th", phantom_o.w_th, "wall thickness in mm for the P-region radius");

  CLI::App* st = app.add_subcommand("stats", "run a rank test on CSV columns");
  add_common(*st, stats_o);
  st->add_option("--test", stats_args.test, "mann-whitney | signed-rank | kruskal-wallis")->required();
  st->add_option("--csv", stats_args.csv, "input table with a header row")->required();
  st->add_option("--columns", stats_args.columns, "column names, one per sample")->required()->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      std::cout << app.help();
      for (CLI::App* sub : app.get_subcommands()) std::cout << sub->help();
      return kExitOk;
    }
    std::cerr << "caidc: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (fit->parsed()) return run_fit(resolve(fit_o));
    if (elim->parsed()) return run_eliminate(resolve(elim_o));
    if (analyze->parsed()) return run_analyze(resolve(analyze_o));
    if (phan->parsed()) return run_phantom(scenario_path, phantom_o);
    if (st->parsed()) return run_stats(stats_args, stats_o);
  } catch (const UsageError& e) {
    std::cerr << "caidc: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "caidc: " << e.what() << '\n';
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "caidc: bad configuration: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "caidc: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace caidc::cli
