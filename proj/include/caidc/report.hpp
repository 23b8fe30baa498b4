#pragma once

// JSON and CSV output: scenario and run configuration files, cohort reports,
// per-slice diagnostics, per-line fits, truth-vs-fit errors and a long-format
// metrics table. Also a minimal CSV reader so every written table can be
// loaded back.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "caidc/error.hpp"
#include "caidc/hemodynamics.hpp"
#include "caidc/phantom.hpp"
#include "caidc/pipeline.hpp"
#include "caidc/slice_engine.hpp"
#include "caidc/stats.hpp"

namespace caidc::report {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// number formatting

/// Shortest decimal that reads back to the same double; "nan" for NaN.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int precision = 6; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline Json number(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

// ---------------------------------------------------------------------------
// Scenario

namespace detail {

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<E> values) {
  for (E v : values)
    if (to_string(v) == s) return v;
  throw Error(ErrorCode::invalid_argument, "unknown value \"" + s + "\"");
}

template <typename T>
void read_field(const Json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

inline void reject_unknown_keys(const Json& j, std::initializer_list<const char*> known, const char* what) {
  if (!j.is_object()) throw Error(ErrorCode::invalid_argument, std::string(what) + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw Error(ErrorCode::invalid_argument, std::string("unknown ") + what + " key \"" + it.key() + "\"");
  }
}

}  // namespace detail

inline Json to_json(const phantom::Scenario& s) {
  return Json{{"kind", to_string(s.kind)},
              {"shape", to_string(s.shape)},
              {"lumen_diameter_mm", s.lumen_diameter_mm},
              {"amplitude_hu", s.amplitude_hu},
              {"rise_rate", s.rise_rate},
              {"fall_rate", s.fall_rate},
              {"background_hu", s.background_hu},
              {"background_sigma", s.background_sigma},
              {"noise_sigma", s.noise_sigma},
              {"seed", s.seed},
              {"rows", s.rows},
              {"cols", s.cols},
              {"n_slices", s.n_slices},
              {"spacing_mm", s.spacing_mm},
              {"slice_thickness_mm", s.slice_thickness_mm},
              {"w_th_mm", s.w_th_mm},
              {"diameter_drift_mm", s.diameter_drift_mm},
              {"clot_rows", s.clot_rows},
              {"clot_edge_factor", s.clot_edge_factor},
              {"clot_amplitude_factor", s.clot_amplitude_factor},
              {"lobe_diameter_mm", s.lobe_diameter_mm},
              {"branch_amplitude_factor", s.branch_amplitude_factor},
              {"branch_first_slice", s.branch_first_slice},
              {"branch_last_slice", s.branch_last_slice}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline phantom::Scenario scenario_from_json(const Json& j) {
  using phantom::LumenShape;
  using phantom::ScenarioKind;
  detail::reject_unknown_keys(
      j,
      {"kind", "shape", "lumen_diameter_mm", "amplitude_hu", "rise_rate", "fall_rate", "background_hu",
       "background_sigma", "noise_sigma", "seed", "rows", "cols", "n_slices", "spacing_mm",
       "slice_thickness_mm", "w_th_mm", "diameter_drift_mm", "clot_rows", "clot_edge_factor",
       "clot_amplitude_factor", "lobe_diameter_mm", "branch_amplitude_factor", "branch_first_slice",
       "branch_last_slice"},
      "scenario");
  phantom::Scenario s;
  if (j.contains("kind"))
    s.kind = detail::parse_enum(j.at("kind").get<std::string>(),
                                {ScenarioKind::norm, ScenarioKind::aneurysm, ScenarioKind::thrombus,
                                 ScenarioKind::branching});
  if (j.contains("shape"))
    s.shape = detail::parse_enum(j.at("shape").get<std::string>(), {LumenShape::disk, LumenShape::separable});
  detail::read_field(j, "lumen_diameter_mm", s.lumen_diameter_mm);
  detail::read_field(j, "amplitude_hu", s.amplitude_hu);
  detail::read_field(j, "rise_rate", s.rise_rate);
  detail::read_field(j, "fall_rate", s.fall_rate);
  detail::read_field(j, "background_hu", s.background_hu);
  detail::read_field(j, "background_sigma", s.background_sigma);
  detail::read_field(j, "noise_sigma", s.noise_sigma);
  detail::read_field(j, "seed", s.seed);
  detail::read_field(j, "rows", s.rows);
  detail::read_field(j, "cols", s.cols);
  detail::read_field(j, "n_slices", s.n_slices);
  detail::read_field(j, "spacing_mm", s.spacing_mm);
  detail::read_field(j, "slice_thickness_mm", s.slice_thickness_mm);
  detail::read_field(j, "w_th_mm", s.w_th_mm);
  detail::read_field(j, "diameter_drift_mm", s.diameter_drift_mm);
  detail::read_field(j, "clot_rows", s.clot_rows);
  detail::read_field(j, "clot_edge_factor", s.clot_edge_factor);
  detail::read_field(j, "clot_amplitude_factor", s.clot_amplitude_factor);
  detail::read_field(j, "lobe_diameter_mm", s.lobe_diameter_mm);
  detail::read_field(j, "branch_amplitude_factor", s.branch_amplitude_factor);
  detail::read_field(j, "branch_first_slice", s.branch_first_slice);
  detail::read_field(j, "branch_last_slice", s.branch_last_slice);
  return s;
}

// ---------------------------------------------------------------------------
// Statistics

inline Json to_json(const stats::TestResult& r) {
  Json j{{"statistic", number(r.statistic)},
         {"p_value", number(r.p_value)},
         {"method", to_string(r.method)},
         {"n", r.n},
         {"tie_correction_applied", r.tie_correction_applied}};
  if (r.p_asymptotic) j["p_asymptotic"] = number(*r.p_asymptotic);
  return j;
}

inline Json to_json(const std::vector<stats::DunnComparison>& dunn, const std::vector<std::string>& labels) {
  Json out = Json::array();
  for (const auto& d : dunn)
    out.push_back({{"first", labels.at(d.first)},
                   {"second", labels.at(d.second)},
                   {"z", number(d.z)},
                   {"p_value", number(d.p_value)},
                   {"p_adjusted", number(d.p_adjusted)}});
  return out;
}

/// Cohort schema: metric, groups, n (per group), test, statistic, p_value,
/// method, direction, excluded_lines.
inline Json to_json(const hemo::CohortReport& r) {
  Json n = Json::array();
  for (const auto& s : r.samples) n.push_back(s.size());
  return Json{{"metric", r.metric},
              {"groups", r.groups},
              {"n", n},
              {"test", r.test},
              {"statistic", number(r.result.statistic)},
              {"p_value", number(r.result.p_value)},
              {"method", to_string(r.result.method)},
              {"direction", r.direction},
              {"excluded_lines", r.excluded_lines}};
}

inline const std::vector<const char*>& cohort_schema_keys() {
  static const std::vector<const char*> keys = {"metric", "groups", "n", "test", "statistic",
                                                "p_value", "method", "direction", "excluded_lines"};
  return keys;
}

/// Problems with a cohort report object; empty when it conforms.
inline std::vector<std::string> validate_cohort_json(const Json& j) {
  std::vector<std::string> problems;
  if (!j.is_object()) return {"not an object"};
  for (const char* key : cohort_schema_keys())
    if (!j.contains(key)) problems.push_back(std::string("missing ") + key);
  if (!problems.empty()) return problems;
  if (!j["metric"].is_string()) problems.push_back("metric not a string");
  if (!j["groups"].is_array() || !j["n"].is_array() || j["groups"].size() != j["n"].size())
    problems.push_back("groups and n must be arrays of equal length");
  if (!(j["p_value"].is_number() || j["p_value"].is_null())) problems.push_back("p_value not a number");
  if (!j["direction"].is_string()) problems.push_back("direction not a string");
  if (!j["excluded_lines"].is_number_unsigned()) problems.push_back("excluded_lines not a count");
  return problems;
}

inline Json to_json(const hemo::FlowReport& r) {
  Json cohorts = Json::array();
  for (const auto& c : r.reports) cohorts.push_back(to_json(c));
  return Json{{"analysis", "flow_profile"}, {"cohorts", cohorts}, {"slope_pooling_caveat", r.slope_pooling_caveat}};
}

inline Json to_json(const hemo::BranchingReport& r) {
  return Json{{"analysis", "branching"},
              {"cohorts", Json::array({to_json(r.kruskal)})},
              {"dunn", to_json(r.dunn, r.kruskal.groups)},
              {"branch_slices", r.branch_slices}};
}

inline Json to_json(const hemo::ThrombusReport& r) {
  return Json{{"analysis", "thrombus"},
              {"cohorts", Json::array({to_json(r.width), to_json(r.slope)})},
              {"rising_wider", r.rising_wider},
              {"rising_shallower", r.rising_shallower}};
}

// ---------------------------------------------------------------------------
// CSV

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header) : path_(path), out_(path) {
    if (!out_) throw Error(ErrorCode::io_failure, "cannot create " + path.string());
    row(header);
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << '\n';
  }

  void close() {
    out_.close();
    if (!out_) throw Error(ErrorCode::io_failure, "write failed for " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw Error(ErrorCode::invalid_argument, "no column \"" + name + "\"");
  }

  /// Numeric column; empty cells are skipped, anything unparsable throws.
  std::vector<double> numbers(const std::string& name) const {
    const std::size_t c = column(name);
    std::vector<double> out;
    for (const auto& r : rows) {
      if (c >= r.size() || r[c].empty()) continue;
      char* end = nullptr;
      const double v = std::strtod(r[c].c_str(), &end);
      if (end == r[c].c_str() || *end != '\0')
        throw Error(ErrorCode::invalid_argument, "non-numeric cell \"" + r[c] + "\" in column " + name);
      out.push_back(v);
    }
    return out;
  }
};

/// Comma-separated, no quoting (the tables written here never need it).
inline Table read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path.string());
  auto split = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
  };
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::invalid_argument, "empty CSV " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  t.header = split(line);
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    t.rows.push_back(split(line));
    if (t.rows.back().size() != t.header.size())
      throw Error(ErrorCode::invalid_argument, "ragged CSV row in " + path.string());
  }
  return t;
}

inline const std::vector<std::string>& slice_diagnostics_header() {
  static const std::vector<std::string> h = {"slice_index", "p_value",            "rmse_hu",
                                             "n_pixels",    "direction_override", "calcinates_replaced"};
  return h;
}

inline void write_slice_diagnostics(const std::vector<SliceResult>& results, const std::filesystem::path& path) {
  CsvWriter csv(path, slice_diagnostics_header());
  for (const auto& r : results)
    csv.row({std::to_string(r.slice_index), fmt(r.fit_quality.p_value), fmt(r.fit_quality.rmse),
             std::to_string(r.fit_quality.n_pixels), r.directions && r.directions->overridden ? "1" : "0",
             std::to_string(r.calcinates_replaced)});
  csv.close();
}

/// One row per fitted span: slice, axis, line, span, coefficients, fit quality.
inline void write_line_fits(const std::vector<SliceResult>& results, const std::filesystem::path& path) {
  CsvWriter csv(path, {"slice_index", "axis", "line", "start", "end", "F0", "a", "b", "c", "d", "e", "rmse_hu",
                       "iterations", "converged", "termination", "skipped"});
  for (const auto& r : results) {
    for (const auto* lines : {&r.field.fits.rows, &r.field.fits.columns})
      for (const auto& per_line : *lines)
        for (const auto& lf : per_line) {
          std::vector<std::string> cells = {std::to_string(r.slice_index), std::string(to_string(lf.axis)),
                                            std::to_string(lf.line), std::to_string(lf.start),
                                            std::to_string(lf.end)};
          if (lf.fit) {
            for (double v : lf.fit->coefficients.to_array()) cells.push_back(fmt(v));
            cells.push_back(fmt(lf.fit->rmse));
            cells.push_back(std::to_string(lf.fit->iterations));
            cells.push_back(lf.fit->converged ? "1" : "0");
            cells.push_back(std::string(to_string(lf.fit->termination)));
            cells.push_back("");
          } else {
            for (int k = 0; k < 10; ++k) cells.push_back("");
            std::string why = lf.skipped;
            for (char& ch : why)
              if (ch == ',') ch = ';';
            cells.push_back(why);
          }
          csv.row(cells);
        }
  }
  csv.close();
}

/// Ground-truth row coefficients of a phantom volume.
inline void write_truth_lines(const phantom::PhantomVolume& pv, const std::filesystem::path& path) {
  CsvWriter csv(path, {"slice_index", "row", "F0", "a", "b", "c", "d", "e"});
  for (const auto& ps : pv.slices)
    for (std::size_t r = 0; r < ps.row_truth.size(); ++r) {
      if (ps.row_truth[r].amplitude == 0.0) continue;
      std::vector<std::string> cells = {std::to_string(ps.slice.slice_index), std::to_string(r)};
      for (double v : ps.row_truth[r].to_array()) cells.push_back(fmt(v));
      csv.row(cells);
    }
  csv.close();
}

/// Per-row relative coefficient errors of the fits against a truth table.
inline std::size_t write_truth_vs_fit(const std::vector<SliceResult>& results, const Table& truth,
                                      const std::filesystem::path& path) {
  std::map<std::pair<int, std::size_t>, ModelCoefficients> lookup;
  const std::size_t cs = truth.column("slice_index");
  const std::size_t cr = truth.column("row");
  const std::array<std::size_t, 6> cc = {truth.column("F0"), truth.column("a"), truth.column("b"),
                                         truth.column("c"),  truth.column("d"), truth.column("e")};
  for (const auto& row : truth.rows) {
    std::array<double, 6> p{};
    for (int k = 0; k < 6; ++k) p[k] = std::stod(row[cc[k]]);
    lookup[{std::stoi(row[cs]), static_cast<std::size_t>(std::stoul(row[cr]))}] = ModelCoefficients::from_array(p);
  }
  CsvWriter csv(path, {"slice_index", "row", "coefficient", "truth", "fitted", "relative_error"});
  std::size_t written = 0;
  for (const auto& r : results)
    for (std::size_t line = 0; line < r.field.fits.rows.size(); ++line) {
      auto it = lookup.find({r.slice_index, line});
      if (it == lookup.end()) continue;
      for (const auto& lf : r.field.fits.rows[line]) {
        if (!lf.fit) continue;
        const auto t = it->second.to_array();
        const auto f = lf.fit->coefficients.to_array();
        for (int k = 0; k < 6; ++k) {
          const double rel = t[k] != 0.0 ? std::abs(f[k] - t[k]) / std::abs(t[k]) : std::abs(f[k]);
          csv.row({std::to_string(r.slice_index), std::to_string(line), kCoefficientNames[k], fmt(t[k]), fmt(f[k]),
                   fmt(rel)});
        }
        ++written;
      }
    }
  csv.close();
  return written;
}

/// Long format (slice_index, metric, value) for external plotting.
inline void write_metrics_long(const std::vector<SliceResult>& results, const AccuracyPolicy& policy,
                               const std::filesystem::path& path) {
  CsvWriter csv(path, {"slice_index", "metric", "value"});
  for (const auto& r : results) {
    const std::string z = std::to_string(r.slice_index);
    csv.row({z, "p_value", fmt(r.fit_quality.p_value)});
    csv.row({z, "rmse_hu", fmt(r.fit_quality.rmse)});
    csv.row({z, "n_pixels", std::to_string(r.fit_quality.n_pixels)});
    csv.row({z, "calcinates_replaced", std::to_string(r.calcinates_replaced)});
    if (r.empty() || r.field.fits.rows.empty()) continue;
    const hemo::CentralLines cl = hemo::central_line_metrics(r.processed, r.field, policy);
    for (const auto& m : {cl.row, cl.column}) {
      if (!m) continue;
      const std::string p = std::string(to_string(m->axis)) + "_";
      csv.row({z, p + "dx_rising", fmt(m->rising.transition_width)});
      csv.row({z, p + "dx_falling", fmt(m->falling.transition_width)});
      csv.row({z, p + "plateau_width", fmt(m->plateau_width)});
      csv.row({z, p + "ratio_rising", fmt(*m->ratio_rising)});
      csv.row({z, p + "ratio_falling", fmt(*m->ratio_falling)});
      csv.row({z, p + "slope_rising", fmt(m->rising.slope)});
      csv.row({z, p + "slope_falling", fmt(m->falling.slope)});
      csv.row({z, p + "diameter_mm", fmt(m->estimated_diameter_mm)});
    }
  }
  csv.close();
}

inline void write_json(const Json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io_failure, "cannot create " + path.string());
  out << j.dump(2) << '\n';
  out.close();
  if (!out) throw Error(ErrorCode::io_failure, "write failed for " + path.string());
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io_failure, "cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_argument, path.string() + ": " + e.what());
  }
}

}  // namespace caidc::report
