#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace caidc {

enum class ErrorCode {
  invalid_argument,
  ill_formed_model,
  degenerate_profile,
  singular_normal_equations,
  length_mismatch,
  empty_sample,
  all_zero_differences,
  too_few_groups,
  empty_mask,
  all_calcinate,
  endpoint_collapse,
  insufficient_data,
  degenerate_plateau,
  non_positive_diameter,
  insufficient_slices,
  insufficient_rows,
  bad_magic,
  unsupported_datatype,
  truncated_data,
  dim_mismatch,
  io_failure,
  scenario_geometry_too_large,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::ill_formed_model: return "IllFormedModel";
    case ErrorCode::degenerate_profile: return "DegenerateProfile";
    case ErrorCode::singular_normal_equations: return "SingularNormalEquations";
    case ErrorCode::length_mismatch: return "LengthMismatch";
    case ErrorCode::empty_sample: return "EmptySample";
    case ErrorCode::all_zero_differences: return "AllZeroDifferences";
    case ErrorCode::too_few_groups: return "TooFewGroups";
    case ErrorCode::empty_mask: return "EmptyMask";
    case ErrorCode::all_calcinate: return "AllCalcinate";
    case ErrorCode::endpoint_collapse: return "EndpointCollapse";
    case ErrorCode::insufficient_data: return "InsufficientData";
    case ErrorCode::degenerate_plateau: return "DegeneratePlateau";
    case ErrorCode::non_positive_diameter: return "NonPositiveDiameter";
    case ErrorCode::insufficient_slices: return "InsufficientSlices";
    case ErrorCode::insufficient_rows: return "InsufficientRows";
    case ErrorCode::bad_magic: return "BadMagic";
    case ErrorCode::unsupported_datatype: return "UnsupportedDatatype";
    case ErrorCode::truncated_data: return "TruncatedData";
    case ErrorCode::dim_mismatch: return "DimMismatch";
    case ErrorCode::io_failure: return "IoFailure";
    case ErrorCode::scenario_geometry_too_large: return "ScenarioGeometryTooLargeForDims";
  }
  return "Unknown";
}

/// Library-wide exception. Every failure the library raises carries a code
/// so callers (the CLI in particular) can map it without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Collected constraint violations. Empty means valid.
struct ValidationReport {
  std::vector<std::string> violations;

  bool ok() const noexcept { return violations.empty(); }
  void add(std::string message) { violations.push_back(std::move(message)); }
};

}  // namespace caidc
