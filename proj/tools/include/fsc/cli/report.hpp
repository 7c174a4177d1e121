#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "fsc/metrics.hpp"

namespace fsc::cli {

/// One evaluated run: a row of the results table plus provenance.
struct RunReport {
  std::string run_id;
  double fraction = 0.0;
  std::string variant;  // bayesian | deterministic | zero_shot
  std::uint64_t seed = 0;
  MetricsReport metrics;
  double wall_clock_seconds = 0.0;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
};

/// "T0".."T5" for the preset fractions, "custom" otherwise.
std::string preset_id(double fraction);

/// JSON document with the metric columns named P, R, F1 and PR-AUC.
/// include_clock=false drops wall_clock_seconds, the one field that varies
/// between otherwise identical runs.
nlohmann::ordered_json report_json(const RunReport& report, bool include_clock = true);
std::string report_text(const RunReport& report, bool include_clock = true);

/// Throws ParseError naming the source on a malformed document.
RunReport report_from_json(std::string_view text, const std::string& source);

void save_report(const std::filesystem::path& path, const RunReport& report);
RunReport load_report(const std::filesystem::path& path);

/// Sorted by fraction, then variant, then seed, then run id.
std::vector<RunReport> sorted_reports(std::vector<RunReport> reports);

/// Columns: Number P R F1 PR-AUC Fraction Variant Seed.
std::string format_table(std::span<const RunReport> reports);
std::string format_csv(std::span<const RunReport> reports);

}  // namespace fsc::cli
