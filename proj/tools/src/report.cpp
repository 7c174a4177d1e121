#include "fsc/cli/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "fsc/error.hpp"
#include "fsc/training.hpp"

namespace fsc::cli {

using Json = nlohmann::ordered_json;

std::string preset_id(double fraction) {
  for (std::size_t i = 0; i < std::size(kPresetFractions); ++i) {
    if (std::abs(fraction - kPresetFractions[i]) < 1e-12) return "T" + std::to_string(i);
  }
  return "custom";
}

Json report_json(const RunReport& r, bool include_clock) {
  Json j;
  j["run_id"] = r.run_id;
  j["fraction"] = r.fraction;
  j["variant"] = r.variant;
  j["seed"] = r.seed;
  j["P"] = r.metrics.precision;
  j["R"] = r.metrics.recall;
  j["F1"] = r.metrics.f1;
  j["PR-AUC"] = r.metrics.pr_auc;
  j["counts"] = {{"tp", r.metrics.counts.tp},
                 {"fp", r.metrics.counts.fp},
                 {"fn", r.metrics.counts.fn},
                 {"tn", r.metrics.counts.tn}};
  j["degenerate"] = r.metrics.degenerate;
  if (include_clock) j["wall_clock_seconds"] = r.wall_clock_seconds;
  j["config"] = r.config;
  return j;
}

std::string report_text(const RunReport& r, bool include_clock) {
  return report_json(r, include_clock).dump(2) + "\n";
}

RunReport report_from_json(std::string_view text, const std::string& source) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(source + ": not valid JSON: " + e.what());
  }
  try {
    RunReport r;
    r.run_id = j.at("run_id").get<std::string>();
    r.fraction = j.at("fraction").get<double>();
    r.variant = j.at("variant").get<std::string>();
    if (r.variant != "bayesian" && r.variant != "deterministic" && r.variant != "zero_shot") {
      throw ParseError(source + ": unknown variant '" + r.variant + "'");
    }
    r.seed = j.at("seed").get<std::uint64_t>();
    r.metrics.precision = j.at("P").get<double>();
    r.metrics.recall = j.at("R").get<double>();
    r.metrics.f1 = j.at("F1").get<double>();
    r.metrics.pr_auc = j.at("PR-AUC").get<double>();
    const auto& counts = j.at("counts");
    r.metrics.counts = {counts.at("tp").get<std::size_t>(), counts.at("fp").get<std::size_t>(),
                        counts.at("fn").get<std::size_t>(), counts.at("tn").get<std::size_t>()};
    r.metrics.degenerate = j.value("degenerate", std::vector<std::string>{});
    r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
    r.config = j.value("config", Json::object());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source + ": malformed report: " + e.what());
  }
}

void save_report(const std::filesystem::path& path, const RunReport& report) {
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open report for writing: " + path.string());
  file << report_text(report);
  if (!file) throw IoError("failed writing report: " + path.string());
}

RunReport load_report(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open report: " + path.string());
  const std::string text(std::istreambuf_iterator<char>(file), {});
  return report_from_json(text, path.string());
}

std::vector<RunReport> sorted_reports(std::vector<RunReport> reports) {
  std::stable_sort(reports.begin(), reports.end(), [](const RunReport& a, const RunReport& b) {
    if (a.fraction != b.fraction) return a.fraction < b.fraction;
    if (a.variant != b.variant) return a.variant < b.variant;
    if (a.seed != b.seed) return a.seed < b.seed;
    return a.run_id < b.run_id;
  });
  return reports;
}

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<std::vector<std::string>> rows_of(std::span<const RunReport> reports, int digits) {
  std::vector<std::vector<std::string>> rows;
  rows.push_back({"Number", "P", "R", "F1", "PR-AUC", "Fraction", "Variant", "Seed"});
  for (const auto& r : reports) {
    rows.push_back({r.run_id, fixed(r.metrics.precision, digits), fixed(r.metrics.recall, digits),
                    fixed(r.metrics.f1, digits), fixed(r.metrics.pr_auc, digits),
                    fixed(r.fraction, 4), r.variant, std::to_string(r.seed)});
  }
  return rows;
}

}  // namespace

std::string format_table(std::span<const RunReport> reports) {
  const auto rows = rows_of(reports, 4);
  std::vector<std::size_t> width(rows.front().size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) out << "  ";
      out << row[c];
      if (c + 1 < row.size()) out << std::string(width[c] - row[c].size(), ' ');
    }
    out << '\n';
  }
  return out.str();
}

std::string format_csv(std::span<const RunReport> reports) {
  std::ostringstream out;
  for (const auto& row : rows_of(reports, 6)) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c > 0) out << ',';
      // Run ids are free text; quote anything a CSV reader would split on.
      const auto& cell = row[c];
      if (cell.find_first_of(",\"\n") != std::string::npos) {
        out << '"';
        for (char ch : cell) {
          if (ch == '"') out << '"';
          out << ch;
        }
        out << '"';
      } else {
        out << cell;
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace fsc::cli
