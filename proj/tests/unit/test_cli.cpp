#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fsc/cli/cli.hpp"
#include "fsc/cli/report.hpp"
#include "fsc/classifier.hpp"
#include "fsc/dataio.hpp"
#include "fsc/error.hpp"
#include "fsc/training.hpp"

namespace fsc::cli {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  std::ostringstream out;
  std::ostringstream err;
  Result r;
  r.code = run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Splits one CSV line, honouring double-quoted cells.
std::vector<std::string> csv_cells(const std::string& line) {
  std::vector<std::string> cells(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cells.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cells.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.emplace_back();
    } else {
      cells.back() += c;
    }
  }
  return cells;
}

// One small dataset and feature cache shared by the pipeline tests.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "fsc-cli-unit";
    fs::remove_all(root_);
    fs::create_directories(root_);
    data_ = root_ / "data";
    ASSERT_EQ(invoke({"gen-data", "--out", data_.string(), "--n", "40", "--seed", "3", "--size",
                      "64"})
                  .code,
              0);
    ASSERT_EQ(invoke({"embed", "--data", data_.string(), "--manifest", "train.csv", "--out",
                      (root_ / "train.fscf").string(), "--seed", "5"})
                  .code,
              0);
    ASSERT_EQ(invoke({"embed", "--data", data_.string(), "--manifest", "test.csv", "--out",
                      (root_ / "test.fscf").string(), "--seed", "5"})
                  .code,
              0);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::vector<std::string> train_args(const fs::path& out, const std::string& fraction) {
    return {"train", "--feats", (root_ / "train.fscf").string(), "--fraction", fraction,
            "--seed", "1", "--out", out.string(), "--epochs", "5"};
  }

  static inline fs::path root_;
  static inline fs::path data_;
};

TEST_F(Pipeline, GenDataWritesBalancedManifestAndSplit) {
  const auto m = read_manifest(data_ / "manifest.csv");
  ASSERT_EQ(m.records.size(), 40u);
  std::size_t cracks = 0;
  for (const auto& r : m.records) cracks += r.label == Label::crack ? 1 : 0;
  EXPECT_EQ(cracks, 20u);
  EXPECT_EQ(read_manifest(data_ / "train.csv").records.size(), 20u);
  EXPECT_EQ(read_manifest(data_ / "test.csv").records.size(), 20u);
  const auto meta = nlohmann::json::parse(slurp(data_ / "dataset.json"));
  EXPECT_EQ(meta.at("crack_count"), 20);
}

TEST_F(Pipeline, GenDataRefusesNonEmptyDirectoryUnlessForced) {
  const auto before = slurp(data_ / "manifest.csv");
  const auto refused =
      invoke({"gen-data", "--out", data_.string(), "--n", "40", "--seed", "3", "--size", "64"});
  EXPECT_EQ(refused.code, kExitUsage);
  EXPECT_NE(refused.err.find("--force"), std::string::npos);
  const auto forced = invoke({"gen-data", "--out", data_.string(), "--n", "40", "--seed", "3",
                              "--size", "64", "--force"});
  EXPECT_EQ(forced.code, kExitOk);
  EXPECT_EQ(slurp(data_ / "manifest.csv"), before);
}

TEST_F(Pipeline, EmbeddedCacheLoadsBack) {
  const auto cache = read_feature_cache(root_ / "train.fscf");
  EXPECT_EQ(cache.items.size(), 20u);
  EXPECT_EQ(cache.dim, 512u);
  EXPECT_EQ(cache.prompts.size(), 2u);
}

TEST_F(Pipeline, TrainFractionUsesTheRoundingRule) {
  const auto head = root_ / "quarter.json";
  const auto r = invoke(train_args(head, "0.25"));
  ASSERT_EQ(r.code, kExitOk) << r.err;
  EXPECT_NE(r.out.find("on 5 of 20 items"), std::string::npos) << r.out;
  const auto cp = load_head(head);
  EXPECT_EQ(cp.info.train_items, 5u);
  EXPECT_TRUE(fs::exists(root_ / "quarter.log.csv"));
  EXPECT_EQ(slurp(root_ / "quarter.log.csv").rfind("epoch,loss,nll,kl\n", 0), 0u);
}

TEST_F(Pipeline, TrainIsByteDeterministic) {
  ASSERT_EQ(invoke(train_args(root_ / "a.json", "0.5")).code, kExitOk);
  ASSERT_EQ(invoke(train_args(root_ / "b.json", "0.5")).code, kExitOk);
  EXPECT_EQ(slurp(root_ / "a.json"), slurp(root_ / "b.json"));
  EXPECT_EQ(slurp(root_ / "a.log.csv"), slurp(root_ / "b.log.csv"));
}

TEST_F(Pipeline, FractionZeroGivesGuidance) {
  const auto r = invoke(train_args(root_ / "zero.json", "0"));
  EXPECT_EQ(r.code, kExitGuidance);
  EXPECT_NE(r.err.find("zero-shot"), std::string::npos);
  EXPECT_FALSE(fs::exists(root_ / "zero.json"));
}

TEST_F(Pipeline, EvalAndZeroShotWriteReports) {
  const auto head = root_ / "full.json";
  ASSERT_EQ(invoke(train_args(head, "1.0")).code, kExitOk);
  const auto rep = root_ / "T5.json";
  const auto r = invoke({"eval", "--feats", (root_ / "test.fscf").string(), "--head",
                         head.string(), "--report", rep.string(), "--mc-samples", "4"});
  ASSERT_EQ(r.code, kExitOk) << r.err;
  const auto report = load_report(rep);
  EXPECT_EQ(report.run_id, "T5");
  EXPECT_EQ(report.variant, "bayesian");
  EXPECT_EQ(report.metrics.counts.total(), 20u);
  for (double v : {report.metrics.precision, report.metrics.recall, report.metrics.f1,
                   report.metrics.pr_auc}) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  const auto json = nlohmann::json::parse(slurp(rep));
  for (const char* key : {"P", "R", "F1", "PR-AUC", "run_id", "fraction", "variant", "seed",
                          "wall_clock_seconds", "config"}) {
    EXPECT_TRUE(json.contains(key)) << key;
  }
  EXPECT_EQ(json["config"]["dropout_rate"].dump(), "0.1");

  const auto zs = root_ / "T0.json";
  ASSERT_EQ(invoke({"zero-shot", "--feats", (root_ / "test.fscf").string(), "--report",
                    zs.string()})
                .code,
            kExitOk);
  const auto zero = load_report(zs);
  EXPECT_EQ(zero.run_id, "T0");
  EXPECT_EQ(zero.variant, "zero_shot");
  EXPECT_EQ(zero.fraction, 0.0);

  const auto table =
      invoke({"report", "--inputs", rep.string(), zs.string()});
  ASSERT_EQ(table.code, kExitOk);
  std::istringstream lines(table.out);
  std::string header;
  std::string first;
  std::getline(lines, header);
  std::getline(lines, first);
  EXPECT_EQ(header.rfind("Number", 0), 0u);
  EXPECT_LT(header.find("P "), header.find("F1"));
  EXPECT_LT(header.find("F1"), header.find("PR-AUC"));
  EXPECT_EQ(first.rfind("T0", 0), 0u);
}

TEST_F(Pipeline, EvalRejectsForeignFeatures) {
  const auto head = root_ / "foreign.json";
  ASSERT_EQ(invoke(train_args(head, "0.5")).code, kExitOk);
  ASSERT_EQ(invoke({"embed", "--data", data_.string(), "--manifest", "test.csv", "--out",
                    (root_ / "other.fscf").string(), "--seed", "6"})
                .code,
            kExitOk);
  const auto r = invoke({"eval", "--feats", (root_ / "other.fscf").string(), "--head",
                         head.string(), "--report", (root_ / "x.json").string()});
  EXPECT_EQ(r.code, kExitFailure);
  EXPECT_NE(r.err.find("encoder"), std::string::npos);
}

TEST_F(Pipeline, MissingAndCorruptInputsExitOne) {
  const auto missing = invoke({"eval", "--feats", (root_ / "test.fscf").string(), "--head",
                               (root_ / "nope.json").string(), "--report",
                               (root_ / "x.json").string()});
  EXPECT_EQ(missing.code, kExitFailure);
  EXPECT_NE(missing.err.find("nope.json"), std::string::npos);

  const auto bytes = slurp(root_ / "test.fscf");
  {
    std::ofstream out(root_ / "corrupt.fscf", std::ios::binary);
    out << bytes.substr(0, bytes.size() / 2);
  }
  const auto corrupt = invoke({"zero-shot", "--feats", (root_ / "corrupt.fscf").string(),
                               "--report", (root_ / "x.json").string()});
  EXPECT_EQ(corrupt.code, kExitFailure);

  const auto no_manifest = invoke({"embed", "--data", (root_ / "nowhere").string(), "--out",
                                   (root_ / "x.fscf").string()});
  EXPECT_EQ(no_manifest.code, kExitFailure);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(invoke({}).code, kExitUsage);
  EXPECT_EQ(invoke({"frobnicate"}).code, kExitUsage);
  EXPECT_EQ(invoke({"gen-data", "--out", "/tmp/fsc-never", "--crack-frac", "1.5"}).code,
            kExitUsage);
  EXPECT_EQ(invoke({"train", "--feats", "x", "--fraction", "2", "--out", "y"}).code, kExitUsage);
  EXPECT_EQ(invoke({"train", "--feats", "x", "--fraction", "0.5", "--out", "y", "--variant",
                    "frequentist"})
                .code,
            kExitUsage);
  EXPECT_EQ(invoke({"report"}).code, kExitUsage);
  EXPECT_EQ(invoke({"report", "--inputs"}).code, kExitUsage);
  EXPECT_FALSE(fs::exists("/tmp/fsc-never"));
}

TEST(Cli, HelpExitsZero) {
  const auto r = invoke({"--help"});
  EXPECT_EQ(r.code, kExitOk);
  EXPECT_NE(r.out.find("gen-data"), std::string::npos);
}

RunReport sample_report(const std::string& id, double fraction, const std::string& variant,
                        std::uint64_t seed, double f1) {
  RunReport r;
  r.run_id = id;
  r.fraction = fraction;
  r.variant = variant;
  r.seed = seed;
  r.metrics.precision = 0.5;
  r.metrics.recall = 0.25;
  r.metrics.f1 = f1;
  r.metrics.pr_auc = 0.75;
  r.metrics.counts = {1, 1, 3, 5};
  return r;
}

TEST(Report, PresetIds) {
  EXPECT_EQ(preset_id(0.0), "T0");
  EXPECT_EQ(preset_id(0.01), "T1");
  EXPECT_EQ(preset_id(0.10), "T3");
  EXPECT_EQ(preset_id(1.0), "T5");
  EXPECT_EQ(preset_id(0.3), "custom");
}

TEST(Report, JsonRoundTrip) {
  auto r = sample_report("T2", 0.05, "deterministic", 4, 0.3333333333333333);
  r.metrics.degenerate = {"precision"};
  r.wall_clock_seconds = 1.25;
  r.config["mc_samples"] = 16;
  const auto back = report_from_json(report_text(r), "mem");
  EXPECT_EQ(report_text(back), report_text(r));
  EXPECT_EQ(report_text(r, false).find("wall_clock"), std::string::npos);
}

TEST(Report, MalformedReportNamesTheSource) {
  try {
    report_from_json("{\"run_id\": 3}", "bad.json");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.json"), std::string::npos);
  }
  EXPECT_THROW(report_from_json("not json", "x"), ParseError);
  auto text = report_text(sample_report("T1", 0.01, "bayesian", 1, 0.5));
  text.replace(text.find("bayesian"), 8, "gaussian");
  EXPECT_THROW(report_from_json(text, "x"), ParseError);
}

TEST(Report, SixPresetRowsInOrder) {
  std::vector<RunReport> reports;
  for (int i = 5; i >= 0; --i) {
    reports.push_back(sample_report("T" + std::to_string(i), kPresetFractions[i],
                                    i == 0 ? "zero_shot" : "bayesian", 1, 0.1 * i));
  }
  const auto sorted = sorted_reports(reports);
  const auto table = format_table(sorted);
  std::istringstream lines(table);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(line.substr(0, line.find("  Fraction")).find("Number"), 0u);
  std::vector<std::string> ids;
  while (std::getline(lines, line)) ids.push_back(line.substr(0, 2));
  EXPECT_EQ(ids, (std::vector<std::string>{"T0", "T1", "T2", "T3", "T4", "T5"}));
}

TEST(Report, CsvRoundTripsThroughAReader) {
  std::vector<RunReport> reports{sample_report("plain", 0.5, "bayesian", 2, 0.4),
                                 sample_report("with, comma \"q\"", 1.0, "deterministic", 3, 0.9)};
  const auto csv = format_csv(reports);
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  EXPECT_EQ(csv_cells(line), (std::vector<std::string>{"Number", "P", "R", "F1", "PR-AUC",
                                                       "Fraction", "Variant", "Seed"}));
  std::getline(lines, line);
  std::getline(lines, line);
  const auto cells = csv_cells(line);
  ASSERT_EQ(cells.size(), 8u);
  EXPECT_EQ(cells[0], "with, comma \"q\"");
  EXPECT_DOUBLE_EQ(std::stod(cells[3]), 0.9);
  EXPECT_EQ(cells[6], "deterministic");
  EXPECT_EQ(cells[7], "3");
}

TEST(Report, CsvFormatViaCommandAndMalformedInput) {
  const auto dir = fs::temp_directory_path() / "fsc-cli-report";
  fs::create_directories(dir);
  save_report(dir / "a.json", sample_report("T1", 0.01, "bayesian", 1, 0.5));
  {
    std::ofstream out(dir / "broken.json");
    out << "{\"run_id\": ";
  }
  const auto ok = invoke({"report", "--inputs", (dir / "a.json").string(), "--format", "csv",
                          "--out", (dir / "t.csv").string()});
  EXPECT_EQ(ok.code, kExitOk);
  EXPECT_EQ(slurp(dir / "t.csv").rfind("Number,P,R,F1,PR-AUC", 0), 0u);
  const auto bad = invoke({"report", "--inputs", (dir / "a.json").string(),
                           (dir / "broken.json").string()});
  EXPECT_EQ(bad.code, kExitFailure);
  EXPECT_NE(bad.err.find("broken.json"), std::string::npos);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace fsc::cli
