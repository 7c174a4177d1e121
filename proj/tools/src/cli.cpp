#include "fsc/cli/cli.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "fsc/classifier.hpp"
#include "fsc/cli/report.hpp"
#include "fsc/dataio.hpp"
#include "fsc/encoders.hpp"
#include "fsc/error.hpp"
#include "fsc/metrics.hpp"
#include "fsc/training.hpp"

namespace fsc::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

struct GenDataOptions {
  fs::path out;
  std::size_t n = 4000;
  std::uint64_t seed = 0;
  double crack_frac = 0.5;
  std::size_t size = 64;
  bool force = false;
};

struct EmbedOptions {
  fs::path data;
  fs::path manifest = "manifest.csv";
  fs::path out;
  std::uint64_t seed = 0;
  std::string profile = "desk";
  fs::path weights;
  fs::path save_weights;
};

struct TrainOptions {
  fs::path feats;
  double fraction = 1.0;
  std::string variant = "bayesian";
  std::uint64_t seed = 0;
  fs::path out;
  fs::path log;
  std::size_t epochs = 300;
  double lr = 1e-3;
  std::size_t hidden = 64;
  double dropout = 0.1;
  double kl_scale = TrainConfig{}.kl_scale;
  std::size_t batch_size = 32;
  std::size_t patience = 30;
  std::size_t mc_train = 1;
  bool no_standardize = false;
};

struct EvalOptions {
  fs::path feats;
  fs::path head;
  std::size_t mc_samples = 16;
  fs::path report;
  double threshold = 0.5;
  std::string id;
  std::optional<std::uint64_t> seed;
};

struct ZeroShotOptions {
  fs::path feats;
  fs::path report;
  std::string id = "T0";
};

struct ReportOptions {
  std::vector<fs::path> inputs;
  std::string format = "table";
  fs::path out;
};

CLI::Validator open_unit_interval() {
  return CLI::Validator(
      [](std::string& s) -> std::string {
        try {
          const double v = std::stod(s);
          if (v > 0.0 && v < 1.0) return {};
        } catch (const std::exception&) {
        }
        return "value " + s + " not in (0, 1)";
      },
      "(0,1)");
}

CLI::Validator half_open_unit_interval() {
  return CLI::Validator(
      [](std::string& s) -> std::string {
        try {
          const double v = std::stod(s);
          if (v >= 0.0 && v < 1.0) return {};
        } catch (const std::exception&) {
        }
        return "value " + s + " not in [0, 1)";
      },
      "[0,1)");
}

// Echo a float setting as the decimal it was written as, not its binary
// expansion (0.1f would otherwise print as 0.10000000149011612).
double short_decimal(float v) {
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
  return std::strtod(std::string(buf, end).c_str(), nullptr);
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void require_prompts(const FeatureCache& cache, const fs::path& path) {
  if (cache.prompts.size() < kNumClasses) {
    throw ConfigError(path.string() + " carries no class prompt features; rebuild it with `fsc embed`");
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open for writing: " + path.string());
  file << text;
  if (!file) throw IoError("failed writing " + path.string());
}

int gen_data(const GenDataOptions& o, std::ostream& out) {
  const fs::path images_dir = o.out / "images";
  const char* outputs[] = {"manifest.csv", "train.csv", "test.csv", "dataset.json"};
  if (fs::exists(o.out)) {
    if (!fs::is_directory(o.out)) {
      throw UsageError(o.out.string() + " exists and is not a directory");
    }
    if (!fs::is_empty(o.out)) {
      if (!o.force) {
        throw UsageError(o.out.string() + " is not empty; pass --force to regenerate into it");
      }
      // Only the generator's own outputs are removed.
      fs::remove_all(images_dir);
      for (const char* name : outputs) fs::remove(o.out / name);
    }
  }
  fs::create_directories(images_dir);

  const GeneratorParams params;
  const auto set = generate_synthetic(o.n, o.crack_frac, o.seed, o.size, params);
  const std::size_t digits = std::max<std::size_t>(5, std::to_string(o.n - 1).size());
  DatasetManifest manifest;
  manifest.seed = o.seed;
  manifest.generator = params;
  std::size_t cracks = 0;
  for (std::size_t i = 0; i < set.images.size(); ++i) {
    std::string name = std::to_string(i);
    name.insert(0, digits - name.size(), '0');
    const std::string rel = "images/" + name + ".pgm";
    write_image(o.out / rel, set.images[i]);
    manifest.records.push_back({rel, set.labels[i]});
    if (set.labels[i] == Label::crack) ++cracks;
  }
  const auto [train_part, test_part] = split_train_test(manifest, o.seed);
  write_manifest(o.out / "manifest.csv", manifest);
  write_manifest(o.out / "train.csv", train_part);
  write_manifest(o.out / "test.csv", test_part);

  Json meta;
  meta["count"] = o.n;
  meta["crack_count"] = cracks;
  meta["crack_frac"] = o.crack_frac;
  meta["seed"] = o.seed;
  meta["size"] = o.size;
  meta["train_count"] = train_part.records.size();
  meta["test_count"] = test_part.records.size();
  meta["generator"] = {{"background_mean", params.background_mean},
                       {"background_sd", params.background_sd},
                       {"shading_amplitude", params.shading_amplitude},
                       {"min_steps", params.min_steps},
                       {"max_steps", params.max_steps},
                       {"max_turn", params.max_turn},
                       {"min_width", params.min_width},
                       {"max_width", params.max_width},
                       {"crack_multiplier", params.crack_multiplier}};
  write_text(o.out / "dataset.json", meta.dump(2) + "\n");

  out << "wrote " << o.n << " images (" << cracks << " crack, " << o.n - cracks
      << " no_crack) to " << o.out.string() << "; train " << train_part.records.size()
      << ", test " << test_part.records.size() << "\n";
  return kExitOk;
}

int embed(const EmbedOptions& o, std::ostream& out) {
  const EncoderConfig config =
      o.profile == "paper" ? EncoderConfig::paper_profile() : EncoderConfig::desk_profile();
  const fs::path manifest_path = o.manifest.is_absolute() ? o.manifest : o.data / o.manifest;
  const auto manifest = read_manifest(manifest_path);
  const auto params =
      o.weights.empty() ? init_frozen_params(config, o.seed) : load_weights(o.weights, config);
  if (!o.save_weights.empty()) save_weights(o.save_weights, params);
  const auto prompts = default_prompts();
  const auto cache = build_feature_cache(manifest, manifest_path.parent_path(), params, prompts);
  write_feature_cache(o.out, cache);
  out << "encoded " << cache.items.size() << " images and " << cache.prompts.size()
      << " prompts (" << o.profile << " profile, dim " << cache.dim << ") to " << o.out.string()
      << "\nencoder fingerprint " << to_hex(cache.fingerprint) << "\n";
  return kExitOk;
}

int train_cmd(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  if (o.fraction == 0.0) {
    err << "fraction 0 trains nothing: the untrained baseline (T0) is zero-shot prediction.\n"
        << "run: fsc zero-shot --feats TEST.fscf --report T0.json\n";
    return kExitGuidance;
  }
  const auto cache = read_feature_cache(o.feats);
  require_prompts(cache, o.feats);
  const auto subset = few_shot_split(cache.items, {o.fraction, o.seed});
  if (subset.empty()) {
    throw UsageError("fraction " + std::to_string(o.fraction) + " of " +
                     std::to_string(cache.items.size()) + " items selects nothing");
  }
  auto head = HeadParams::init(cache.dim, o.hidden, parse_variant(o.variant),
                               static_cast<float>(o.dropout), o.seed);
  TrainConfig cfg;
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch_size;
  cfg.learning_rate = o.lr;
  cfg.kl_scale = o.kl_scale;
  cfg.mc_train_samples = o.mc_train;
  cfg.seed = o.seed;
  cfg.patience = o.patience;
  cfg.standardize = !o.no_standardize;
  const auto log = train(head, subset, cache.prompts, cfg);

  HeadCheckpoint checkpoint{head,
                            {to_hex(cache.fingerprint), o.fraction, o.seed, subset.size(),
                             std::string(to_string(log.stop_reason))}};
  save_head(o.out, checkpoint);
  fs::path log_path = o.log;
  if (log_path.empty()) {
    log_path = o.out;
    log_path.replace_extension(".log.csv");
  }
  write_train_log(log_path, log);
  const auto& last = log.epochs.back();
  out << "trained " << o.variant << " head on " << subset.size() << " of " << cache.items.size()
      << " items: " << log.epochs.size() << " epochs (" << to_string(log.stop_reason)
      << "), final loss " << fixed4(last.loss) << " nll " << fixed4(last.nll) << "\n";
  return kExitOk;
}

Json config_echo(const fs::path& feats) {
  Json c;
  c["feats"] = feats.filename().string();
  return c;
}

int eval_cmd(const EvalOptions& o, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto checkpoint = load_head(o.head);
  const auto cache = read_feature_cache(o.feats);
  require_prompts(cache, o.feats);
  if (checkpoint.info.encoder_fingerprint != to_hex(cache.fingerprint)) {
    throw ConfigError("head " + o.head.string() + " was trained on features from encoder " +
                      checkpoint.info.encoder_fingerprint + " but " + o.feats.string() +
                      " comes from " + to_hex(cache.fingerprint));
  }
  std::vector<FeatureVector> images;
  std::vector<Label> actual;
  images.reserve(cache.items.size());
  for (const auto& item : cache.items) {
    images.push_back(item.feature);
    actual.push_back(item.label);
  }
  const std::uint64_t seed = o.seed.value_or(checkpoint.info.seed);
  auto noise = RngStream::derive(seed, "eval");
  const auto probs = predict_batch(images, cache.prompts, checkpoint.head, o.mc_samples, noise);

  RunReport report;
  report.run_id = o.id.empty() ? preset_id(checkpoint.info.fraction) : o.id;
  report.fraction = checkpoint.info.fraction;
  report.variant = std::string(to_string(checkpoint.head.variant));
  report.seed = checkpoint.info.seed;
  report.metrics = evaluate(probs, actual, kPositiveLabel, o.threshold);
  report.config = config_echo(o.feats);
  report.config["head"] = o.head.filename().string();
  report.config["mc_samples"] = o.mc_samples;
  report.config["threshold"] = o.threshold;
  report.config["eval_seed"] = seed;
  report.config["test_items"] = images.size();
  report.config["train_items"] = checkpoint.info.train_items;
  report.config["hidden"] = checkpoint.head.hidden();
  report.config["dropout_rate"] = short_decimal(checkpoint.head.dropout_rate);
  report.config["stop_reason"] = checkpoint.info.stop_reason;
  report.config["encoder_fingerprint"] = checkpoint.info.encoder_fingerprint;
  report.wall_clock_seconds = seconds_since(t0);
  save_report(o.report, report);
  out << report.run_id << " " << report.variant << ": P " << fixed4(report.metrics.precision)
      << " R " << fixed4(report.metrics.recall) << " F1 " << fixed4(report.metrics.f1)
      << " PR-AUC " << fixed4(report.metrics.pr_auc) << "\n";
  return kExitOk;
}

int zero_shot_cmd(const ZeroShotOptions& o, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cache = read_feature_cache(o.feats);
  require_prompts(cache, o.feats);
  std::vector<Label> predicted;
  std::vector<double> margins;
  std::vector<Label> actual;
  const std::size_t pos = class_index(kPositiveLabel);
  const std::size_t neg = class_index(Label::no_crack);
  for (const auto& item : cache.items) {
    const auto z = zero_shot_predict(item.feature, cache.prompts);
    predicted.push_back(static_cast<Label>(z.label));
    margins.push_back(z.similarities[pos] - z.similarities[neg]);
    actual.push_back(item.label);
  }
  RunReport report;
  report.run_id = o.id;
  report.fraction = 0.0;
  report.variant = "zero_shot";
  report.seed = 0;
  report.metrics = evaluate_scored(predicted, margins, actual);
  report.config = config_echo(o.feats);
  report.config["test_items"] = cache.items.size();
  report.config["encoder_fingerprint"] = to_hex(cache.fingerprint);
  report.wall_clock_seconds = seconds_since(t0);
  save_report(o.report, report);
  out << report.run_id << " zero_shot: P " << fixed4(report.metrics.precision) << " R "
      << fixed4(report.metrics.recall) << " F1 " << fixed4(report.metrics.f1) << " PR-AUC "
      << fixed4(report.metrics.pr_auc) << "\n";
  return kExitOk;
}

int report_cmd(const ReportOptions& o, std::ostream& out) {
  if (o.inputs.empty()) throw UsageError("report needs at least one input");
  std::vector<RunReport> reports;
  for (const auto& path : o.inputs) reports.push_back(load_report(path));
  reports = sorted_reports(std::move(reports));
  const std::string text = o.format == "csv" ? format_csv(reports) : format_table(reports);
  if (o.out.empty()) {
    out << text;
  } else {
    write_text(o.out, text);
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot crack classification: data, features, heads and reports", "fsc"};
  app.require_subcommand(1);

  GenDataOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Render a synthetic crack dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--n", gen.n, "Number of images")->check(CLI::Range(std::size_t{2}, std::size_t{1} << 24));
  gen_cmd->add_option("--seed", gen.seed, "Dataset seed");
  gen_cmd->add_option("--crack-frac", gen.crack_frac, "Fraction of crack images")
      ->check(open_unit_interval());
  gen_cmd->add_option("--size", gen.size, "Image side in pixels")
      ->check(CLI::Range(std::size_t{4}, std::size_t{4096}));
  gen_cmd->add_flag("--force", gen.force, "Regenerate into a non-empty directory");

  EmbedOptions emb;
  auto* emb_cmd = app.add_subcommand("embed", "Encode a dataset into a feature cache");
  emb_cmd->add_option("--data", emb.data, "Dataset directory")->required();
  emb_cmd->add_option("--manifest", emb.manifest, "Manifest inside --data (or absolute)");
  emb_cmd->add_option("--out", emb.out, "Feature cache to write")->required();
  emb_cmd->add_option("--seed", emb.seed, "Encoder weight seed");
  emb_cmd->add_option("--profile", emb.profile, "Encoder shape profile")
      ->check(CLI::IsMember({"desk", "paper"}));
  emb_cmd->add_option("--weights", emb.weights, "Load encoder weights instead of seeding them");
  emb_cmd->add_option("--save-weights", emb.save_weights, "Also write the encoder weights");

  TrainOptions tr;
  auto* tr_cmd = app.add_subcommand("train", "Train a classifier head on a few-shot subset");
  tr_cmd->add_option("--feats", tr.feats, "Training feature cache")->required();
  tr_cmd->add_option("--fraction", tr.fraction, "Fraction of the training set, in [0, 1]")
      ->required()
      ->check(CLI::Range(0.0, 1.0));
  tr_cmd->add_option("--variant", tr.variant, "Head variant")
      ->check(CLI::IsMember({"bayesian", "deterministic"}));
  tr_cmd->add_option("--seed", tr.seed, "Split, init and training seed");
  tr_cmd->add_option("--out", tr.out, "Head checkpoint to write")->required();
  tr_cmd->add_option("--log", tr.log, "Training log CSV (default: next to --out)");
  tr_cmd->add_option("--epochs", tr.epochs, "Maximum epochs")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1000000}));
  tr_cmd->add_option("--lr", tr.lr, "Learning rate")
      ->check(CLI::PositiveNumber);
  tr_cmd->add_option("--hidden", tr.hidden, "Hidden width")
      ->check(CLI::Range(std::size_t{1}, std::size_t{65536}));
  tr_cmd->add_option("--dropout", tr.dropout, "Dropout rate")->check(half_open_unit_interval());
  tr_cmd->add_option("--kl-scale", tr.kl_scale, "Multiplier on the 1/num_batches KL weight")
      ->check(CLI::NonNegativeNumber);
  tr_cmd->add_option("--batch-size", tr.batch_size, "Minibatch size")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1} << 20));
  tr_cmd->add_option("--patience", tr.patience, "Epochs without improvement before stopping");
  tr_cmd->add_option("--mc-train", tr.mc_train, "Weight draws per training step")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1024}));
  tr_cmd->add_flag("--no-standardize", tr.no_standardize,
                   "Feed raw image features instead of fitting a scaler");

  EvalOptions ev;
  auto* ev_cmd = app.add_subcommand("eval", "Evaluate a trained head on a feature cache");
  ev_cmd->add_option("--feats", ev.feats, "Test feature cache")->required();
  ev_cmd->add_option("--head", ev.head, "Head checkpoint")->required();
  ev_cmd->add_option("--mc-samples", ev.mc_samples, "Monte Carlo draws")
      ->check(CLI::Range(std::size_t{1}, std::size_t{100000}));
  ev_cmd->add_option("--report", ev.report, "Run report to write")->required();
  ev_cmd->add_option("--threshold", ev.threshold, "Positive-class probability threshold")
      ->check(CLI::Range(0.0, 1.0));
  ev_cmd->add_option("--id", ev.id, "Run id (default: preset name of the head's fraction)");
  ev_cmd->add_option("--seed", ev.seed, "Prediction noise seed (default: the head's seed)");

  ZeroShotOptions zs;
  auto* zs_cmd = app.add_subcommand("zero-shot", "Untrained prompt-similarity baseline");
  zs_cmd->add_option("--feats", zs.feats, "Test feature cache")->required();
  zs_cmd->add_option("--report", zs.report, "Run report to write")->required();
  zs_cmd->add_option("--id", zs.id, "Run id");

  ReportOptions rp;
  auto* rp_cmd = app.add_subcommand("report", "Merge run reports into one table");
  rp_cmd->add_option("--inputs", rp.inputs, "Run report files")->required()->expected(1, -1);
  rp_cmd->add_option("--format", rp.format, "Output format")
      ->check(CLI::IsMember({"table", "csv"}));
  rp_cmd->add_option("--out", rp.out, "Write to a file instead of stdout");

  std::vector<std::string> argv_store{"fsc"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (*gen_cmd) return gen_data(gen, out);
    if (*emb_cmd) return embed(emb, out);
    if (*tr_cmd) return train_cmd(tr, out, err);
    if (*ev_cmd) return eval_cmd(ev, out);
    if (*zs_cmd) return zero_shot_cmd(zs, out);
    if (*rp_cmd) return report_cmd(rp, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const fs::filesystem_error& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace fsc::cli
