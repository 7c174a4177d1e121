// Acceptance suite: one PASS/FAIL line per criterion. Arguments select a
// subset of criteria by number (default: all).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include <boost/multiprecision/cpp_int.hpp>

#include "fsc/classifier.hpp"
#include "fsc/cli/cli.hpp"
#include "fsc/cli/report.hpp"
#include "fsc/encoders.hpp"
#include "fsc/metrics.hpp"
#include "fsc/training.hpp"

namespace fs = std::filesystem;
using Rational = boost::multiprecision::cpp_rational;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

// ---------------------------------------------------------------- 1
Outcome shape_chain() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto config = fsc::EncoderConfig::paper_profile();
  const auto params = fsc::init_frozen_params(config, 7);
  fsc::GrayImage img(224, 224);
  fsc::RngStream rng(3);
  for (float& p : img.pixels) p = static_cast<float>(rng.uniform());
  fsc::ShapeTrace trace;
  const auto feature = fsc::encode_image(img, params, &trace);
  const auto text = fsc::encode_text(fsc::tokenize("A picture with cracks", config), params);

  std::vector<std::pair<std::size_t, std::size_t>> expected = {
      {224, 224}, {49, 1024}, {49, 768}, {50, 768}};
  for (int b = 0; b < 12; ++b) expected.push_back({50, 768});
  expected.push_back({1, 768});
  expected.push_back({1, 512});
  std::vector<std::pair<std::size_t, std::size_t>> got;
  for (const auto& s : trace.stages) got.push_back({s.rows, s.cols});
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  std::ostringstream chain;
  for (std::size_t i = 0; i < trace.stages.size(); ++i) {
    if (i) chain << " -> ";
    chain << trace.stages[i].rows << "x" << trace.stages[i].cols;
  }
  const bool ok = got == expected && feature.size() == 512 && text.size() == 512 && secs < 30.0;
  return {ok, chain.str() + "; text " + std::to_string(text.size()) + "; " + fmt("%.1f s", secs)};
}

// ---------------------------------------------------------------- 2
Outcome gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t in = 12;
  const std::size_t hidden = 4;
  fsc::RngStream rng(21);
  std::vector<fsc::LabeledFeature> batch(8);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    batch[i].feature.values.resize(in);
    for (float& v : batch[i].feature.values) v = static_cast<float>(fsc::gaussian(rng));
    batch[i].label = i % 2 ? fsc::Label::crack : fsc::Label::no_crack;
  }
  std::vector<fsc::FeatureVector> prompts(2);
  for (auto& p : prompts) {
    p.values.resize(in);
    for (float& v : p.values) v = static_cast<float>(fsc::gaussian(rng));
  }

  double worst = 0.0;
  std::size_t checked = 0;
  for (auto variant : {fsc::HeadVariant::bayesian, fsc::HeadVariant::deterministic}) {
    auto head = fsc::HeadParams::init(in, hidden, variant, 0.25f, 5, -2.0f);
    // Spread the scales so the rho gradients are not all alike.
    for (auto* layer : {&head.layer1, &head.layer2}) {
      for (float& r : layer->weight_rho.values()) r = static_cast<float>(-3.0 + 2.0 * rng.uniform());
      for (float& r : layer->bias_rho) r = static_cast<float>(-3.0 + 2.0 * rng.uniform());
      for (float& b : layer->bias_mean) b = static_cast<float>(0.3 * fsc::gaussian(rng));
    }
    const double kl_weight = 0.05;
    const fsc::RngStream noise(99);
    fsc::HeadGradient grad;
    fsc::elbo_gradient(batch, prompts, head, kl_weight, 2, noise, grad);

    auto check = [&](std::span<float> param, const std::vector<double>& analytic) {
      for (std::size_t i = 0; i < param.size(); ++i) {
        const float saved = param[i];
        const float hi = saved + 1e-3f;
        const float lo = saved - 1e-3f;
        param[i] = hi;
        const double up = fsc::elbo_loss(batch, prompts, head, kl_weight, 2, noise).loss;
        param[i] = lo;
        const double down = fsc::elbo_loss(batch, prompts, head, kl_weight, 2, noise).loss;
        param[i] = saved;
        const double fd = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
        const double scale = std::max({std::abs(fd), std::abs(analytic[i]), 1e-6});
        worst = std::max(worst, std::abs(fd - analytic[i]) / scale);
        ++checked;
      }
    };
    check(head.layer1.weight_mean.values(), grad.layer1.weight_mean);
    check(head.layer1.bias_mean, grad.layer1.bias_mean);
    check(head.layer2.weight_mean.values(), grad.layer2.weight_mean);
    check(head.layer2.bias_mean, grad.layer2.bias_mean);
    if (variant == fsc::HeadVariant::bayesian) {
      check(head.layer1.weight_rho.values(), grad.layer1.weight_rho);
      check(head.layer1.bias_rho, grad.layer1.bias_rho);
      check(head.layer2.weight_rho.values(), grad.layer2.weight_rho);
      check(head.layer2.bias_rho, grad.layer2.bias_rho);
    }
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {worst < 1e-3 && secs < 10.0,
          std::to_string(checked) + " components, max rel err " + fmt("%.2e", worst) + "; " +
              fmt("%.2f s", secs)};
}

// ---------------------------------------------------------------- 3
double kl_by_quadrature(double mu, double sigma) {
  // Composite Simpson over mu +- 14 sigma of q(w) * (log q(w) - log p(w)).
  const double lo = mu - 14.0 * sigma;
  const double hi = mu + 14.0 * sigma;
  const int n = 40000;
  const double h = (hi - lo) / n;
  const double log_norm_q = -std::log(sigma) - 0.5 * std::log(2.0 * M_PI);
  const double log_norm_p = -0.5 * std::log(2.0 * M_PI);
  auto f = [&](double w) {
    const double z = (w - mu) / sigma;
    const double log_q = log_norm_q - 0.5 * z * z;
    const double log_p = log_norm_p - 0.5 * w * w;
    return std::exp(log_q) * (log_q - log_p);
  };
  double sum = f(lo) + f(hi);
  for (int i = 1; i < n; ++i) sum += f(lo + i * h) * (i % 2 ? 4.0 : 2.0);
  return sum * h / 3.0;
}

Outcome kl_oracle() {
  fsc::RngStream rng(5);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const double mu = -3.0 + 6.0 * rng.uniform();
    const double sigma = 0.1 + 2.9 * rng.uniform();
    worst = std::max(worst, std::abs(fsc::kl_gaussian(mu, sigma) - kl_by_quadrature(mu, sigma)));
  }
  const double at_prior = std::abs(fsc::kl_gaussian(0.0, 1.0));
  return {worst < 1e-6 && at_prior <= 1e-12,
          "50 pairs, max abs err " + fmt("%.2e", worst) + "; KL(0,1) = " + fmt("%.1e", at_prior)};
}

// ---------------------------------------------------------------- 4
// Distance between a double and a rational, in units of the double's ulp.
double ulps_from(double d, const Rational& exact) {
  const double ulp = std::nextafter(std::abs(d), INFINITY) - std::abs(d);
  const Rational diff = abs(Rational(d) - exact);
  return static_cast<double>(diff / Rational(ulp));
}

// Brute force: every distinct score is a threshold; recount tp/fp by
// scanning all items.
double ap_brute_force(const std::vector<double>& scores, const std::vector<fsc::Label>& labels) {
  std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
  std::size_t positives = 0;
  for (auto l : labels) positives += l == fsc::Label::crack;
  double prev_recall = 0.0;
  double ap = 0.0;
  for (double t : thresholds) {
    std::size_t tp = 0;
    std::size_t predicted = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) {
        ++predicted;
        tp += labels[i] == fsc::Label::crack;
      }
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(predicted);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

Rational ap_rational(const std::vector<double>& scores, const std::vector<fsc::Label>& labels) {
  std::set<double, std::greater<>> thresholds(scores.begin(), scores.end());
  long positives = 0;
  for (auto l : labels) positives += l == fsc::Label::crack;
  Rational ap = 0;
  long prev_tp = 0;
  for (double t : thresholds) {
    long tp = 0;
    long predicted = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= t) {
        ++predicted;
        tp += labels[i] == fsc::Label::crack;
      }
    }
    ap += Rational(tp - prev_tp, positives) * Rational(tp, predicted);
    prev_tp = tp;
  }
  return ap;
}

Outcome metrics_oracle() {
  fsc::RngStream rng(8);
  double worst_pr = 0.0;
  double worst_f1 = 0.0;
  std::size_t bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    // Small counts, zeros included, so every degenerate branch is hit.
    const std::size_t n[4] = {rng.below(12), rng.below(12), rng.below(12), rng.below(12)};
    std::vector<fsc::Label> predicted;
    std::vector<fsc::Label> actual;
    auto add = [&](std::size_t k, fsc::Label p, fsc::Label a) {
      for (std::size_t i = 0; i < k; ++i) {
        predicted.push_back(p);
        actual.push_back(a);
      }
    };
    add(n[0], fsc::Label::crack, fsc::Label::crack);
    add(n[1], fsc::Label::crack, fsc::Label::no_crack);
    add(n[2], fsc::Label::no_crack, fsc::Label::crack);
    add(n[3], fsc::Label::no_crack, fsc::Label::no_crack);
    if (predicted.empty()) add(1, fsc::Label::no_crack, fsc::Label::no_crack);
    const auto c = fsc::confusion(predicted, actual);
    const auto tp = static_cast<long>(c.tp);
    const auto fp = static_cast<long>(c.fp);
    const auto fn = static_cast<long>(c.fn);
    if (c.tp != n[0] || c.fp != n[1] || c.fn != n[2]) ++bad;
    const auto r = fsc::precision_recall_f1(c);
    auto flagged = [&](const char* name) {
      return std::find(r.degenerate.begin(), r.degenerate.end(), name) != r.degenerate.end();
    };
    if ((tp + fp == 0) != flagged("precision") || (tp + fn == 0) != flagged("recall")) ++bad;
    if (tp + fp > 0) worst_pr = std::max(worst_pr, ulps_from(r.precision, Rational(tp, tp + fp)));
    if (tp + fn > 0) worst_pr = std::max(worst_pr, ulps_from(r.recall, Rational(tp, tp + fn)));
    if (tp > 0) {
      worst_f1 = std::max(worst_f1, ulps_from(r.f1, Rational(2 * tp, 2 * tp + fp + fn)));
    } else if (r.f1 != 0.0) {
      ++bad;
    }
  }

  std::size_t instances = 0;
  std::size_t ap_mismatch = 0;
  double worst_ap = 0.0;
  for (int trial = 0; trial < 3000; ++trial) {
    const std::size_t n = 1 + rng.below(20);
    std::vector<double> scores(n);
    std::vector<fsc::Label> labels(n);
    // Few distinct values so ties are common.
    const std::uint64_t levels = 1 + rng.below(6);
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = static_cast<double>(rng.below(levels)) / 4.0;
      labels[i] = rng.uniform() < 0.5 ? fsc::Label::crack : fsc::Label::no_crack;
    }
    if (std::find(labels.begin(), labels.end(), fsc::Label::crack) == labels.end()) continue;
    ++instances;
    const double got = fsc::pr_auc(scores, labels);
    if (got != ap_brute_force(scores, labels)) ++ap_mismatch;
    worst_ap = std::max(
        worst_ap, std::abs(static_cast<double>(Rational(got) - ap_rational(scores, labels))));
  }
  // P and R are single integer divisions: correctly rounded (<= 0.5 ulp).
  const bool ok = bad == 0 && worst_pr <= 0.5 && worst_f1 <= 4.0 && ap_mismatch == 0 &&
                  worst_ap < 1e-12;
  return {ok, "1000 matrices (P/R max " + fmt("%.2f", worst_pr) + " ulp, F1 max " +
                  fmt("%.2f", worst_f1) + " ulp, " + std::to_string(bad) + " flag/count errors); " +
                  std::to_string(instances) + " AP instances, " + std::to_string(ap_mismatch) +
                  " brute-force mismatches, max |AP - exact| " + fmt("%.1e", worst_ap)};
}

// ---------------------------------------------------------------- 5
Outcome split_sizes() {
  std::vector<fsc::LabeledFeature> set(10000);
  for (std::size_t i = 0; i < set.size(); ++i) {
    set[i].feature.values = {static_cast<float>(i)};
    set[i].label = i % 2 ? fsc::Label::crack : fsc::Label::no_crack;
  }
  const std::size_t expected[] = {0, 100, 500, 1000, 5000, 10000};
  std::ostringstream sizes;
  bool ok = true;
  for (std::size_t i = 0; i < std::size(fsc::kPresetFractions); ++i) {
    const auto subset = fsc::few_shot_split(set, {fsc::kPresetFractions[i], 1});
    sizes << (i ? " " : "") << "T" << i << "=" << subset.size();
    ok = ok && subset.size() == expected[i];
  }
  return {ok, sizes.str()};
}

// ---------------------------------------------------------------- 6-8
struct Grid {
  fs::path root;
  std::map<std::string, fsc::cli::RunReport> reports;  // keyed by file stem
  double seconds = 0.0;
  bool ok = true;
  std::string error;
};

constexpr double kGridFractions[] = {0.01, 0.05, 0.10, 0.50, 1.00};
constexpr std::uint64_t kGridSeeds[] = {1, 2, 3};
const char* const kVariants[] = {"bayesian", "deterministic"};

std::string run_key(const char* variant, double fraction, std::uint64_t seed) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_f%.2f_s%llu", variant, fraction,
                static_cast<unsigned long long>(seed));
  return buf;
}

Grid run_grid(const fs::path& root) {
  Grid g;
  g.root = root;
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(root);
  auto step = [&](std::vector<std::string> args) {
    if (!g.ok) return;
    std::ostringstream out;
    std::ostringstream err;
    const int code = fsc::cli::run(args, out, err);
    if (code != 0) {
      g.ok = false;
      g.error = args.front() + " exited " + std::to_string(code) + ": " + err.str();
    }
  };
  const std::string r = root.string() + "/";
  step({"gen-data", "--out", r + "data", "--n", "4000", "--seed", "11", "--crack-frac", "0.5",
        "--size", "64"});
  step({"embed", "--data", r + "data", "--manifest", "train.csv", "--out", r + "train.fscf",
        "--seed", "5", "--profile", "desk"});
  step({"embed", "--data", r + "data", "--manifest", "test.csv", "--out", r + "test.fscf",
        "--seed", "5", "--profile", "desk"});
  step({"zero-shot", "--feats", r + "test.fscf", "--report", r + "zero_shot.json"});
  for (const char* variant : kVariants) {
    for (std::uint64_t seed : kGridSeeds) {
      for (double fraction : kGridFractions) {
        const std::string key = run_key(variant, fraction, seed);
        char frac[16];
        std::snprintf(frac, sizeof frac, "%.2f", fraction);
        step({"train", "--feats", r + "train.fscf", "--fraction", frac, "--variant", variant,
              "--seed", std::to_string(seed), "--out", r + key + ".head.json"});
        step({"eval", "--feats", r + "test.fscf", "--head", r + key + ".head.json",
              "--mc-samples", "16", "--report", r + key + ".json"});
      }
    }
  }
  g.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!g.ok) return g;
  for (const auto& entry : fs::directory_iterator(root)) {
    const auto name = entry.path().filename().string();
    if (name.ends_with(".json") && !name.ends_with(".head.json")) {
      g.reports[entry.path().stem().string()] = fsc::cli::load_report(entry.path());
    }
  }
  return g;
}

double mean_f1(const Grid& g, const char* variant, double fraction) {
  double sum = 0.0;
  for (std::uint64_t seed : kGridSeeds) sum += g.reports.at(run_key(variant, fraction, seed)).metrics.f1;
  return sum / static_cast<double>(std::size(kGridSeeds));
}

Outcome trend(const Grid& g) {
  if (!g.ok) return {false, "grid failed: " + g.error};
  const double zero_shot = g.reports.at("zero_shot").metrics.f1;
  std::ostringstream d;
  bool ok = g.seconds < 600.0;
  for (const char* variant : kVariants) {
    const double low = mean_f1(g, variant, 0.01);
    const double full = mean_f1(g, variant, 1.00);
    bool v_ok = full >= low - 0.01;
    double min_trained = 1.0;
    double min_large = 1.0;
    for (double f : kGridFractions) {
      const double m = mean_f1(g, variant, f);
      min_trained = std::min(min_trained, m);
      if (f >= 0.10) min_large = std::min(min_large, m);
    }
    v_ok = v_ok && min_large >= 0.90 && min_trained - zero_shot >= 0.2;
    ok = ok && v_ok;
    d << variant << ": F1(1.0) " << fmt("%.4f", full) << " vs F1(0.01) " << fmt("%.4f", low)
      << ", min F1(>=0.10) " << fmt("%.4f", min_large) << ", min trained - zero-shot "
      << fmt("%.4f", min_trained - zero_shot) << "; ";
  }
  d << "zero-shot F1 " << fmt("%.4f", zero_shot) << "; grid " << fmt("%.0f s", g.seconds);
  return {ok, d.str()};
}

Outcome bayes_vs_deterministic(const Grid& g) {
  if (!g.ok) return {false, "grid failed: " + g.error};
  std::ostringstream d;
  bool ok = true;
  for (double f : {0.01, 1.00}) {
    const double b = mean_f1(g, "bayesian", f);
    const double det = mean_f1(g, "deterministic", f);
    ok = ok && b >= det - 0.02;
    if (f > 0.01) d << "; ";
    d << "fraction " << fmt("%.2f", f) << ": bayesian " << fmt("%.4f", b) << " vs deterministic "
      << fmt("%.4f", det);
  }
  return {ok, d.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

Outcome determinism(const Grid& a, const Grid& b) {
  if (!a.ok || !b.ok) return {false, "grid failed: " + a.error + b.error};
  std::size_t compared = 0;
  std::vector<std::string> differing;
  for (const auto& entry : fs::directory_iterator(a.root)) {
    if (!entry.is_regular_file()) continue;
    const auto name = entry.path().filename().string();
    const auto other = b.root / name;
    std::string x = slurp(entry.path());
    std::string y = fs::exists(other) ? slurp(other) : std::string("<missing>");
    if (name.ends_with(".json") && !name.ends_with(".head.json")) {
      // Reports: everything except the wall-clock field.
      x = fsc::cli::report_text(fsc::cli::report_from_json(x, name), false);
      y = fsc::cli::report_text(fsc::cli::report_from_json(y, name), false);
    }
    ++compared;
    if (x != y) differing.push_back(name);
  }
  std::string detail = std::to_string(compared) + " files compared (caches, checkpoints, logs, reports)";
  if (!differing.empty()) detail += "; differing: " + differing.front();
  return {compared > 0 && differing.empty(), detail};
}

// ---------------------------------------------------------------- 9
Outcome bayes_limit() {
  const std::size_t in = 512;
  auto bayes = fsc::HeadParams::init(in, 64, fsc::HeadVariant::bayesian, 0.1f, 4, -20.0f);
  auto det = bayes;
  det.variant = fsc::HeadVariant::deterministic;
  fsc::RngStream data(17);
  fsc::RngStream noise(23);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    fsc::FusedVector c;
    c.values.resize(in);
    for (float& v : c.values) v = static_cast<float>(fsc::gaussian(data));
    const double sb = fsc::head_forward(c, bayes, &noise, false);
    const double sd = fsc::head_forward(c, det, nullptr, false);
    worst = std::max(worst, std::abs(sb - sd));
  }
  return {worst < 1e-4, "100 inputs, max |score difference| " + fmt("%.2e", worst)};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  auto enabled = [&](int n) { return wanted.empty() || wanted.count(n) > 0; };

  int failures = 0;
  auto report = [&](int n, const char* name, const Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << n << " (" << name << "): "
              << o.detail << std::endl;
    failures += o.pass ? 0 : 1;
  };

  if (enabled(1)) report(1, "shape chain", shape_chain());
  if (enabled(2)) report(2, "gradient oracle", gradient_oracle());
  if (enabled(3)) report(3, "KL oracle", kl_oracle());
  if (enabled(4)) report(4, "metrics oracle", metrics_oracle());
  if (enabled(5)) report(5, "few-shot split sizes", split_sizes());

  if (enabled(6) || enabled(7) || enabled(8)) {
    const fs::path base =
        fs::temp_directory_path() / ("fsc-acceptance-" + std::to_string(::getpid()));
    const Grid first = run_grid(base / "run1");
    if (first.ok) {
      std::vector<fsc::cli::RunReport> rows;
      for (const auto& [key, r] : first.reports) rows.push_back(r);
      std::cout << fsc::cli::format_table(fsc::cli::sorted_reports(rows));
    }
    if (enabled(6)) report(6, "trend reproduction", trend(first));
    if (enabled(7)) report(7, "bayesian vs deterministic", bayes_vs_deterministic(first));
    if (enabled(8)) {
      const Grid second = run_grid(base / "run2");
      report(8, "determinism", determinism(first, second));
    }
    if (std::getenv("FSC_ACCEPTANCE_KEEP") == nullptr) {
      fs::remove_all(base);
    } else {
      std::cout << "grid outputs kept in " << base.string() << "\n";
    }
  }

  if (enabled(9)) report(9, "bayesian limit", bayes_limit());
  return failures == 0 ? 0 : 1;
}
