#include "fsc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fsc/error.hpp"

namespace fsc {

Confusion confusion(std::span<const Label> predicted, std::span<const Label> actual,
                    Label positive) {
  if (predicted.size() != actual.size()) {
    throw ShapeError("confusion: " + std::to_string(predicted.size()) + " predictions for " +
                     std::to_string(actual.size()) + " labels");
  }
  if (predicted.empty()) {
    throw ShapeError("confusion of an empty prediction list");
  }
  Confusion c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool pred_pos = predicted[i] == positive;
    const bool true_pos = actual[i] == positive;
    if (pred_pos && true_pos) ++c.tp;
    else if (pred_pos) ++c.fp;
    else if (true_pos) ++c.fn;
    else ++c.tn;
  }
  return c;
}

PrecisionRecallF1 precision_recall_f1(const Confusion& c) {
  PrecisionRecallF1 r;
  if (c.tp + c.fp == 0) {
    r.degenerate.push_back("precision");
  } else {
    r.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  }
  if (c.tp + c.fn == 0) {
    r.degenerate.push_back("recall");
  } else {
    r.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  }
  if (r.precision + r.recall == 0.0) {
    r.degenerate.push_back("f1");
  } else {
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
  }
  return r;
}

double pr_auc(std::span<const double> scores, std::span<const Label> labels, Label positive) {
  if (scores.size() != labels.size()) {
    throw ShapeError("pr_auc: " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(labels.size()) + " labels");
  }
  const auto positives = static_cast<std::size_t>(
      std::count(labels.begin(), labels.end(), positive));
  if (positives == 0) {
    throw DomainError("pr_auc is undefined without positive labels");
  }
  for (double s : scores) {
    if (std::isnan(s)) throw InputError("pr_auc score is NaN");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::size_t tp = 0;
  std::size_t seen = 0;
  double prev_recall = 0.0;
  double ap = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    // Every item sharing this score enters at once.
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      if (labels[order[j]] == positive) ++tp;
      ++j;
    }
    seen = j;
    const double recall = static_cast<double>(tp) / static_cast<double>(positives);
    const double precision = static_cast<double>(tp) / static_cast<double>(seen);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

MetricsReport evaluate(std::span<const std::vector<double>> probabilities,
                       std::span<const Label> actual, Label positive, double threshold) {
  if (probabilities.size() != actual.size()) {
    throw ShapeError("evaluate: " + std::to_string(probabilities.size()) +
                     " predictions for " + std::to_string(actual.size()) + " labels");
  }
  const std::size_t pos = class_index(positive);
  const Label negative = positive == Label::crack ? Label::no_crack : Label::crack;
  std::vector<Label> predicted;
  std::vector<double> scores;
  predicted.reserve(actual.size());
  scores.reserve(actual.size());
  for (const auto& p : probabilities) {
    if (p.size() <= pos) {
      throw ShapeError("probability vector lacks the positive class");
    }
    const double total = std::accumulate(p.begin(), p.end(), 0.0);
    if (std::abs(total - 1.0) > 1e-6 ||
        std::any_of(p.begin(), p.end(), [](double v) { return !(v >= 0.0); })) {
      throw InputError("class probabilities must be non-negative and sum to 1");
    }
    scores.push_back(p[pos]);
    predicted.push_back(p[pos] >= threshold ? positive : negative);
  }
  return evaluate_scored(predicted, scores, actual, positive);
}

MetricsReport evaluate_scored(std::span<const Label> predicted, std::span<const double> scores,
                              std::span<const Label> actual, Label positive) {
  if (scores.size() != actual.size()) {
    throw ShapeError("evaluate: " + std::to_string(scores.size()) + " scores for " +
                     std::to_string(actual.size()) + " labels");
  }
  const Confusion c = confusion(predicted, actual, positive);
  const auto prf = precision_recall_f1(c);
  MetricsReport report;
  report.precision = prf.precision;
  report.recall = prf.recall;
  report.f1 = prf.f1;
  report.pr_auc = pr_auc(scores, actual, positive);
  report.counts = c;
  report.degenerate = prf.degenerate;
  return report;
}

}  // namespace fsc
