#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fsc/labels.hpp"

namespace fsc {

struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

Confusion confusion(std::span<const Label> predicted, std::span<const Label> actual,
                    Label positive = kPositiveLabel);

struct PrecisionRecallF1 {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  /// Names of the quantities whose denominator was zero (reported as 0).
  std::vector<std::string> degenerate;
};

/// P = TP/(TP+FP), R = TP/(TP+FN), F1 = 2PR/(P+R); 0 plus a flag where a
/// denominator vanishes.
PrecisionRecallF1 precision_recall_f1(const Confusion& c);

/// Average precision: items sorted by descending score, equal scores form
/// one threshold step, AP = sum over steps of (R_i - R_{i-1}) * P_i.
/// Throws DomainError when no label is positive.
double pr_auc(std::span<const double> scores, std::span<const Label> labels,
              Label positive = kPositiveLabel);

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double pr_auc = 0.0;
  Confusion counts;
  std::vector<std::string> degenerate;
};

/// probabilities[i][k] is the predicted probability of class k for item i.
/// Hard labels come from thresholding the positive-class probability
/// (>= threshold is positive); the raw probability feeds pr_auc.
MetricsReport evaluate(std::span<const std::vector<double>> probabilities,
                       std::span<const Label> actual, Label positive = kPositiveLabel,
                       double threshold = 0.5);

/// Metrics from given hard labels plus a ranking score per item (higher
/// means more positive) for pr_auc.
MetricsReport evaluate_scored(std::span<const Label> predicted, std::span<const double> scores,
                              std::span<const Label> actual, Label positive = kPositiveLabel);

}  // namespace fsc
