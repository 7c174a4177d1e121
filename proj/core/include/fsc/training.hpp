#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fsc/classifier.hpp"
#include "fsc/labels.hpp"

namespace fsc {

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  /// Multiplier on the per-batch KL weight 1/num_batches (1 = one full KL
  /// per epoch). The likelihood term is a per-item mean, so 1 lets the prior
  /// swamp the data at this head size; the default tempers it.
  double kl_scale = 1e-3;
  std::size_t mc_train_samples = 1;
  std::uint64_t seed = 0;
  std::size_t patience = 30;
  double min_improvement = 1e-5;
  /// Fit the head's feature scaler to the training set before the first step.
  bool standardize = true;

  void validate() const;
};

/// Few-shot presets T0..T5, as fractions of the training set.
inline constexpr double kPresetFractions[] = {0.0, 0.01, 0.05, 0.10, 0.50, 1.00};

struct SplitSpec {
  double fraction = 1.0;
  std::uint64_t seed = 0;
};

/// Seeded, class-stratified subset of round(fraction * N) items.
std::vector<LabeledFeature> few_shot_split(std::span<const LabeledFeature> train_set,
                                           const SplitSpec& spec);

/// KL(N(mu, sigma^2) || N(0, 1)) = (sigma^2 + mu^2 - 1)/2 - ln sigma.
double kl_gaussian(double mu, double sigma);

/// Sum of kl_gaussian over every weight and bias of the head (sigma =
/// softplus(rho)).
double head_kl(const HeadParams& head);

struct ElboTerms {
  double loss = 0.0;
  double nll = 0.0;
  double kl = 0.0;
  double kl_weight = 0.0;
};

/// Gradient of the loss, laid out like HeadParams.
struct HeadGradient {
  struct Layer {
    std::vector<double> weight_mean;
    std::vector<double> weight_rho;
    std::vector<double> bias_mean;
    std::vector<double> bias_rho;
  };
  Layer layer1;
  Layer layer2;
};

/// Number of batches an epoch over n items is split into.
std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size);

/// nll: mean cross-entropy over batch items and mc_train_samples weight
/// draws (one draw shared by the whole batch; dropout active). kl: head_kl
/// for the bayesian variant, 0 for deterministic. loss = nll + kl_weight*kl.
/// The noise stream is taken by value: the same stream always reproduces
/// the same draws.
ElboTerms elbo_loss(std::span<const LabeledFeature> batch,
                    std::span<const FeatureVector> prompts, const HeadParams& head,
                    double kl_weight, std::size_t mc_samples, RngStream noise);

/// elbo_loss plus its exact gradient w.r.t. every mean and rho (rho
/// gradients are zero for the deterministic variant), under the same draws.
ElboTerms elbo_gradient(std::span<const LabeledFeature> batch,
                        std::span<const FeatureVector> prompts, const HeadParams& head,
                        double kl_weight, std::size_t mc_samples, RngStream noise,
                        HeadGradient& grad);

/// Adaptive-moment optimizer state for one head.
class AdamState {
 public:
  explicit AdamState(const HeadParams& head, double beta1 = 0.9, double beta2 = 0.999,
                     double eps = 1e-8);

  /// Applies one bias-corrected update. Throws NumericError naming the
  /// first non-finite gradient entry (parameters untouched in that case).
  void apply(HeadParams& head, const HeadGradient& grad, double learning_rate);

  std::size_t steps() const { return step_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t step_ = 0;
  HeadGradient m_;
  HeadGradient v_;
};

/// One optimizer step on one batch. Returns the terms evaluated before the
/// update.
ElboTerms grad_step(HeadParams& head, AdamState& optimizer, std::span<const LabeledFeature> batch,
                    std::span<const FeatureVector> prompts, const TrainConfig& cfg,
                    double kl_weight, RngStream noise);

enum class StopReason { max_epochs, plateau };

std::string_view to_string(StopReason r);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double nll = 0.0;
  double kl = 0.0;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
  StopReason stop_reason = StopReason::max_epochs;

  friend bool operator==(const TrainLog&, const TrainLog&) = default;
};

/// Epoch loop over seeded-shuffled batches until cfg.epochs or until the
/// mean epoch loss has not improved by cfg.min_improvement for
/// cfg.patience epochs. With cfg.standardize the head's scaler is fitted
/// to train_set first. Throws UsageError on an empty set (the zero-shot
/// path handles fraction 0).
TrainLog train(HeadParams& head, std::span<const LabeledFeature> train_set,
               std::span<const FeatureVector> prompts, const TrainConfig& cfg);

/// CSV with header epoch,loss,nll,kl.
std::string train_log_csv(const TrainLog& log);
void write_train_log(const std::filesystem::path& path, const TrainLog& log);

}  // namespace fsc
