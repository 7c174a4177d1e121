#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fsc/encoders.hpp"
#include "fsc/labels.hpp"
#include "fsc/numerics.hpp"

namespace fsc {

/// Mean-field Gaussian linear map. The effective standard deviation of each
/// entry is softplus(rho), positive for any finite rho.
struct BayesLinearParams {
  Matrix weight_mean;  // out x in
  Matrix weight_rho;   // out x in
  std::vector<float> bias_mean;
  std::vector<float> bias_rho;

  std::size_t in() const { return weight_mean.cols(); }
  std::size_t out() const { return weight_mean.rows(); }

  /// Means ~ N(0, 1/sqrt(in)), bias means 0, every rho = rho_init.
  static BayesLinearParams init(std::size_t in, std::size_t out, float rho_init, RngStream& rng);

  friend bool operator==(const BayesLinearParams&, const BayesLinearParams&) = default;
};

enum class HeadVariant { bayesian, deterministic };

std::string_view to_string(HeadVariant v);
/// Throws InputError for anything other than "bayesian" / "deterministic".
HeadVariant parse_variant(std::string_view s);

inline constexpr float kDefaultRhoInit = -5.0f;

/// Per-dimension affine map x -> (x - mean) / scale applied to image
/// features ahead of fusion. Empty means identity.
struct FeatureScaler {
  std::vector<float> mean;
  std::vector<float> scale;

  bool empty() const { return mean.empty(); }
  FeatureVector apply(const FeatureVector& feature) const;

  /// Mean and population standard deviation of each dimension; a dimension
  /// whose deviation is below 1e-6 keeps scale 1. Throws UsageError on an
  /// empty set.
  static FeatureScaler fit(std::span<const LabeledFeature> items);

  friend bool operator==(const FeatureScaler&, const FeatureScaler&) = default;
};

/// feature -> layer1 -> ReLU -> dropout -> layer2 -> scalar score.
struct HeadParams {
  BayesLinearParams layer1;
  BayesLinearParams layer2;
  float dropout_rate = 0.1f;
  HeadVariant variant = HeadVariant::bayesian;
  /// L2-normalise both features before fusion. Off by default (plain sum).
  bool normalize_features = false;
  FeatureScaler scaler;

  std::size_t in() const { return layer1.in(); }
  std::size_t hidden() const { return layer1.out(); }

  static HeadParams init(std::size_t in, std::size_t hidden, HeadVariant variant,
                         float dropout_rate, std::uint64_t seed, float rho_init = kDefaultRhoInit);

  /// Throws ShapeError/ConfigError if dims do not chain in -> hidden -> 1,
  /// dropout_rate is outside [0, 1) or a non-empty scaler does not fit.
  void validate() const;

  friend bool operator==(const HeadParams&, const HeadParams&) = default;
};

/// C = T + I.
struct FusedVector {
  std::vector<float> values;

  std::size_t size() const { return values.size(); }
};

FusedVector fuse(const FeatureVector& text_feat, const FeatureVector& image_feat,
                 bool normalize = false);

/// One concrete weight draw (or the means), in double precision.
struct SampledHead {
  std::size_t in = 0;
  std::size_t hidden = 0;
  std::vector<double> w1;  // hidden x in
  std::vector<double> b1;
  std::vector<double> w2;  // hidden
  double b2 = 0.0;
};

/// w = mu + softplus(rho) * eps with eps drawn from noise (w1, b1, w2, b2 in
/// that order) for the bayesian variant; means only when noise is null or
/// the variant is deterministic.
SampledHead sample_head(const HeadParams& head, RngStream* noise);

/// Scores one fused vector under fixed weights. When dropout_noise is given,
/// each hidden unit is kept with probability 1 - rate and scaled by
/// 1 / (1 - rate).
double score_fused(const SampledHead& weights, std::span<const float> fused, float dropout_rate,
                   RngStream* dropout_noise);

/// Single forward pass. training=true applies dropout and requires noise.
double head_forward(const FusedVector& c, const HeadParams& head, RngStream* noise, bool training);

/// Monte Carlo class probabilities. The head's scaler maps the image feature
/// first. Each draw samples the head once, scores
/// every class's fused vector under that draw, and softmaxes; the result is
/// the mean over draws. Dropout is off.
std::vector<double> predict(const FeatureVector& image_feat,
                            std::span<const FeatureVector> class_prompts, const HeadParams& head,
                            std::size_t mc_samples, RngStream& noise);

/// predict() over many images. Draw m is shared by every image, so sampling
/// is paid once per draw; each row matches predict() on that image under the
/// same draw up to float rounding of the fused vector.
std::vector<std::vector<double>> predict_batch(std::span<const FeatureVector> images,
                                               std::span<const FeatureVector> class_prompts,
                                               const HeadParams& head, std::size_t mc_samples,
                                               RngStream& noise);

struct ZeroShotResult {
  std::size_t label = 0;
  std::vector<double> similarities;
};

/// Cosine similarity against every class prompt; the largest wins (lowest
/// index on exact ties).
ZeroShotResult zero_shot_predict(const FeatureVector& image_feat,
                                 std::span<const FeatureVector> class_prompts);

double cosine_similarity(std::span<const float> a, std::span<const float> b);

/// Metadata stored next to the head parameters in a checkpoint.
struct CheckpointInfo {
  std::string encoder_fingerprint;  // hex
  double fraction = 1.0;
  std::uint64_t seed = 0;
  std::size_t train_items = 0;
  std::string stop_reason;
};

struct HeadCheckpoint {
  HeadParams head;
  CheckpointInfo info;
};

/// JSON document; every parameter is written as the shortest decimal that
/// reads back to the same 32-bit value.
std::string head_to_json(const HeadCheckpoint& checkpoint);
HeadCheckpoint head_from_json(std::string_view text);

void save_head(const std::filesystem::path& path, const HeadCheckpoint& checkpoint);
HeadCheckpoint load_head(const std::filesystem::path& path);

}  // namespace fsc
