#include "fsc/classifier.hpp"

#include <algorithm>
#include <cmath>

#include "fsc/error.hpp"

namespace fsc {

std::string_view to_string(HeadVariant v) {
  return v == HeadVariant::bayesian ? "bayesian" : "deterministic";
}

HeadVariant parse_variant(std::string_view s) {
  if (s == "bayesian") return HeadVariant::bayesian;
  if (s == "deterministic") return HeadVariant::deterministic;
  throw InputError("unknown head variant '" + std::string(s) + "'");
}

BayesLinearParams BayesLinearParams::init(std::size_t in, std::size_t out, float rho_init,
                                          RngStream& rng) {
  BayesLinearParams p{Matrix(out, in), Matrix(out, in, rho_init), std::vector<float>(out, 0.0f),
                      std::vector<float>(out, rho_init)};
  const double scale = 1.0 / std::sqrt(static_cast<double>(in));
  for (float& w : p.weight_mean.values()) {
    w = static_cast<float>(scale * gaussian(rng));
  }
  return p;
}

FeatureVector FeatureScaler::apply(const FeatureVector& feature) const {
  if (empty()) return feature;
  if (feature.size() != mean.size()) {
    throw ShapeError("feature of length " + std::to_string(feature.size()) +
                     " for a scaler of length " + std::to_string(mean.size()));
  }
  FeatureVector out;
  out.values.resize(feature.size());
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = static_cast<float>((static_cast<double>(feature.values[i]) - mean[i]) / scale[i]);
  }
  return out;
}

FeatureScaler FeatureScaler::fit(std::span<const LabeledFeature> items) {
  if (items.empty()) {
    throw UsageError("cannot fit a feature scaler to an empty set");
  }
  const std::size_t dim = items.front().feature.size();
  std::vector<double> sum(dim, 0.0);
  for (const auto& item : items) {
    if (item.feature.size() != dim) {
      throw ShapeError("feature lengths differ within the fitting set");
    }
    for (std::size_t i = 0; i < dim; ++i) sum[i] += item.feature.values[i];
  }
  const double n = static_cast<double>(items.size());
  std::vector<double> sq(dim, 0.0);
  for (const auto& item : items) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double d = item.feature.values[i] - sum[i] / n;
      sq[i] += d * d;
    }
  }
  FeatureScaler s;
  s.mean.resize(dim);
  s.scale.resize(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    s.mean[i] = static_cast<float>(sum[i] / n);
    const double sd = std::sqrt(sq[i] / n);
    s.scale[i] = sd < 1e-6 ? 1.0f : static_cast<float>(sd);
  }
  return s;
}

HeadParams HeadParams::init(std::size_t in, std::size_t hidden, HeadVariant variant,
                            float dropout_rate, std::uint64_t seed, float rho_init) {
  auto rng = RngStream::derive(seed, "head-init");
  HeadParams h;
  h.layer1 = BayesLinearParams::init(in, hidden, rho_init, rng);
  h.layer2 = BayesLinearParams::init(hidden, 1, rho_init, rng);
  h.dropout_rate = dropout_rate;
  h.variant = variant;
  h.validate();
  return h;
}

void HeadParams::validate() const {
  auto check_layer = [](const BayesLinearParams& l, const char* name) {
    if (l.weight_rho.rows() != l.weight_mean.rows() ||
        l.weight_rho.cols() != l.weight_mean.cols() || l.bias_mean.size() != l.out() ||
        l.bias_rho.size() != l.out()) {
      throw ShapeError(std::string(name) + " parameter shapes are inconsistent");
    }
  };
  check_layer(layer1, "layer1");
  check_layer(layer2, "layer2");
  if (layer2.in() != layer1.out() || layer2.out() != 1) {
    throw ShapeError("head dims must chain in -> hidden -> 1, got " +
                     layer1.weight_mean.shape_string() + " then " +
                     layer2.weight_mean.shape_string());
  }
  if (!(dropout_rate >= 0.0f && dropout_rate < 1.0f)) {
    throw ConfigError("dropout_rate must be in [0, 1), got " + std::to_string(dropout_rate));
  }
  if (!scaler.empty()) {
    if (scaler.mean.size() != in() || scaler.scale.size() != in()) {
      throw ShapeError("feature scaler length does not match the head input");
    }
    for (float v : scaler.scale) {
      if (!(v > 0.0f) || !std::isfinite(v)) {
        throw ConfigError("feature scaler entries must be positive and finite");
      }
    }
  }
}

namespace {

std::vector<float> l2_normalized(std::span<const float> v) {
  double norm = 0.0;
  for (float x : v) norm += static_cast<double>(x) * x;
  norm = std::sqrt(norm);
  if (norm == 0.0) {
    throw InputError("cannot normalise a zero-norm feature");
  }
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

}  // namespace

FusedVector fuse(const FeatureVector& text_feat, const FeatureVector& image_feat, bool normalize) {
  if (text_feat.size() != image_feat.size()) {
    throw ShapeError("cannot fuse features of length " + std::to_string(text_feat.size()) +
                     " and " + std::to_string(image_feat.size()));
  }
  FusedVector c;
  c.values.resize(text_feat.size());
  if (normalize) {
    const auto t = l2_normalized(text_feat.values);
    const auto i = l2_normalized(image_feat.values);
    for (std::size_t n = 0; n < c.values.size(); ++n) c.values[n] = t[n] + i[n];
  } else {
    for (std::size_t n = 0; n < c.values.size(); ++n) {
      c.values[n] = text_feat.values[n] + image_feat.values[n];
    }
  }
  return c;
}

SampledHead sample_head(const HeadParams& head, RngStream* noise) {
  SampledHead s;
  s.in = head.in();
  s.hidden = head.hidden();
  const bool sampling = noise != nullptr && head.variant == HeadVariant::bayesian;
  auto draw = [&](std::span<const float> mean, std::span<const float> rho, std::vector<double>& out) {
    out.assign(mean.begin(), mean.end());
    if (!sampling) return;
    std::vector<double> eps(mean.size());
    fill_gaussian(eps, *noise);
    for (std::size_t i = 0; i < mean.size(); ++i) out[i] += softplus(rho[i]) * eps[i];
  };
  draw(head.layer1.weight_mean.values(), head.layer1.weight_rho.values(), s.w1);
  draw(head.layer1.bias_mean, head.layer1.bias_rho, s.b1);
  draw(head.layer2.weight_mean.values(), head.layer2.weight_rho.values(), s.w2);
  std::vector<double> b2;
  draw(head.layer2.bias_mean, head.layer2.bias_rho, b2);
  s.b2 = b2[0];
  return s;
}

double score_fused(const SampledHead& weights, std::span<const float> fused, float dropout_rate,
                   RngStream* dropout_noise) {
  if (fused.size() != weights.in) {
    throw ShapeError("fused vector of length " + std::to_string(fused.size()) +
                     " for a head expecting " + std::to_string(weights.in));
  }
  const double keep_scale = 1.0 / (1.0 - dropout_rate);
  double score = weights.b2;
  for (std::size_t j = 0; j < weights.hidden; ++j) {
    const double* row = weights.w1.data() + j * weights.in;
    double h = weights.b1[j];
    for (std::size_t k = 0; k < weights.in; ++k) {
      h += row[k] * fused[k];
    }
    double a = relu(h);
    if (dropout_noise != nullptr) {
      a = dropout_noise->uniform() < dropout_rate ? 0.0 : a * keep_scale;
    }
    score += weights.w2[j] * a;
  }
  return score;
}

double head_forward(const FusedVector& c, const HeadParams& head, RngStream* noise, bool training) {
  if (training && noise == nullptr && head.dropout_rate > 0.0f) {
    throw UsageError("head_forward in training mode needs a noise stream for dropout");
  }
  const auto weights = sample_head(head, noise);
  return score_fused(weights, c.values, head.dropout_rate, training ? noise : nullptr);
}

std::vector<double> predict(const FeatureVector& image_feat,
                            std::span<const FeatureVector> class_prompts, const HeadParams& head,
                            std::size_t mc_samples, RngStream& noise) {
  if (mc_samples == 0) {
    throw UsageError("predict needs at least one Monte Carlo sample");
  }
  if (class_prompts.size() < 2) {
    throw UsageError("predict needs at least two class prompts");
  }
  const FeatureVector image = head.scaler.apply(image_feat);
  std::vector<FusedVector> fused;
  fused.reserve(class_prompts.size());
  for (const auto& prompt : class_prompts) {
    fused.push_back(fuse(prompt, image, head.normalize_features));
  }
  // Without sampling every draw is identical.
  const std::size_t draws = head.variant == HeadVariant::bayesian ? mc_samples : 1;
  std::vector<double> mean(class_prompts.size(), 0.0);
  std::vector<double> scores(class_prompts.size());
  for (std::size_t m = 0; m < draws; ++m) {
    const auto weights = sample_head(head, &noise);
    for (std::size_t k = 0; k < fused.size(); ++k) {
      scores[k] = score_fused(weights, fused[k].values, head.dropout_rate, nullptr);
    }
    const auto probs = softmax(scores);
    for (std::size_t k = 0; k < probs.size(); ++k) mean[k] += probs[k];
  }
  for (double& p : mean) p /= static_cast<double>(draws);
  return mean;
}

std::vector<std::vector<double>> predict_batch(std::span<const FeatureVector> images,
                                               std::span<const FeatureVector> class_prompts,
                                               const HeadParams& head, std::size_t mc_samples,
                                               RngStream& noise) {
  if (mc_samples == 0) {
    throw UsageError("predict needs at least one Monte Carlo sample");
  }
  if (class_prompts.size() < 2) {
    throw UsageError("predict needs at least two class prompts");
  }
  head.validate();
  const std::size_t in = head.in();
  const std::size_t hidden = head.hidden();
  const std::size_t classes = class_prompts.size();
  auto prepared = [&](const FeatureVector& f) {
    if (f.size() != in) {
      throw ShapeError("feature of length " + std::to_string(f.size()) + " for a head expecting " +
                       std::to_string(in));
    }
    return head.normalize_features ? l2_normalized(f.values) : f.values;
  };
  std::vector<std::vector<float>> prompts;
  for (const auto& p : class_prompts) prompts.push_back(prepared(p));
  std::vector<std::vector<float>> inputs;
  inputs.reserve(images.size());
  for (const auto& img : images) inputs.push_back(prepared(head.scaler.apply(img)));

  auto project = [&](const SampledHead& w, std::span<const float> x, std::vector<double>& out) {
    for (std::size_t j = 0; j < hidden; ++j) {
      const double* row = w.w1.data() + j * in;
      double acc = 0.0;
      for (std::size_t c = 0; c < in; ++c) acc += row[c] * x[c];
      out[j] = acc;
    }
  };

  const std::size_t draws = head.variant == HeadVariant::bayesian ? mc_samples : 1;
  std::vector<std::vector<double>> mean(images.size(), std::vector<double>(classes, 0.0));
  std::vector<std::vector<double>> prompt_proj(classes, std::vector<double>(hidden));
  std::vector<double> image_proj(hidden);
  std::vector<double> scores(classes);
  for (std::size_t m = 0; m < draws; ++m) {
    const auto w = sample_head(head, &noise);
    for (std::size_t k = 0; k < classes; ++k) project(w, prompts[k], prompt_proj[k]);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      project(w, inputs[i], image_proj);
      for (std::size_t k = 0; k < classes; ++k) {
        double s = w.b2;
        for (std::size_t j = 0; j < hidden; ++j) {
          s += w.w2[j] * relu(prompt_proj[k][j] + image_proj[j] + w.b1[j]);
        }
        scores[k] = s;
      }
      const auto probs = softmax(scores);
      for (std::size_t k = 0; k < classes; ++k) mean[i][k] += probs[k];
    }
  }
  for (auto& row : mean) {
    for (double& p : row) p /= static_cast<double>(draws);
  }
  return mean;
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine similarity of vectors with lengths " + std::to_string(a.size()) +
                     " and " + std::to_string(b.size()));
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw InputError("cosine similarity with a zero-norm vector");
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

ZeroShotResult zero_shot_predict(const FeatureVector& image_feat,
                                 std::span<const FeatureVector> class_prompts) {
  if (class_prompts.size() < 2) {
    throw UsageError("zero-shot prediction needs at least two class prompts");
  }
  ZeroShotResult r;
  for (const auto& prompt : class_prompts) {
    r.similarities.push_back(cosine_similarity(image_feat.values, prompt.values));
  }
  r.label = static_cast<std::size_t>(
      std::max_element(r.similarities.begin(), r.similarities.end()) - r.similarities.begin());
  return r;
}

}  // namespace fsc
