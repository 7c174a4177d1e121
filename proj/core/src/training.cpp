#include "fsc/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "fsc/error.hpp"

namespace fsc {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (mc_train_samples < 1) throw ConfigError("mc_train_samples must be >= 1");
  if (!(kl_scale >= 0.0)) throw ConfigError("kl_scale must be >= 0");
}

std::vector<LabeledFeature> few_shot_split(std::span<const LabeledFeature> train_set,
                                           const SplitSpec& spec) {
  if (!(spec.fraction >= 0.0 && spec.fraction <= 1.0)) {
    throw ConfigError("few-shot fraction must be in [0, 1], got " + std::to_string(spec.fraction));
  }
  const std::size_t total = train_set.size();
  const auto target = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(total)));

  std::vector<std::vector<std::size_t>> by_class(kNumClasses);
  for (std::size_t i = 0; i < total; ++i) {
    by_class.at(class_index(train_set[i].label)).push_back(i);
  }

  // Largest-remainder apportionment keeps every class within one item of
  // its proportional share.
  std::vector<std::size_t> quota(kNumClasses);
  std::vector<double> remainder(kNumClasses);
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    const double exact = total == 0 ? 0.0
                                    : static_cast<double>(target) *
                                          static_cast<double>(by_class[k].size()) /
                                          static_cast<double>(total);
    quota[k] = std::min(by_class[k].size(), static_cast<std::size_t>(std::floor(exact)));
    remainder[k] = exact - static_cast<double>(quota[k]);
    assigned += quota[k];
  }
  std::vector<std::size_t> order(kNumClasses);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t r = 0; assigned < target; r = (r + 1) % kNumClasses) {
    const std::size_t k = order[r];
    if (quota[k] < by_class[k].size()) {
      ++quota[k];
      ++assigned;
    }
  }

  auto rng = RngStream::derive(spec.seed, "few-shot-split");
  std::vector<std::size_t> chosen;
  chosen.reserve(target);
  for (std::size_t k = 0; k < kNumClasses; ++k) {
    auto idx = by_class[k];
    shuffle(idx, rng);
    chosen.insert(chosen.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota[k]));
  }
  shuffle(chosen, rng);

  std::vector<LabeledFeature> subset;
  subset.reserve(chosen.size());
  for (auto i : chosen) subset.push_back(train_set[i]);
  return subset;
}

double kl_gaussian(double mu, double sigma) {
  if (!(sigma > 0.0)) {
    throw DomainError("kl_gaussian needs sigma > 0, got " + std::to_string(sigma));
  }
  return 0.5 * (sigma * sigma + mu * mu - 1.0) - std::log(sigma);
}

double head_kl(const HeadParams& head) {
  double total = 0.0;
  auto add = [&](std::span<const float> mean, std::span<const float> rho) {
    for (std::size_t i = 0; i < mean.size(); ++i) {
      total += kl_gaussian(mean[i], softplus(rho[i]));
    }
  };
  for (const auto* layer : {&head.layer1, &head.layer2}) {
    add(layer->weight_mean.values(), layer->weight_rho.values());
    add(layer->bias_mean, layer->bias_rho);
  }
  return total;
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch_size) {
  return (n + batch_size - 1) / batch_size;
}

namespace {

HeadGradient zero_gradient(const HeadParams& head) {
  auto shaped = [](const BayesLinearParams& l) {
    return HeadGradient::Layer{std::vector<double>(l.weight_mean.size(), 0.0),
                               std::vector<double>(l.weight_rho.size(), 0.0),
                               std::vector<double>(l.bias_mean.size(), 0.0),
                               std::vector<double>(l.bias_rho.size(), 0.0)};
  };
  return {shaped(head.layer1), shaped(head.layer2)};
}

std::vector<double> as_input(std::span<const float> v, bool normalize) {
  std::vector<double> out(v.begin(), v.end());
  if (normalize) {
    double norm = 0.0;
    for (double x : out) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) throw InputError("cannot normalise a zero-norm feature");
    // Match fuse(): normalise in double, round to float.
    for (double& x : out) x = static_cast<float>(x / norm);
  }
  return out;
}

double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t c = 0;
  for (; c + 4 <= n; c += 4) {
    s0 += a[c] * b[c];
    s1 += a[c + 1] * b[c + 1];
    s2 += a[c + 2] * b[c + 2];
    s3 += a[c + 3] * b[c + 3];
  }
  for (; c < n; ++c) s0 += a[c] * b[c];
  return (s0 + s1) + (s2 + s3);
}

// Per-parameter posterior scale and its derivative, computed once per call.
struct Scales {
  std::vector<double> sigma, dsigma;
};

Scales scales_of(std::span<const float> rho) {
  Scales s{std::vector<double>(rho.size()), std::vector<double>(rho.size())};
  for (std::size_t i = 0; i < rho.size(); ++i) {
    // Shares one exponential between softplus and its derivative.
    const double x = rho[i];
    const double e = std::exp(-std::abs(x));
    s.sigma[i] = std::max(x, 0.0) + std::log1p(e);
    s.dsigma[i] = x >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
  }
  return s;
}

// One concrete draw: sampled weights and the standard-normal noise that
// produced them (empty for the deterministic variant).
struct Draw {
  std::vector<double> w1, b1, w2, b2;
  std::vector<double> e_w1, e_b1, e_w2, e_b2;
};

void fill_draw(std::span<const float> mean, const Scales* scale, RngStream& noise,
               std::vector<double>& w, std::vector<double>& e) {
  w.assign(mean.begin(), mean.end());
  if (scale == nullptr) return;
  e.resize(mean.size());
  fill_gaussian(e, noise);
  for (std::size_t i = 0; i < mean.size(); ++i) w[i] += scale->sigma[i] * e[i];
}

ElboTerms elbo_impl(std::span<const LabeledFeature> batch, std::span<const FeatureVector> prompts,
                    const HeadParams& head, double kl_weight, std::size_t mc_samples,
                    RngStream noise, HeadGradient* grad) {
  if (batch.empty()) {
    throw UsageError("ELBO of an empty batch");
  }
  if (mc_samples == 0) {
    throw UsageError("ELBO needs at least one Monte Carlo sample");
  }
  if (prompts.size() < 2) {
    throw UsageError("ELBO needs at least two class prompts");
  }
  head.validate();
  const std::size_t in = head.in();
  const std::size_t hidden = head.hidden();
  const std::size_t classes = prompts.size();
  const bool bayes = head.variant == HeadVariant::bayesian;

  std::vector<std::vector<double>> prompt_in;
  for (const auto& p : prompts) {
    if (p.size() != in) {
      throw ShapeError("prompt feature of length " + std::to_string(p.size()) +
                       " for a head expecting " + std::to_string(in));
    }
    prompt_in.push_back(as_input(p.values, head.normalize_features));
  }
  std::vector<std::vector<double>> item_in;
  item_in.reserve(batch.size());
  for (const auto& item : batch) {
    if (item.feature.size() != in) {
      throw ShapeError("feature of length " + std::to_string(item.feature.size()) +
                       " for a head expecting " + std::to_string(in));
    }
    if (class_index(item.label) >= classes) {
      throw InputError("label outside the prompt list");
    }
    item_in.push_back(as_input(head.scaler.apply(item.feature).values, head.normalize_features));
  }

  if (grad != nullptr) {
    *grad = zero_gradient(head);
  }
  const double rate = head.dropout_rate;
  const double keep_scale = 1.0 / (1.0 - rate);
  const double inv_count = 1.0 / static_cast<double>(batch.size() * mc_samples);

  std::vector<std::vector<double>> prompt_proj(classes, std::vector<double>(hidden));
  std::vector<double> item_proj(hidden);
  std::vector<double> pre(classes * hidden);
  std::vector<double> mask(classes * hidden);
  std::vector<double> act(classes * hidden);
  std::vector<double> scores(classes);
  std::vector<double> item_grad(hidden);
  std::vector<std::vector<double>> prompt_grad(classes, std::vector<double>(hidden));
  std::vector<double> dw1, db1, dw2;
  double db2 = 0.0;

  Scales s_w1, s_b1, s_w2, s_b2;
  if (bayes) {
    s_w1 = scales_of(head.layer1.weight_rho.values());
    s_b1 = scales_of(head.layer1.bias_rho);
    s_w2 = scales_of(head.layer2.weight_rho.values());
    s_b2 = scales_of(head.layer2.bias_rho);
  }

  double nll_sum = 0.0;
  for (std::size_t m = 0; m < mc_samples; ++m) {
    Draw d;
    fill_draw(head.layer1.weight_mean.values(), bayes ? &s_w1 : nullptr, noise, d.w1, d.e_w1);
    fill_draw(head.layer1.bias_mean, bayes ? &s_b1 : nullptr, noise, d.b1, d.e_b1);
    fill_draw(head.layer2.weight_mean.values(), bayes ? &s_w2 : nullptr, noise, d.w2, d.e_w2);
    fill_draw(head.layer2.bias_mean, bayes ? &s_b2 : nullptr, noise, d.b2, d.e_b2);
    for (std::size_t k = 0; k < classes; ++k) {
      for (std::size_t j = 0; j < hidden; ++j) {
        prompt_proj[k][j] = dot(d.w1.data() + j * in, prompt_in[k].data(), in);
      }
    }
    if (grad != nullptr) {
      dw1.assign(hidden * in, 0.0);
      db1.assign(hidden, 0.0);
      dw2.assign(hidden, 0.0);
      db2 = 0.0;
      for (auto& g : prompt_grad) std::fill(g.begin(), g.end(), 0.0);
    }

    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& x = item_in[i];
      for (std::size_t j = 0; j < hidden; ++j) {
        item_proj[j] = dot(d.w1.data() + j * in, x.data(), in);
      }
      for (std::size_t k = 0; k < classes; ++k) {
        double s = d.b2[0];
        for (std::size_t j = 0; j < hidden; ++j) {
          const std::size_t at = k * hidden + j;
          pre[at] = prompt_proj[k][j] + item_proj[j] + d.b1[j];
          mask[at] = noise.uniform() < rate ? 0.0 : keep_scale;
          act[at] = relu(pre[at]) * mask[at];
          s += d.w2[j] * act[at];
        }
        scores[k] = s;
      }
      const double peak = *std::max_element(scores.begin(), scores.end());
      double z = 0.0;
      for (double s : scores) z += std::exp(s - peak);
      const double log_z = peak + std::log(z);
      const std::size_t y = class_index(batch[i].label);
      nll_sum += log_z - scores[y];

      if (grad == nullptr) continue;
      std::fill(item_grad.begin(), item_grad.end(), 0.0);
      for (std::size_t k = 0; k < classes; ++k) {
        const double p = std::exp(scores[k] - log_z);
        const double gs = (p - (k == y ? 1.0 : 0.0)) * inv_count;
        db2 += gs;
        for (std::size_t j = 0; j < hidden; ++j) {
          const std::size_t at = k * hidden + j;
          dw2[j] += gs * act[at];
          const double gh = pre[at] > 0.0 ? gs * d.w2[j] * mask[at] : 0.0;
          db1[j] += gh;
          prompt_grad[k][j] += gh;
          item_grad[j] += gh;
        }
      }
      for (std::size_t j = 0; j < hidden; ++j) {
        const double g = item_grad[j];
        if (g == 0.0) continue;
        double* row = dw1.data() + j * in;
        for (std::size_t c = 0; c < in; ++c) row[c] += g * x[c];
      }
    }

    if (grad == nullptr) continue;
    for (std::size_t k = 0; k < classes; ++k) {
      for (std::size_t j = 0; j < hidden; ++j) {
        const double g = prompt_grad[k][j];
        if (g == 0.0) continue;
        double* row = dw1.data() + j * in;
        for (std::size_t c = 0; c < in; ++c) row[c] += g * prompt_in[k][c];
      }
    }
    // Chain rule through w = mu + softplus(rho) * eps.
    auto push = [&](const std::vector<double>& dw, const std::vector<double>& eps,
                    const Scales& scale, std::vector<double>& g_mean, std::vector<double>& g_rho) {
      for (std::size_t n = 0; n < dw.size(); ++n) {
        g_mean[n] += dw[n];
        if (bayes) g_rho[n] += dw[n] * eps[n] * scale.dsigma[n];
      }
    };
    const std::vector<double> db2v{db2};
    push(dw1, d.e_w1, s_w1, grad->layer1.weight_mean, grad->layer1.weight_rho);
    push(db1, d.e_b1, s_b1, grad->layer1.bias_mean, grad->layer1.bias_rho);
    push(dw2, d.e_w2, s_w2, grad->layer2.weight_mean, grad->layer2.weight_rho);
    push(db2v, d.e_b2, s_b2, grad->layer2.bias_mean, grad->layer2.bias_rho);
  }

  ElboTerms terms;
  terms.nll = nll_sum * inv_count;
  double kl = 0.0;
  if (bayes) {
    auto kl_part = [&](std::span<const float> mean, const Scales& scale,
                       std::vector<double>* g_mean, std::vector<double>* g_rho) {
      for (std::size_t n = 0; n < mean.size(); ++n) {
        const double sigma = scale.sigma[n];
        kl += kl_gaussian(mean[n], sigma);
        if (g_mean == nullptr) continue;
        (*g_mean)[n] += kl_weight * mean[n];
        (*g_rho)[n] += kl_weight * (sigma - 1.0 / sigma) * scale.dsigma[n];
      }
    };
    const bool g = grad != nullptr;
    kl_part(head.layer1.weight_mean.values(), s_w1, g ? &grad->layer1.weight_mean : nullptr,
            g ? &grad->layer1.weight_rho : nullptr);
    kl_part(head.layer1.bias_mean, s_b1, g ? &grad->layer1.bias_mean : nullptr,
            g ? &grad->layer1.bias_rho : nullptr);
    kl_part(head.layer2.weight_mean.values(), s_w2, g ? &grad->layer2.weight_mean : nullptr,
            g ? &grad->layer2.weight_rho : nullptr);
    kl_part(head.layer2.bias_mean, s_b2, g ? &grad->layer2.bias_mean : nullptr,
            g ? &grad->layer2.bias_rho : nullptr);
  }
  terms.kl = kl;
  terms.kl_weight = bayes ? kl_weight : 0.0;
  terms.loss = terms.nll + terms.kl_weight * terms.kl;
  return terms;
}

}  // namespace

ElboTerms elbo_loss(std::span<const LabeledFeature> batch, std::span<const FeatureVector> prompts,
                    const HeadParams& head, double kl_weight, std::size_t mc_samples,
                    RngStream noise) {
  return elbo_impl(batch, prompts, head, kl_weight, mc_samples, noise, nullptr);
}

ElboTerms elbo_gradient(std::span<const LabeledFeature> batch,
                        std::span<const FeatureVector> prompts, const HeadParams& head,
                        double kl_weight, std::size_t mc_samples, RngStream noise,
                        HeadGradient& grad) {
  return elbo_impl(batch, prompts, head, kl_weight, mc_samples, noise, &grad);
}

AdamState::AdamState(const HeadParams& head, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(zero_gradient(head)), v_(zero_gradient(head)) {}

void AdamState::apply(HeadParams& head, const HeadGradient& grad, double learning_rate) {
  struct Slot {
    const char* name;
    std::span<float> param;
    const std::vector<double>* g;
    std::vector<double>* m;
    std::vector<double>* v;
  };
  const Slot slots[] = {
      {"layer1.weight_mean", head.layer1.weight_mean.values(), &grad.layer1.weight_mean,
       &m_.layer1.weight_mean, &v_.layer1.weight_mean},
      {"layer1.weight_rho", head.layer1.weight_rho.values(), &grad.layer1.weight_rho,
       &m_.layer1.weight_rho, &v_.layer1.weight_rho},
      {"layer1.bias_mean", head.layer1.bias_mean, &grad.layer1.bias_mean, &m_.layer1.bias_mean,
       &v_.layer1.bias_mean},
      {"layer1.bias_rho", head.layer1.bias_rho, &grad.layer1.bias_rho, &m_.layer1.bias_rho,
       &v_.layer1.bias_rho},
      {"layer2.weight_mean", head.layer2.weight_mean.values(), &grad.layer2.weight_mean,
       &m_.layer2.weight_mean, &v_.layer2.weight_mean},
      {"layer2.weight_rho", head.layer2.weight_rho.values(), &grad.layer2.weight_rho,
       &m_.layer2.weight_rho, &v_.layer2.weight_rho},
      {"layer2.bias_mean", head.layer2.bias_mean, &grad.layer2.bias_mean, &m_.layer2.bias_mean,
       &v_.layer2.bias_mean},
      {"layer2.bias_rho", head.layer2.bias_rho, &grad.layer2.bias_rho, &m_.layer2.bias_rho,
       &v_.layer2.bias_rho},
  };
  for (const auto& s : slots) {
    if (s.g->size() != s.param.size()) {
      throw ShapeError(std::string("gradient for ") + s.name + " has the wrong size");
    }
    for (std::size_t i = 0; i < s.g->size(); ++i) {
      if (!std::isfinite((*s.g)[i])) {
        throw NumericError(std::string("non-finite gradient for ") + s.name + "[" +
                           std::to_string(i) + "]");
      }
    }
  }
  ++step_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
  for (const auto& s : slots) {
    for (std::size_t i = 0; i < s.param.size(); ++i) {
      const double g = (*s.g)[i];
      double& m = (*s.m)[i];
      double& v = (*s.v)[i];
      m = beta1_ * m + (1.0 - beta1_) * g;
      v = beta2_ * v + (1.0 - beta2_) * g * g;
      const double step = learning_rate * (m / c1) / (std::sqrt(v / c2) + eps_);
      s.param[i] = static_cast<float>(s.param[i] - step);
    }
  }
}

ElboTerms grad_step(HeadParams& head, AdamState& optimizer, std::span<const LabeledFeature> batch,
                    std::span<const FeatureVector> prompts, const TrainConfig& cfg,
                    double kl_weight, RngStream noise) {
  if (!(cfg.learning_rate >= 0.0)) {
    throw ConfigError("learning_rate must be >= 0");
  }
  HeadGradient grad;
  const auto terms =
      elbo_gradient(batch, prompts, head, kl_weight, cfg.mc_train_samples, noise, grad);
  optimizer.apply(head, grad, cfg.learning_rate);
  return terms;
}

std::string_view to_string(StopReason r) {
  return r == StopReason::plateau ? "plateau" : "max-epochs";
}

TrainLog train(HeadParams& head, std::span<const LabeledFeature> train_set,
               std::span<const FeatureVector> prompts, const TrainConfig& cfg) {
  if (train_set.empty()) {
    throw UsageError("cannot train on an empty set; use zero-shot prediction for fraction 0");
  }
  cfg.validate();
  if (cfg.standardize) head.scaler = FeatureScaler::fit(train_set);
  head.validate();

  const std::size_t n = train_set.size();
  const std::size_t num_batches = batches_per_epoch(n, cfg.batch_size);
  const double kl_weight = cfg.kl_scale / static_cast<double>(num_batches);
  const auto base = RngStream::derive(cfg.seed, "train");
  const auto shuffle_base = base.child("shuffle");
  const auto noise_base = base.child("noise");

  AdamState optimizer(head);
  TrainLog log;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<LabeledFeature> batch;
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    auto shuffle_rng = shuffle_base.child(epoch);
    shuffle(order, shuffle_rng);
    EpochRecord rec{epoch, 0.0, 0.0, 0.0};
    for (std::size_t b = 0; b < num_batches; ++b) {
      const std::size_t lo = b * cfg.batch_size;
      const std::size_t hi = std::min(n, lo + cfg.batch_size);
      batch.clear();
      for (std::size_t i = lo; i < hi; ++i) batch.push_back(train_set[order[i]]);
      const auto terms =
          grad_step(head, optimizer, batch, prompts, cfg, kl_weight, noise_base.child(epoch).child(b));
      rec.loss += terms.loss;
      rec.nll += terms.nll;
      rec.kl += terms.kl;
    }
    const double denom = static_cast<double>(num_batches);
    rec.loss /= denom;
    rec.nll /= denom;
    rec.kl /= denom;
    if (!std::isfinite(rec.loss)) {
      throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
    }
    log.epochs.push_back(rec);

    if (rec.loss < best - cfg.min_improvement) {
      best = rec.loss;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      log.stop_reason = StopReason::plateau;
      break;
    }
  }
  return log;
}

std::string train_log_csv(const TrainLog& log) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,loss,nll,kl\n";
  for (const auto& e : log.epochs) {
    out << e.epoch << ',' << e.loss << ',' << e.nll << ',' << e.kl << '\n';
  }
  return out.str();
}

void write_train_log(const std::filesystem::path& path, const TrainLog& log) {
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) {
    throw IoError("cannot open training log for writing: " + path.string());
  }
  file << train_log_csv(log);
  if (!file) {
    throw IoError("failed writing training log: " + path.string());
  }
}

}  // namespace fsc
