#include <benchmark/benchmark.h>

#include "fsc/classifier.hpp"
#include "fsc/encoders.hpp"
#include "fsc/numerics.hpp"
#include "fsc/training.hpp"

namespace {

using namespace fsc;

Matrix random_matrix(std::size_t r, std::size_t c, RngStream& rng) {
  Matrix m(r, c);
  for (float& v : m.values()) v = static_cast<float>(gaussian(rng));
  return m;
}

FeatureVector random_feature(std::size_t n, RngStream& rng) {
  FeatureVector f;
  f.values.resize(n);
  for (float& v : f.values) v = static_cast<float>(gaussian(rng));
  return f;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  RngStream rng(1);
  const auto a = random_matrix(n, n, rng);
  const auto b = random_matrix(n, n, rng);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(192)->Arg(768);

void BM_EncodeImageDesk(benchmark::State& state) {
  const auto params = init_frozen_params(EncoderConfig::desk_profile(), 1);
  GrayImage img(64, 64);
  RngStream rng(2);
  for (float& p : img.pixels) p = static_cast<float>(rng.uniform());
  for (auto _ : state) benchmark::DoNotOptimize(encode_image(img, params));
}
BENCHMARK(BM_EncodeImageDesk)->Unit(benchmark::kMillisecond);

void BM_EncodeText(benchmark::State& state) {
  const auto params = init_frozen_params(EncoderConfig::desk_profile(), 1);
  const auto tokens = tokenize("A picture with cracks", params.config());
  for (auto _ : state) benchmark::DoNotOptimize(encode_text(tokens, params));
}
BENCHMARK(BM_EncodeText)->Unit(benchmark::kMillisecond);

void BM_HeadForward(benchmark::State& state) {
  const auto head = HeadParams::init(512, 64, HeadVariant::bayesian, 0.1f, 3);
  RngStream rng(4);
  const FusedVector c{random_feature(512, rng).values};
  RngStream noise(5);
  for (auto _ : state) benchmark::DoNotOptimize(head_forward(c, head, &noise, false));
}
BENCHMARK(BM_HeadForward);

void BM_PredictBatch(benchmark::State& state) {
  const auto head = HeadParams::init(512, 64, HeadVariant::bayesian, 0.1f, 3);
  RngStream rng(6);
  const std::vector<FeatureVector> prompts{random_feature(512, rng), random_feature(512, rng)};
  std::vector<FeatureVector> images;
  for (int i = 0; i < 256; ++i) images.push_back(random_feature(512, rng));
  const auto mc = static_cast<std::size_t>(state.range(0));
  for (auto _ : state) {
    RngStream noise(7);
    benchmark::DoNotOptimize(predict_batch(images, prompts, head, mc, noise));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(images.size()));
}
BENCHMARK(BM_PredictBatch)->Arg(1)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const auto variant = state.range(0) == 0 ? HeadVariant::bayesian : HeadVariant::deterministic;
  auto head = HeadParams::init(512, 64, variant, 0.1f, 8);
  RngStream rng(9);
  const std::vector<FeatureVector> prompts{random_feature(512, rng), random_feature(512, rng)};
  std::vector<LabeledFeature> batch;
  for (int i = 0; i < 32; ++i) {
    batch.push_back({random_feature(512, rng), i % 2 == 0 ? Label::crack : Label::no_crack});
  }
  TrainConfig cfg;
  AdamState adam(head);
  std::uint64_t step = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(grad_step(head, adam, batch, prompts, cfg, 1e-3, RngStream(step++)));
  }
  state.SetLabel(std::string(to_string(variant)));
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1);

}  // namespace

BENCHMARK_MAIN();
