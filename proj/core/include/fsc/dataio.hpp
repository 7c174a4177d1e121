#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fsc/encoders.hpp"
#include "fsc/image.hpp"
#include "fsc/labels.hpp"

namespace fsc {

/// Knobs of the procedural crack generator.
struct GeneratorParams {
  double background_mean = 0.6;
  double background_sd = 0.05;
  double shading_amplitude = 0.05;  // max amplitude of the low-frequency term
  std::size_t min_steps = 40;
  std::size_t max_steps = 200;
  double max_turn = 0.3;  // radians per step
  std::size_t min_width = 1;
  std::size_t max_width = 3;
  double crack_multiplier = 0.3;
};

struct SyntheticSet {
  std::vector<GrayImage> images;
  std::vector<Label> labels;
};

/// count images of size x size; exactly round(crack_fraction * count) carry
/// a crack. Image i depends only on (seed, i), so generation parallelises.
SyntheticSet generate_synthetic(std::size_t count, double crack_fraction, std::uint64_t seed,
                                std::size_t size, const GeneratorParams& params = {});

/// Renders image `index` of a set (the per-image part of generate_synthetic).
GrayImage render_synthetic(bool crack, std::uint64_t seed, std::size_t index, std::size_t size,
                           const GeneratorParams& params = {});

/// Binary PGM (P5, maxval 255). Write rounds v*255; read divides by 255.
void write_image(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_image(const std::filesystem::path& path);
std::string encode_pgm(const GrayImage& image);
GrayImage decode_pgm(std::string_view bytes);

struct ManifestRecord {
  std::string path;  // relative to the manifest's directory
  Label label = Label::no_crack;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  std::optional<std::uint64_t> seed;
  std::optional<GeneratorParams> generator;
};

/// CSV with header `path,label`, LF line endings.
std::string manifest_csv(const DatasetManifest& manifest);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
/// Parses the CSV; paths must be unique. Files are checked when loaded.
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Seeded stratified 50/50 split; records keep manifest order.
std::pair<DatasetManifest, DatasetManifest> split_train_test(const DatasetManifest& manifest,
                                                             std::uint64_t seed);

inline constexpr std::uint8_t kPromptLabelBase = 254;

/// Encoded features for a set of images plus the encoded class prompts
/// (prompts[k] describes class k).
struct FeatureCache {
  std::size_t dim = 0;
  std::vector<LabeledFeature> items;
  std::vector<FeatureVector> prompts;
  Fingerprint fingerprint{};
};

/// Binary layout, little-endian:
///   "FSCF" | u32 version | u32 count | u32 dim | 32-byte fingerprint |
///   count x (dim f32 + u8 label) | prompt records (dim f32 + u8 254+k).
std::string encode_feature_cache(const FeatureCache& cache);
FeatureCache decode_feature_cache(std::string_view bytes,
                                  const Fingerprint* expected_fingerprint = nullptr);
void write_feature_cache(const std::filesystem::path& path, const FeatureCache& cache);
FeatureCache read_feature_cache(const std::filesystem::path& path,
                                const Fingerprint* expected_fingerprint = nullptr);

/// Encodes every manifest image (paths resolved against root) and every
/// prompt text once.
FeatureCache build_feature_cache(const DatasetManifest& manifest, const std::filesystem::path& root,
                                 const FrozenEncoderParams& params,
                                 std::span<const std::string> prompts);

/// Prompt texts in class-index order.
std::vector<std::string> default_prompts();

}  // namespace fsc
