#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fsc/image.hpp"
#include "fsc/numerics.hpp"

namespace fsc {

/// Shapes of the frozen dual encoder. Defaults give the ViT-B/32-shaped
/// image tower (224 px, 32 px patches, 768 wide, 12 blocks) and a 512-long
/// shared feature.
struct EncoderConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 32;
  std::size_t channels = 1;
  std::size_t embed_dim = 768;
  std::size_t depth = 12;
  std::size_t heads = 8;
  std::size_t mlp_ratio = 4;
  std::size_t out_dim = 512;
  std::size_t text_vocab = 258;
  std::size_t text_len = 32;
  std::size_t text_dim = 128;
  std::size_t text_depth = 2;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t patch_count() const { return grid() * grid(); }
  std::size_t patch_pixels() const { return channels * patch_size * patch_size; }
  /// Patches plus the class token.
  std::size_t sequence_length() const { return patch_count() + 1; }

  /// Throws ConfigError when sizes do not divide or are zero.
  void validate() const;

  /// The full-size profile (same as the defaults).
  static EncoderConfig paper_profile();
  /// 64 px images, 16 px patches, 2 blocks: the workstation-scale profile.
  static EncoderConfig desk_profile();

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct LayerNormParams {
  std::vector<float> gain;
  std::vector<float> bias;
};

/// Pre-norm transformer block: x += attn(ln1(x)); x += mlp(ln2(x)).
struct TransformerBlockParams {
  LayerNormParams ln1;
  Matrix qkv_weight;  // width x 3*width
  std::vector<float> qkv_bias;
  Matrix out_weight;  // width x width
  std::vector<float> out_bias;
  LayerNormParams ln2;
  Matrix fc1_weight;  // width x mlp_ratio*width
  std::vector<float> fc1_bias;
  Matrix fc2_weight;  // mlp_ratio*width x width
  std::vector<float> fc2_bias;
};

struct ImageTowerParams {
  Matrix patch_proj;  // patch_pixels x embed_dim
  std::vector<float> class_token;
  Matrix pos_embed;  // sequence_length x embed_dim
  std::vector<TransformerBlockParams> blocks;
  LayerNormParams ln_post;
  Matrix proj;  // embed_dim x out_dim
};

struct TextTowerParams {
  Matrix token_embed;  // text_vocab x text_dim
  Matrix pos_embed;    // text_len x text_dim
  std::vector<TransformerBlockParams> blocks;
  LayerNormParams ln_final;
  Matrix proj;  // text_dim x out_dim
};

using Fingerprint = std::array<std::uint8_t, 32>;

std::string to_hex(const Fingerprint& fp);
Fingerprint fingerprint_from_hex(std::string_view hex);

/// Frozen weights of both encoders. Only const access is exposed, so no
/// training code path can modify them; the fingerprint (SHA-256 over config
/// and every tensor) is computed once at construction.
class FrozenEncoderParams {
 public:
  FrozenEncoderParams(EncoderConfig config, std::optional<std::uint64_t> seed,
                      ImageTowerParams image, TextTowerParams text);

  const EncoderConfig& config() const { return config_; }
  /// Seed the weights were drawn from; empty when loaded from a weight file.
  std::optional<std::uint64_t> seed() const { return seed_; }
  const ImageTowerParams& image() const { return image_; }
  const TextTowerParams& text() const { return text_; }
  const Fingerprint& fingerprint() const { return fingerprint_; }

  /// Recomputes the SHA-256 over the current tensors (for frozen-contract
  /// checks); equals fingerprint() as long as nothing mutated the weights.
  Fingerprint checksum() const;

 private:
  EncoderConfig config_;
  std::optional<std::uint64_t> seed_;
  ImageTowerParams image_;
  TextTowerParams text_;
  Fingerprint fingerprint_;
};

/// Projection weights ~ N(0, 1/sqrt(fan_in)); token/positional embeddings
/// and the class token ~ N(0, 1); layer-norm gains 1, biases 0. Each tensor
/// draws from its own (seed, name) stream, so the result is deterministic in
/// (config, seed).
FrozenEncoderParams init_frozen_params(const EncoderConfig& config, std::uint64_t seed);

/// Binary weight container: "FSEW", u32 version, then per tensor
/// u32 name length, name bytes, u32 rank, u32 dims, little-endian f32 data.
void save_weights(const std::filesystem::path& path, const FrozenEncoderParams& params);
FrozenEncoderParams load_weights(const std::filesystem::path& path, const EncoderConfig& config);

inline constexpr std::int32_t kTokenStart = 256;
inline constexpr std::int32_t kTokenEnd = 257;
inline constexpr std::int32_t kTokenPad = 0;

/// Byte-level tokens: start marker, UTF-8 bytes, end marker, padded to
/// text_len. length counts the non-pad positions.
struct TokenSequence {
  std::vector<std::int32_t> ids;
  std::size_t length = 0;

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

TokenSequence tokenize(std::string_view text, const EncoderConfig& config);

struct FeatureVector {
  std::vector<float> values;

  std::size_t size() const { return values.size(); }
  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Per-stage shapes recorded during a forward pass.
struct ShapeTrace {
  struct Stage {
    std::string name;
    std::size_t rows;
    std::size_t cols;
  };
  std::vector<Stage> stages;

  void record(std::string name, std::size_t rows, std::size_t cols) {
    stages.push_back({std::move(name), rows, cols});
  }
};

/// Embedding + positions, text_depth blocks with pad keys masked, final
/// layer norm, mean-pool over non-pad positions, projection to out_dim.
FeatureVector encode_text(const TokenSequence& tokens, const FrozenEncoderParams& params,
                          ShapeTrace* trace = nullptr);

/// One row per patch, patches in row-major order, each patch flattened
/// row-major.
Matrix patchify(const GrayImage& image, const EncoderConfig& config);

/// patchify, patch projection, class token + positions, depth blocks,
/// layer norm of the class-token output, projection to out_dim.
FeatureVector encode_image(const GrayImage& image, const FrozenEncoderParams& params,
                           ShapeTrace* trace = nullptr);

/// Runs one transformer block in place. valid_len masks keys at positions
/// >= valid_len (0 means no masking).
void transformer_block(Matrix& x, const TransformerBlockParams& block, std::size_t heads,
                       std::size_t valid_len = 0);

}  // namespace fsc
