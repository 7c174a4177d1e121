#include "fsc/encoders.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <memory>

#include <openssl/evp.h>

#include "fsc/error.hpp"
#include "tensor_visit.hpp"

namespace fsc {

static_assert(std::endian::native == std::endian::little,
              "weight and cache formats assume a little-endian host");

void EncoderConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) {
      throw ConfigError("invalid encoder config: " + what);
    }
  };
  require(image_size > 0 && patch_size > 0, "image_size and patch_size must be positive");
  require(image_size % patch_size == 0, "image_size " + std::to_string(image_size) +
                                            " not divisible by patch_size " +
                                            std::to_string(patch_size));
  require(channels == 1, "only single-channel images are supported");
  require(embed_dim > 0 && heads > 0 && embed_dim % heads == 0,
          "embed_dim " + std::to_string(embed_dim) + " not divisible by heads " +
              std::to_string(heads));
  require(text_dim > 0 && text_dim % heads == 0,
          "text_dim " + std::to_string(text_dim) + " not divisible by heads " +
              std::to_string(heads));
  require(depth > 0 && text_depth > 0, "depth and text_depth must be positive");
  require(mlp_ratio > 0 && out_dim > 0, "mlp_ratio and out_dim must be positive");
  require(text_vocab == 258, "text_vocab must be 258 (256 bytes + start/end)");
  require(text_len >= 3, "text_len must leave room for start/end markers");
}

EncoderConfig EncoderConfig::paper_profile() { return {}; }

EncoderConfig EncoderConfig::desk_profile() {
  EncoderConfig c;
  c.image_size = 64;
  c.patch_size = 16;
  c.embed_dim = 192;
  c.depth = 2;
  return c;
}

std::string to_hex(const Fingerprint& fp) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(fp.size() * 2);
  for (auto b : fp) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0xF]);
  }
  return out;
}

Fingerprint fingerprint_from_hex(std::string_view hex) {
  if (hex.size() != 64) {
    throw ParseError("fingerprint must be 64 hex digits, got " + std::to_string(hex.size()));
  }
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    throw ParseError(std::string("invalid hex digit '") + c + "' in fingerprint");
  };
  Fingerprint fp{};
  for (std::size_t i = 0; i < fp.size(); ++i) {
    fp[i] = static_cast<std::uint8_t>(nibble(hex[2 * i]) * 16 + nibble(hex[2 * i + 1]));
  }
  return fp;
}

namespace detail {

namespace {

TransformerBlockParams shaped_block(std::size_t width, std::size_t mlp_ratio) {
  TransformerBlockParams b;
  b.ln1 = {std::vector<float>(width, 1.0f), std::vector<float>(width, 0.0f)};
  b.qkv_weight = Matrix(width, 3 * width);
  b.qkv_bias.assign(3 * width, 0.0f);
  b.out_weight = Matrix(width, width);
  b.out_bias.assign(width, 0.0f);
  b.ln2 = {std::vector<float>(width, 1.0f), std::vector<float>(width, 0.0f)};
  b.fc1_weight = Matrix(width, mlp_ratio * width);
  b.fc1_bias.assign(mlp_ratio * width, 0.0f);
  b.fc2_weight = Matrix(mlp_ratio * width, width);
  b.fc2_bias.assign(width, 0.0f);
  return b;
}

struct EvpDigest {
  EvpDigest() : ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
      throw Error("SHA-256 initialisation failed");
    }
  }
  void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx.get(), data, n); }
  void update_u64(std::uint64_t v) { update(&v, sizeof v); }
  Fingerprint finish() {
    Fingerprint fp{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), fp.data(), &len);
    return fp;
  }
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx;
};

}  // namespace

ImageTowerParams shaped_image_tower(const EncoderConfig& c) {
  ImageTowerParams p;
  p.patch_proj = Matrix(c.patch_pixels(), c.embed_dim);
  p.class_token.assign(c.embed_dim, 0.0f);
  p.pos_embed = Matrix(c.sequence_length(), c.embed_dim);
  for (std::size_t i = 0; i < c.depth; ++i) {
    p.blocks.push_back(shaped_block(c.embed_dim, c.mlp_ratio));
  }
  p.ln_post = {std::vector<float>(c.embed_dim, 1.0f), std::vector<float>(c.embed_dim, 0.0f)};
  p.proj = Matrix(c.embed_dim, c.out_dim);
  return p;
}

TextTowerParams shaped_text_tower(const EncoderConfig& c) {
  TextTowerParams p;
  p.token_embed = Matrix(c.text_vocab, c.text_dim);
  p.pos_embed = Matrix(c.text_len, c.text_dim);
  for (std::size_t i = 0; i < c.text_depth; ++i) {
    p.blocks.push_back(shaped_block(c.text_dim, c.mlp_ratio));
  }
  p.ln_final = {std::vector<float>(c.text_dim, 1.0f), std::vector<float>(c.text_dim, 0.0f)};
  p.proj = Matrix(c.text_dim, c.out_dim);
  return p;
}

Fingerprint compute_fingerprint(const EncoderConfig& c, const ImageTowerParams& image,
                                const TextTowerParams& text) {
  EvpDigest digest;
  digest.update("FSC-ENCODER-1", 13);
  for (std::size_t v : {c.image_size, c.patch_size, c.channels, c.embed_dim, c.depth, c.heads,
                        c.mlp_ratio, c.out_dim, c.text_vocab, c.text_len, c.text_dim,
                        c.text_depth}) {
    digest.update_u64(v);
  }
  visit_tensors(image, text, [&](const std::string& name, const std::vector<std::size_t>& dims,
                                 auto values) {
    digest.update_u64(name.size());
    digest.update(name.data(), name.size());
    for (auto d : dims) {
      digest.update_u64(d);
    }
    digest.update(values.data(), values.size() * sizeof(float));
  });
  return digest.finish();
}

}  // namespace detail

FrozenEncoderParams::FrozenEncoderParams(EncoderConfig config, std::optional<std::uint64_t> seed,
                                         ImageTowerParams image, TextTowerParams text)
    : config_(config), seed_(seed), image_(std::move(image)), text_(std::move(text)) {
  config_.validate();
  fingerprint_ = detail::compute_fingerprint(config_, image_, text_);
}

Fingerprint FrozenEncoderParams::checksum() const {
  return detail::compute_fingerprint(config_, image_, text_);
}

FrozenEncoderParams init_frozen_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  auto image = detail::shaped_image_tower(config);
  auto text = detail::shaped_text_tower(config);
  // Every tensor gets its own stream keyed by name, so adding or reordering
  // tensors never shifts the draws of the others.
  detail::visit_tensors(image, text, [&](const std::string& name,
                                         const std::vector<std::size_t>& dims,
                                         std::span<float> values) {
    const bool is_norm = name.find(".ln") != std::string::npos;
    const bool is_bias = name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
    if (is_norm || is_bias) {
      return;  // gains 1 / biases 0 from shaping
    }
    const bool is_embedding = name.find("embed") != std::string::npos ||
                              name.find("class_token") != std::string::npos;
    // Projections: fan_in is the input width (rows). Embedding tables and
    // the class token are lookups of a one-hot input, so fan_in is 1.
    const std::size_t fan = is_embedding ? 1 : dims.front();
    const double scale = 1.0 / std::sqrt(static_cast<double>(fan));
    auto rng = RngStream::derive(seed, name);
    for (float& v : values) {
      v = static_cast<float>(scale * gaussian(rng));
    }
  });
  return FrozenEncoderParams(config, seed, std::move(image), std::move(text));
}

TokenSequence tokenize(std::string_view text, const EncoderConfig& config) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) {
    throw InputError("cannot tokenize empty text");
  }
  const auto last = text.find_last_not_of(" \t\r\n");
  text = text.substr(first, last - first + 1);

  const std::size_t room = config.text_len - 2;
  const std::size_t n = std::min(text.size(), room);
  TokenSequence seq;
  seq.ids.assign(config.text_len, kTokenPad);
  seq.ids[0] = kTokenStart;
  for (std::size_t i = 0; i < n; ++i) {
    seq.ids[i + 1] = static_cast<unsigned char>(text[i]);
  }
  seq.ids[n + 1] = kTokenEnd;
  seq.length = n + 2;
  return seq;
}

void transformer_block(Matrix& x, const TransformerBlockParams& block, std::size_t heads,
                       std::size_t valid_len) {
  const std::size_t seq = x.rows();
  const std::size_t width = x.cols();
  const std::size_t head_dim = width / heads;
  const std::size_t keys = valid_len == 0 ? seq : valid_len;
  const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

  const Matrix h = layer_norm_rows(x, block.ln1.gain, block.ln1.bias);
  const Matrix qkv = linear(h, block.qkv_weight, block.qkv_bias);

  Matrix mixed(seq, width);
  std::vector<double> scores(keys);
  std::vector<double> acc(head_dim);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const std::size_t q_off = hd * head_dim;
    const std::size_t k_off = width + hd * head_dim;
    const std::size_t v_off = 2 * width + hd * head_dim;
    for (std::size_t i = 0; i < seq; ++i) {
      const float* q = qkv.row(i).data() + q_off;
      for (std::size_t j = 0; j < keys; ++j) {
        const float* k = qkv.row(j).data() + k_off;
        double dot = 0.0;
        for (std::size_t c = 0; c < head_dim; ++c) {
          dot += static_cast<double>(q[c]) * k[c];
        }
        scores[j] = dot * scale;
      }
      const auto weights = softmax(scores);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t j = 0; j < keys; ++j) {
        const float* v = qkv.row(j).data() + v_off;
        for (std::size_t c = 0; c < head_dim; ++c) {
          acc[c] += weights[j] * v[c];
        }
      }
      float* out = mixed.row(i).data() + q_off;
      for (std::size_t c = 0; c < head_dim; ++c) {
        out[c] = static_cast<float>(acc[c]);
      }
    }
  }
  const Matrix attn = linear(mixed, block.out_weight, block.out_bias);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x.values()[i] += attn.values()[i];
  }

  const Matrix h2 = layer_norm_rows(x, block.ln2.gain, block.ln2.bias);
  Matrix hidden = linear(h2, block.fc1_weight, block.fc1_bias);
  for (float& v : hidden.values()) {
    v = static_cast<float>(gelu(v));
  }
  const Matrix mlp = linear(hidden, block.fc2_weight, block.fc2_bias);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x.values()[i] += mlp.values()[i];
  }
}

FeatureVector encode_text(const TokenSequence& tokens, const FrozenEncoderParams& params,
                          ShapeTrace* trace) {
  const auto& c = params.config();
  const auto& tower = params.text();
  if (tokens.ids.size() != c.text_len) {
    throw InputError("token sequence of length " + std::to_string(tokens.ids.size()) +
                     ", expected " + std::to_string(c.text_len));
  }
  if (tokens.length == 0 || tokens.length > c.text_len) {
    throw InputError("token sequence has invalid non-pad length " + std::to_string(tokens.length));
  }
  Matrix x(c.text_len, c.text_dim);
  for (std::size_t i = 0; i < c.text_len; ++i) {
    const auto id = tokens.ids[i];
    if (id < 0 || static_cast<std::size_t>(id) >= c.text_vocab) {
      throw InputError("token id " + std::to_string(id) + " out of range [0, " +
                       std::to_string(c.text_vocab) + ")");
    }
    const auto emb = tower.token_embed.row(static_cast<std::size_t>(id));
    const auto pos = tower.pos_embed.row(i);
    auto dst = x.row(i);
    for (std::size_t d = 0; d < c.text_dim; ++d) {
      dst[d] = emb[d] + pos[d];
    }
  }
  if (trace) trace->record("text.tokens", x.rows(), x.cols());
  for (std::size_t b = 0; b < tower.blocks.size(); ++b) {
    transformer_block(x, tower.blocks[b], c.heads, tokens.length);
    if (trace) trace->record("text.block." + std::to_string(b), x.rows(), x.cols());
  }
  const Matrix normed = layer_norm_rows(x, tower.ln_final.gain, tower.ln_final.bias);
  std::vector<double> pooled(c.text_dim, 0.0);
  for (std::size_t i = 0; i < tokens.length; ++i) {
    const auto r = normed.row(i);
    for (std::size_t d = 0; d < c.text_dim; ++d) {
      pooled[d] += r[d];
    }
  }
  Matrix pooled_row(1, c.text_dim);
  for (std::size_t d = 0; d < c.text_dim; ++d) {
    pooled_row(0, d) = static_cast<float>(pooled[d] / static_cast<double>(tokens.length));
  }
  if (trace) trace->record("text.pooled", pooled_row.rows(), pooled_row.cols());
  Matrix feature = matmul(pooled_row, tower.proj);
  if (trace) trace->record("text.feature", feature.rows(), feature.cols());
  check_finite(feature.values(), "text feature");
  return {std::vector<float>(feature.values().begin(), feature.values().end())};
}

Matrix patchify(const GrayImage& image, const EncoderConfig& config) {
  if (image.width != config.image_size || image.height != config.image_size ||
      image.pixels.size() != image.width * image.height) {
    throw ShapeError("image is " + std::to_string(image.width) + "x" +
                     std::to_string(image.height) + ", encoder expects " +
                     std::to_string(config.image_size) + "x" + std::to_string(config.image_size));
  }
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    const float v = image.pixels[i];
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw InputError("pixel " + std::to_string(i) + " outside [0,1]: " + std::to_string(v));
    }
  }
  const std::size_t p = config.patch_size;
  const std::size_t grid = config.grid();
  Matrix patches(config.patch_count(), p * p);
  for (std::size_t gy = 0; gy < grid; ++gy) {
    for (std::size_t gx = 0; gx < grid; ++gx) {
      auto row = patches.row(gy * grid + gx);
      for (std::size_t y = 0; y < p; ++y) {
        const float* src = image.pixels.data() + (gy * p + y) * image.width + gx * p;
        std::copy(src, src + p, row.begin() + static_cast<std::ptrdiff_t>(y * p));
      }
    }
  }
  return patches;
}

FeatureVector encode_image(const GrayImage& image, const FrozenEncoderParams& params,
                           ShapeTrace* trace) {
  const auto& c = params.config();
  const auto& tower = params.image();
  if (trace) trace->record("image", image.height, image.width);
  const Matrix patches = patchify(image, c);
  if (trace) trace->record("patches", patches.rows(), patches.cols());
  const Matrix embedded = matmul(patches, tower.patch_proj);
  if (trace) trace->record("patch_embed", embedded.rows(), embedded.cols());

  Matrix x(c.sequence_length(), c.embed_dim);
  std::copy(tower.class_token.begin(), tower.class_token.end(), x.row(0).begin());
  for (std::size_t i = 0; i < embedded.rows(); ++i) {
    std::copy(embedded.row(i).begin(), embedded.row(i).end(), x.row(i + 1).begin());
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    x.values()[i] += tower.pos_embed.values()[i];
  }
  if (trace) trace->record("tokens", x.rows(), x.cols());

  for (std::size_t b = 0; b < tower.blocks.size(); ++b) {
    transformer_block(x, tower.blocks[b], c.heads);
    if (trace) trace->record("block." + std::to_string(b), x.rows(), x.cols());
  }
  const auto cls = layer_norm(x.row(0), tower.ln_post.gain, tower.ln_post.bias);
  Matrix cls_row(1, c.embed_dim, cls);
  if (trace) trace->record("class_out", cls_row.rows(), cls_row.cols());
  Matrix feature = matmul(cls_row, tower.proj);
  if (trace) trace->record("feature", feature.rows(), feature.cols());
  check_finite(feature.values(), "image feature");
  return {std::vector<float>(feature.values().begin(), feature.values().end())};
}

}  // namespace fsc
