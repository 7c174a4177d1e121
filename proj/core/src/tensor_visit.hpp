#pragma once

// Canonical tensor order shared by the fingerprint and the weight file.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fsc/encoders.hpp"

namespace fsc::detail {

// fn(name, dims, values span) for every tensor. Works with const and
// non-const parameter structs.
template <typename Block, typename Fn>
void visit_block(Block& b, const std::string& prefix, Fn&& fn) {
  auto vec = [&](auto& v, const char* name) {
    fn(prefix + name, std::vector<std::size_t>{v.size()}, std::span(v));
  };
  auto mat = [&](auto& m, const char* name) {
    fn(prefix + name, std::vector<std::size_t>{m.rows(), m.cols()}, m.values());
  };
  vec(b.ln1.gain, "ln1.gain");
  vec(b.ln1.bias, "ln1.bias");
  mat(b.qkv_weight, "attn.qkv.weight");
  vec(b.qkv_bias, "attn.qkv.bias");
  mat(b.out_weight, "attn.out.weight");
  vec(b.out_bias, "attn.out.bias");
  vec(b.ln2.gain, "ln2.gain");
  vec(b.ln2.bias, "ln2.bias");
  mat(b.fc1_weight, "mlp.fc1.weight");
  vec(b.fc1_bias, "mlp.fc1.bias");
  mat(b.fc2_weight, "mlp.fc2.weight");
  vec(b.fc2_bias, "mlp.fc2.bias");
}

template <typename Image, typename Text, typename Fn>
void visit_tensors(Image& image, Text& text, Fn&& fn) {
  auto vec = [&](auto& v, const std::string& name) {
    fn(name, std::vector<std::size_t>{v.size()}, std::span(v));
  };
  auto mat = [&](auto& m, const std::string& name) {
    fn(name, std::vector<std::size_t>{m.rows(), m.cols()}, m.values());
  };
  mat(image.patch_proj, "visual.patch_proj");
  vec(image.class_token, "visual.class_token");
  mat(image.pos_embed, "visual.pos_embed");
  for (std::size_t i = 0; i < image.blocks.size(); ++i) {
    visit_block(image.blocks[i], "visual.blocks." + std::to_string(i) + ".", fn);
  }
  vec(image.ln_post.gain, "visual.ln_post.gain");
  vec(image.ln_post.bias, "visual.ln_post.bias");
  mat(image.proj, "visual.proj");

  mat(text.token_embed, "text.token_embed");
  mat(text.pos_embed, "text.pos_embed");
  for (std::size_t i = 0; i < text.blocks.size(); ++i) {
    visit_block(text.blocks[i], "text.blocks." + std::to_string(i) + ".", fn);
  }
  vec(text.ln_final.gain, "text.ln_final.gain");
  vec(text.ln_final.bias, "text.ln_final.bias");
  mat(text.proj, "text.proj");
}

/// Allocates every tensor at the shape the config implies (zero-filled).
ImageTowerParams shaped_image_tower(const EncoderConfig& config);
TextTowerParams shaped_text_tower(const EncoderConfig& config);

Fingerprint compute_fingerprint(const EncoderConfig& config, const ImageTowerParams& image,
                                const TextTowerParams& text);

}  // namespace fsc::detail
