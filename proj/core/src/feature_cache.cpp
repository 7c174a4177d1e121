#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "fsc/dataio.hpp"
#include "fsc/error.hpp"
#include "fsc/parallel.hpp"

namespace fsc {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'C', 'F'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderSize = 4 + 4 + 4 + 4 + 32;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[at + i])) << (8 * i);
  }
  return v;
}

void put_record(std::string& out, const FeatureVector& f, std::uint8_t label) {
  for (float v : f.values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  out.push_back(static_cast<char>(label));
}

}  // namespace

std::string encode_feature_cache(const FeatureCache& cache) {
  if (cache.dim == 0) throw ShapeError("feature cache dim must be positive");
  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(cache.items.size()));
  put_u32(out, static_cast<std::uint32_t>(cache.dim));
  out.append(reinterpret_cast<const char*>(cache.fingerprint.data()), cache.fingerprint.size());
  out.reserve(out.size() + (cache.items.size() + cache.prompts.size()) * (cache.dim * 4 + 1));
  for (const auto& item : cache.items) {
    if (item.feature.size() != cache.dim) {
      throw ShapeError("feature of length " + std::to_string(item.feature.size()) +
                       " in a cache of dim " + std::to_string(cache.dim));
    }
    put_record(out, item.feature, static_cast<std::uint8_t>(item.label));
  }
  if (cache.prompts.size() > 256u - kPromptLabelBase) {
    throw ShapeError("feature cache holds at most " + std::to_string(256u - kPromptLabelBase) +
                     " prompts");
  }
  for (std::size_t k = 0; k < cache.prompts.size(); ++k) {
    if (cache.prompts[k].size() != cache.dim) {
      throw ShapeError("prompt feature length does not match cache dim");
    }
    put_record(out, cache.prompts[k], static_cast<std::uint8_t>(kPromptLabelBase + k));
  }
  return out;
}

FeatureCache decode_feature_cache(std::string_view bytes, const Fingerprint* expected) {
  auto fail = [](std::size_t offset, const std::string& what) -> ParseError {
    return ParseError("feature cache parse error at byte offset " + std::to_string(offset) + ": " +
                      what);
  };
  if (bytes.size() < kHeaderSize) throw fail(bytes.size(), "truncated header");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw fail(0, "bad magic (expected FSCF)");
  const auto version = get_u32(bytes, 4);
  if (version != kVersion) throw fail(4, "unsupported version " + std::to_string(version));
  const std::size_t count = get_u32(bytes, 8);
  const std::size_t dim = get_u32(bytes, 12);
  if (dim == 0) throw fail(12, "dim must be positive");

  FeatureCache cache;
  cache.dim = dim;
  std::memcpy(cache.fingerprint.data(), bytes.data() + 16, 32);
  if (expected != nullptr && *expected != cache.fingerprint) {
    throw ConfigError("feature cache fingerprint " + to_hex(cache.fingerprint) +
                      " does not match encoder fingerprint " + to_hex(*expected));
  }

  const std::size_t record = dim * 4 + 1;
  const std::size_t body = bytes.size() - kHeaderSize;
  if (body / record < count) {
    throw fail(kHeaderSize + (body / record) * record,
               "truncated: header declares " + std::to_string(count) + " records");
  }
  if (body % record != 0) {
    throw fail(kHeaderSize + (body / record) * record, "trailing partial record");
  }
  const std::size_t total = body / record;

  auto read_vector = [&](std::size_t at) {
    FeatureVector f;
    f.values.resize(dim);
    for (std::size_t d = 0; d < dim; ++d) {
      f.values[d] = std::bit_cast<float>(get_u32(bytes, at + 4 * d));
    }
    return f;
  };
  cache.items.reserve(count);
  for (std::size_t r = 0; r < total; ++r) {
    const std::size_t at = kHeaderSize + r * record;
    const auto label = static_cast<std::uint8_t>(bytes[at + dim * 4]);
    if (r < count) {
      if (label > 1) throw fail(at + dim * 4, "invalid item label " + std::to_string(label));
      cache.items.push_back({read_vector(at), static_cast<Label>(label)});
    } else {
      const std::size_t k = r - count;
      if (label != kPromptLabelBase + k) {
        throw fail(at + dim * 4, "prompt record " + std::to_string(k) + " has label " +
                                     std::to_string(label));
      }
      cache.prompts.push_back(read_vector(at));
    }
  }
  return cache;
}

void write_feature_cache(const std::filesystem::path& path, const FeatureCache& cache) {
  const auto bytes = encode_feature_cache(cache);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open feature cache for writing: " + path.string());
  file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!file) throw IoError("failed writing feature cache: " + path.string());
}

FeatureCache read_feature_cache(const std::filesystem::path& path, const Fingerprint* expected) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open feature cache: " + path.string());
  const std::string bytes(std::istreambuf_iterator<char>(file), {});
  try {
    return decode_feature_cache(bytes, expected);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

FeatureCache build_feature_cache(const DatasetManifest& manifest, const std::filesystem::path& root,
                                 const FrozenEncoderParams& params,
                                 std::span<const std::string> prompts) {
  FeatureCache cache;
  cache.dim = params.config().out_dim;
  cache.fingerprint = params.fingerprint();
  for (const auto& text : prompts) {
    cache.prompts.push_back(encode_text(tokenize(text, params.config()), params));
  }
  cache.items.resize(manifest.records.size());
  parallel_for(manifest.records.size(), [&](std::size_t i) {
    const auto& record = manifest.records[i];
    const auto path = root / record.path;
    if (!std::filesystem::exists(path)) {
      throw IoError("image listed in manifest does not exist: " + path.string());
    }
    cache.items[i] = {encode_image(read_image(path), params), record.label};
  });
  return cache;
}

}  // namespace fsc
