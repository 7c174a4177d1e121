#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "fsc/encoders.hpp"
#include "fsc/error.hpp"
#include "tensor_visit.hpp"

namespace fsc {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'E', 'W'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  bool done() const { return pos_ == bytes_.size(); }
  std::size_t offset() const { return pos_; }

  const char* take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw ParseError("weight file truncated reading " + std::string(what) + " at byte offset " +
                       std::to_string(pos_));
    }
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::uint32_t u32(const char* what) {
    const auto* p = reinterpret_cast<const unsigned char*>(take(4, what));
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }

 private:
  std::string bytes_;
  std::size_t pos_ = 0;
};

struct RawTensor {
  std::vector<std::size_t> dims;
  std::vector<float> values;
};

}  // namespace

void save_weights(const std::filesystem::path& path, const FrozenEncoderParams& params) {
  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  detail::visit_tensors(params.image(), params.text(),
                        [&](const std::string& name, const std::vector<std::size_t>& dims,
                            std::span<const float> values) {
                          put_u32(out, static_cast<std::uint32_t>(name.size()));
                          out += name;
                          put_u32(out, static_cast<std::uint32_t>(dims.size()));
                          for (auto d : dims) {
                            put_u32(out, static_cast<std::uint32_t>(d));
                          }
                          const auto* bytes = reinterpret_cast<const char*>(values.data());
                          out.append(bytes, values.size() * sizeof(float));
                        });
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) {
    throw IoError("cannot open weight file for writing: " + path.string());
  }
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) {
    throw IoError("failed writing weight file: " + path.string());
  }
}

FrozenEncoderParams load_weights(const std::filesystem::path& path, const EncoderConfig& config) {
  config.validate();
  std::ifstream file(path, std::ios::binary);
  if (!file) {
    throw IoError("cannot open weight file: " + path.string());
  }
  Reader in(std::string(std::istreambuf_iterator<char>(file), {}));

  if (std::memcmp(in.take(4, "magic"), kMagic, 4) != 0) {
    throw ParseError("not an FSEW weight file (bad magic at byte offset 0): " + path.string());
  }
  const auto version = in.u32("version");
  if (version != kVersion) {
    throw ParseError("unsupported weight file version " + std::to_string(version));
  }

  std::map<std::string, RawTensor> tensors;
  while (!in.done()) {
    const auto record_offset = in.offset();
    const auto name_len = in.u32("name length");
    std::string name(in.take(name_len, "name"), name_len);
    const auto rank = in.u32("rank");
    if (rank == 0 || rank > 4) {
      throw ParseError("tensor '" + name + "' has invalid rank " + std::to_string(rank) +
                       " at byte offset " + std::to_string(record_offset));
    }
    RawTensor t;
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      t.dims.push_back(in.u32("dims"));
      count *= t.dims.back();
    }
    if (count > (std::size_t{1} << 31)) {
      throw ParseError("tensor '" + name + "' is implausibly large at byte offset " +
                       std::to_string(record_offset));
    }
    t.values.resize(count);
    std::memcpy(t.values.data(), in.take(count * sizeof(float), "tensor data"),
                count * sizeof(float));
    if (!tensors.emplace(name, std::move(t)).second) {
      throw ParseError("duplicate tensor '" + name + "' at byte offset " +
                       std::to_string(record_offset));
    }
  }

  auto image = detail::shaped_image_tower(config);
  auto text = detail::shaped_text_tower(config);
  std::size_t used = 0;
  detail::visit_tensors(image, text, [&](const std::string& name,
                                         const std::vector<std::size_t>& dims,
                                         std::span<float> values) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw ConfigError("weight file is missing tensor '" + name + "'");
    }
    if (it->second.dims != dims) {
      std::string want;
      std::string got;
      for (auto d : dims) want += std::to_string(d) + " ";
      for (auto d : it->second.dims) got += std::to_string(d) + " ";
      throw ConfigError("tensor '" + name + "' has shape [ " + got + "], config expects [ " +
                        want + "]");
    }
    check_finite(it->second.values, name);
    std::copy(it->second.values.begin(), it->second.values.end(), values.begin());
    ++used;
  });
  if (used != tensors.size()) {
    throw ConfigError("weight file has " + std::to_string(tensors.size() - used) +
                      " tensors the config does not use");
  }
  return FrozenEncoderParams(config, std::nullopt, std::move(image), std::move(text));
}

}  // namespace fsc
