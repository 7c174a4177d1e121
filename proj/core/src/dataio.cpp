#include "fsc/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "fsc/error.hpp"
#include "fsc/numerics.hpp"

namespace fsc {

std::string_view to_string(Label l) { return l == Label::crack ? "crack" : "no_crack"; }

Label parse_label(std::string_view s) {
  if (s == "crack") return Label::crack;
  if (s == "no_crack") return Label::no_crack;
  throw ParseError("unknown label '" + std::string(s) + "'");
}

std::vector<std::string> default_prompts() {
  return {std::string(kNoCrackPrompt), std::string(kCrackPrompt)};
}

std::string encode_pgm(const GrayImage& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                    "\n255\n";
  out.reserve(out.size() + image.pixels.size());
  for (float v : image.pixels) {
    const double q = std::round(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  return out;
}

namespace {

class PgmScanner {
 public:
  explicit PgmScanner(std::string_view bytes) : bytes_(bytes) {}

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("PGM parse error at byte offset " + std::to_string(pos_) + ": " + what);
  }

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      v = v * 10 + static_cast<std::size_t>(bytes_[pos_] - '0');
      if (v > 1'000'000) fail(std::string(what) + " too large");
      ++pos_;
    }
    if (pos_ == start) fail(std::string("expected ") + what);
    return v;
  }

  std::size_t pos_ = 0;
  std::string_view bytes_;
};

}  // namespace

GrayImage decode_pgm(std::string_view bytes) {
  PgmScanner s(bytes);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    s.fail("missing P5 magic");
  }
  s.pos_ = 2;
  const std::size_t width = s.number("width");
  const std::size_t height = s.number("height");
  const std::size_t maxval = s.number("maxval");
  if (width == 0 || height == 0) s.fail("zero image dimension");
  if (maxval == 0 || maxval > 255) s.fail("maxval must be in [1, 255]");
  if (s.pos_ >= bytes.size()) s.fail("missing whitespace before pixel data");
  ++s.pos_;  // single whitespace byte
  const std::size_t need = width * height;
  if (bytes.size() - s.pos_ < need) {
    s.fail("truncated pixel data: need " + std::to_string(need) + " bytes, have " +
           std::to_string(bytes.size() - s.pos_));
  }
  GrayImage img(width, height);
  for (std::size_t i = 0; i < need; ++i) {
    const auto raw = static_cast<unsigned char>(bytes[s.pos_ + i]);
    if (raw > maxval) {
      s.pos_ += i;
      s.fail("pixel value exceeds maxval");
    }
    img.pixels[i] = static_cast<float>(static_cast<double>(raw) / static_cast<double>(maxval));
  }
  return img;
}

void write_image(const std::filesystem::path& path, const GrayImage& image) {
  const auto bytes = encode_pgm(image);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open image for writing: " + path.string());
  file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!file) throw IoError("failed writing image: " + path.string());
}

GrayImage read_image(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open image: " + path.string());
  const std::string bytes(std::istreambuf_iterator<char>(file), {});
  try {
    return decode_pgm(bytes);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string manifest_csv(const DatasetManifest& manifest) {
  std::string out = "path,label\n";
  for (const auto& r : manifest.records) {
    out += r.path;
    out += ',';
    out += to_string(r.label);
    out += '\n';
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  for (const auto& r : manifest.records) {
    if (r.path.find_first_of(",\n\r") != std::string::npos) {
      throw InputError("manifest path contains a separator: " + r.path);
    }
  }
  const auto text = manifest_csv(manifest);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw IoError("cannot open manifest for writing: " + path.string());
  file << text;
  if (!file) throw IoError("failed writing manifest: " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot open manifest: " + path.string());
  DatasetManifest manifest;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(file, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != "path,label") {
        throw ParseError(path.string() + ": expected header 'path,label'");
      }
      continue;
    }
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected exactly two fields");
    }
    ManifestRecord r;
    r.path = line.substr(0, comma);
    try {
      r.label = parse_label(line.substr(comma + 1));
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (r.path.empty() || !seen.insert(r.path).second) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": empty or duplicate path '" + r.path + "'");
    }
    manifest.records.push_back(std::move(r));
  }
  if (line_no == 0) throw ParseError(path.string() + ": empty manifest");
  return manifest;
}

std::pair<DatasetManifest, DatasetManifest> split_train_test(const DatasetManifest& manifest,
                                                             std::uint64_t seed) {
  if (manifest.records.size() < 2) {
    throw InputError("train/test split needs at least 2 records");
  }
  std::vector<std::vector<std::size_t>> by_class(kNumClasses);
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    by_class[class_index(manifest.records[i].label)].push_back(i);
  }
  auto rng = RngStream::derive(seed, "train-test-split");
  std::vector<char> to_train(manifest.records.size(), 0);
  // Odd-sized classes alternate which side gets the extra item so the
  // overall split stays within one record of 50/50.
  bool extra_to_train = true;
  for (auto& idx : by_class) {
    shuffle(idx, rng);
    std::size_t half = idx.size() / 2;
    if (idx.size() % 2 == 1) {
      if (extra_to_train) ++half;
      extra_to_train = !extra_to_train;
    }
    for (std::size_t i = 0; i < half; ++i) to_train[idx[i]] = 1;
  }
  DatasetManifest train;
  DatasetManifest test;
  train.seed = test.seed = manifest.seed;
  train.generator = test.generator = manifest.generator;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    (to_train[i] ? train : test).records.push_back(manifest.records[i]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace fsc
