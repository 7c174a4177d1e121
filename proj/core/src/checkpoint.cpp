#include <charconv>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "fsc/classifier.hpp"
#include "fsc/error.hpp"

namespace fsc {

namespace {

using Json = nlohmann::ordered_json;

constexpr int kFormatVersion = 1;

// Shortest decimal that round-trips the float, stored as a double so the
// writer prints that same short form.
double short_decimal(float v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  double d = 0.0;
  std::from_chars(buf, end, d);
  return d;
}

Json array_json(std::span<const float> values) {
  Json arr = Json::array();
  for (float v : values) arr.push_back(short_decimal(v));
  return arr;
}

std::vector<float> array_from_json(const Json& j, const std::string& field, std::size_t expected) {
  if (!j.is_array()) {
    throw ParseError("checkpoint field '" + field + "' is not an array");
  }
  if (j.size() != expected) {
    throw ParseError("checkpoint field '" + field + "' has " + std::to_string(j.size()) +
                     " values, expected " + std::to_string(expected));
  }
  std::vector<float> out;
  out.reserve(expected);
  for (const auto& v : j) {
    if (!v.is_number()) {
      throw ParseError("checkpoint field '" + field + "' contains a non-number");
    }
    out.push_back(static_cast<float>(v.get<double>()));
  }
  return out;
}

Json layer_json(const BayesLinearParams& l) {
  Json j;
  j["weight_mean"] = array_json(l.weight_mean.values());
  j["weight_rho"] = array_json(l.weight_rho.values());
  j["bias_mean"] = array_json(l.bias_mean);
  j["bias_rho"] = array_json(l.bias_rho);
  return j;
}

BayesLinearParams layer_from_json(const Json& j, const std::string& name, std::size_t in,
                                  std::size_t out) {
  if (!j.is_object()) {
    throw ParseError("checkpoint field '" + name + "' is not an object");
  }
  BayesLinearParams l;
  l.weight_mean = Matrix(out, in, array_from_json(j.at("weight_mean"), name + ".weight_mean", in * out));
  l.weight_rho = Matrix(out, in, array_from_json(j.at("weight_rho"), name + ".weight_rho", in * out));
  l.bias_mean = array_from_json(j.at("bias_mean"), name + ".bias_mean", out);
  l.bias_rho = array_from_json(j.at("bias_rho"), name + ".bias_rho", out);
  return l;
}

}  // namespace

std::string head_to_json(const HeadCheckpoint& checkpoint) {
  const auto& head = checkpoint.head;
  head.validate();
  Json j;
  j["format"] = "fsc-head";
  j["version"] = kFormatVersion;
  j["variant"] = std::string(to_string(head.variant));
  j["dims"] = {{"in", head.in()}, {"hidden", head.hidden()}, {"out", 1}};
  j["dropout_rate"] = short_decimal(head.dropout_rate);
  j["normalize_features"] = head.normalize_features;
  if (head.scaler.empty()) {
    j["scaler"] = nullptr;
  } else {
    j["scaler"] = {{"mean", array_json(head.scaler.mean)}, {"scale", array_json(head.scaler.scale)}};
  }
  j["info"] = {{"encoder_fingerprint", checkpoint.info.encoder_fingerprint},
               {"fraction", checkpoint.info.fraction},
               {"seed", checkpoint.info.seed},
               {"train_items", checkpoint.info.train_items},
               {"stop_reason", checkpoint.info.stop_reason}};
  j["layer1"] = layer_json(head.layer1);
  j["layer2"] = layer_json(head.layer2);
  return j.dump() + "\n";
}

HeadCheckpoint head_from_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format") != "fsc-head") {
      throw ParseError("not an fsc-head checkpoint");
    }
    if (j.at("version") != kFormatVersion) {
      throw ParseError("unsupported checkpoint version " + j.at("version").dump());
    }
    HeadCheckpoint cp;
    const auto in = j.at("dims").at("in").get<std::size_t>();
    const auto hidden = j.at("dims").at("hidden").get<std::size_t>();
    if (in == 0 || hidden == 0 || j.at("dims").at("out").get<std::size_t>() != 1) {
      throw ParseError("checkpoint dims must be positive with out == 1");
    }
    cp.head.variant = parse_variant(j.at("variant").get<std::string>());
    cp.head.dropout_rate = static_cast<float>(j.at("dropout_rate").get<double>());
    cp.head.normalize_features = j.value("normalize_features", false);
    if (const auto it = j.find("scaler"); it != j.end() && !it->is_null()) {
      cp.head.scaler.mean = array_from_json(it->at("mean"), "scaler.mean", in);
      cp.head.scaler.scale = array_from_json(it->at("scale"), "scaler.scale", in);
    }
    cp.head.layer1 = layer_from_json(j.at("layer1"), "layer1", in, hidden);
    cp.head.layer2 = layer_from_json(j.at("layer2"), "layer2", hidden, 1);
    cp.head.validate();
    const auto& info = j.at("info");
    cp.info.encoder_fingerprint = info.at("encoder_fingerprint").get<std::string>();
    cp.info.fraction = info.at("fraction").get<double>();
    cp.info.seed = info.at("seed").get<std::uint64_t>();
    cp.info.train_items = info.at("train_items").get<std::size_t>();
    cp.info.stop_reason = info.at("stop_reason").get<std::string>();
    return cp;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  } catch (const InputError& e) {
    throw ParseError(std::string("malformed checkpoint: ") + e.what());
  }
}

void save_head(const std::filesystem::path& path, const HeadCheckpoint& checkpoint) {
  const auto text = head_to_json(checkpoint);
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) {
    throw IoError("cannot open checkpoint for writing: " + path.string());
  }
  file << text;
  if (!file) {
    throw IoError("failed writing checkpoint: " + path.string());
  }
}

HeadCheckpoint load_head(const std::filesystem::path& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) {
    throw IoError("cannot open checkpoint: " + path.string());
  }
  const std::string text(std::istreambuf_iterator<char>(file), {});
  return head_from_json(text);
}

}  // namespace fsc
