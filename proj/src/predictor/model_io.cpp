#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ndtsync/cnn.hpp"
#include "ndtsync/error.hpp"

namespace ndtsync {
namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

json config_to_json(const CnnConfig& c) {
  return {{"window_len", c.window_len},
          {"horizon", c.horizon},
          {"conv_layers", c.conv_layers},
          {"kernel_size", c.kernel_size},
          {"channels_per_layer", c.channels_per_layer},
          {"input_channels", c.input_channels},
          {"padding", "same"},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed}};
}

[[noreturn]] void corrupt(const std::string& what) { throw Error(Errc::kCorruptModel, "corrupt model: " + what); }

std::vector<double> doubles(const json& j, const char* key, std::size_t expected) {
  if (!j.contains(key) || !j.at(key).is_array()) corrupt(std::string("missing array '") + key + "'");
  auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != expected) corrupt(std::string("array '") + key + "' has the wrong length");
  for (double x : v) {
    if (!std::isfinite(x)) corrupt(std::string("non-finite value in '") + key + "'");
  }
  return v;
}

}  // namespace

std::string CnnModel::config_hash() const {
  const std::string text = config_to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string save_model(const CnnModel& m) {
  json layers = json::array();
  for (const auto& b : m.blocks) {
    layers.push_back({{"type", "conv1d"},
                      {"shape", {b.out_ch, b.in_ch, b.kernel}},
                      {"weights", b.weight},
                      {"bias", b.bias}});
    layers.push_back({{"type", "batchnorm"},
                      {"shape", {b.out_ch}},
                      {"gamma", b.bn.gamma},
                      {"beta", b.bn.beta},
                      {"running_mean", b.bn.running_mean},
                      {"running_var", b.bn.running_var},
                      {"momentum", b.bn.momentum},
                      {"eps", b.bn.eps}});
  }
  layers.push_back({{"type", "dense"},
                    {"shape", {m.head.out, m.head.in}},
                    {"weights", m.head.weight},
                    {"bias", m.head.bias}});
  const json doc = {{"format_version", kFormatVersion},
                    {"config", config_to_json(m.config)},
                    {"normalizer", {{"min", m.normalizer.min_val()}, {"max", m.normalizer.max_val()}}},
                    {"layers", layers}};
  return doc.dump(1);
}

CnnModel load_model(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    corrupt(e.what());
  }
  if (!doc.is_object() || !doc.contains("format_version")) corrupt("missing format_version");
  const json& ver = doc.at("format_version");
  if (!(ver.is_number_integer() && ver.get<long long>() == kFormatVersion)) {
    throw Error(Errc::kVersionMismatch, "unsupported model format_version " + ver.dump() + ", expected " +
                                            std::to_string(kFormatVersion));
  }

  CnnModel m;
  try {
    const json& c = doc.at("config");
    m.config.window_len = c.at("window_len").get<std::size_t>();
    m.config.horizon = c.at("horizon").get<std::size_t>();
    m.config.conv_layers = c.at("conv_layers").get<std::size_t>();
    m.config.kernel_size = c.at("kernel_size").get<std::size_t>();
    m.config.channels_per_layer = c.at("channels_per_layer").get<std::vector<std::size_t>>();
    m.config.input_channels = c.at("input_channels").get<std::size_t>();
    if (c.at("padding").get<std::string>() != "same") corrupt("unsupported padding");
    m.config.batch_size = c.at("batch_size").get<std::size_t>();
    m.config.epochs = c.at("epochs").get<std::size_t>();
    m.config.learning_rate = c.at("learning_rate").get<double>();
    m.config.seed = c.at("seed").get<std::uint64_t>();
    m.config.validate();
    const json& nz = doc.at("normalizer");
    m.normalizer = Normalizer(nz.at("min").get<double>(), nz.at("max").get<double>());

    const json& layers = doc.at("layers");
    if (!layers.is_array() || layers.size() != 2 * m.config.conv_layers + 1) corrupt("unexpected layer count");
    std::size_t in_ch = m.config.input_channels;
    for (std::size_t l = 0; l < m.config.conv_layers; ++l) {
      const json& conv = layers.at(2 * l);
      const json& bn = layers.at(2 * l + 1);
      if (conv.at("type") != "conv1d" || bn.at("type") != "batchnorm") corrupt("unexpected layer type");
      ConvBlock b;
      b.in_ch = in_ch;
      b.out_ch = m.config.channels_per_layer[l];
      b.kernel = m.config.kernel_size;
      if (conv.at("shape") != json{b.out_ch, b.in_ch, b.kernel}) corrupt("conv shape disagrees with config");
      b.weight = doubles(conv, "weights", b.out_ch * b.in_ch * b.kernel);
      b.bias = doubles(conv, "bias", b.out_ch);
      b.bn.gamma = doubles(bn, "gamma", b.out_ch);
      b.bn.beta = doubles(bn, "beta", b.out_ch);
      b.bn.running_mean = doubles(bn, "running_mean", b.out_ch);
      b.bn.running_var = doubles(bn, "running_var", b.out_ch);
      b.bn.momentum = bn.at("momentum").get<double>();
      b.bn.eps = bn.at("eps").get<double>();
      for (double v : b.bn.running_var) {
        if (v < 0.0) corrupt("negative running variance");
      }
      m.blocks.push_back(std::move(b));
      in_ch = m.blocks.back().out_ch;
    }
    const json& dense = layers.back();
    if (dense.at("type") != "dense") corrupt("last layer must be dense");
    m.head.in = in_ch * m.config.window_len;
    m.head.out = m.config.horizon;
    if (dense.at("shape") != json{m.head.out, m.head.in}) corrupt("dense shape disagrees with config");
    m.head.weight = doubles(dense, "weights", m.head.in * m.head.out);
    m.head.bias = doubles(dense, "bias", m.head.out);
  } catch (const json::exception& e) {
    corrupt(e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::kCorruptModel) throw;
    corrupt(e.what());
  }
  return m;
}

void save_model_file(const CnnModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::kInvalidArgument, "cannot write " + path);
  out << save_model(model);
}

CnnModel load_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::kInvalidArgument, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return load_model(ss.str());
}

}  // namespace ndtsync
