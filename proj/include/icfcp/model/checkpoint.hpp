// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint container.
//
//   bytes 0..7   magic "ICFCPCKP"
//   u32          format version (little endian)
//   u64          header length in bytes
//   header       JSON: kind, config, seed, objective, meta, params[{name, shape}]
//   payload      every parameter as little-endian IEEE-754 float64, in header order
//
// Values are stored as float64 regardless of the in-memory scalar type, so a
// save/load cycle is bit-exact for double and for float.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "icfcp/model/config.hpp"
#include "icfcp/model/weights.hpp"

namespace icfcp::model {

inline constexpr char kCheckpointMagic[8] = {'I', 'C', 'F', 'C', 'P', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  num::Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::string kind;  // "transformer" or "mlp"
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::string objective;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> params;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"num_layers", c.num_layers}, {"model_dim", c.model_dim}, {"num_heads", c.num_heads},
          {"ffn_dim", c.ffn_dim},       {"num_classes", c.num_classes},
          {"input_dim", c.input_dim}};
}

inline nlohmann::json to_json(const MlpConfig& c) {
  return {{"num_layers", c.num_layers},
          {"hidden_dim", c.hidden_dim},
          {"num_classes", c.num_classes},
          {"input_dim", c.input_dim}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.model_dim = j.at("model_dim").get<std::size_t>();
  c.num_heads = j.at("num_heads").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.validate();
  return c;
}

inline MlpConfig mlp_config_from_json(const nlohmann::json& j) {
  MlpConfig c;
  c.num_layers = j.at("num_layers").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.input_dim = j.at("input_dim").get<std::size_t>();
  c.validate();
  return c;
}

namespace detail {

template <class Int>
void put_le(std::ostream& os, Int v) {
  unsigned char bytes[sizeof(Int)];
  for (std::size_t i = 0; i < sizeof(Int); ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(Int));
}

template <class Int>
Int get_le(std::istream& is) {
  unsigned char bytes[sizeof(Int)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(Int))) {
    throw CheckpointError("checkpoint truncated");
  }
  Int v = 0;
  for (std::size_t i = 0; i < sizeof(Int); ++i) v |= static_cast<Int>(bytes[i]) << (8 * i);
  return v;
}

template <class W>
std::vector<NamedArray> named_arrays(const W& weights) {
  std::vector<NamedArray> out;
  weights.visit([&](const std::string& name, const auto& t, long) {
    NamedArray a{name, t.shape(), {}};
    a.values.reserve(t.size());
    for (const auto v : t.data()) a.values.push_back(static_cast<double>(v));
    out.push_back(std::move(a));
  });
  return out;
}

template <class W>
void fill_from(W& weights, const std::vector<NamedArray>& arrays) {
  std::size_t i = 0;
  weights.visit([&](const std::string& name, auto& t, long) {
    using T = typename std::remove_cvref_t<decltype(t)>::value_type;
    if (i >= arrays.size()) throw CheckpointError("checkpoint is missing parameter " + name);
    const auto& a = arrays[i++];
    if (a.name != name || a.shape != t.shape()) {
      throw CheckpointError("checkpoint parameter " + a.name + " " + num::shape_str(a.shape) +
                            " does not match expected " + name + " " + num::shape_str(t.shape()));
    }
    auto dst = t.mutable_data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(a.values[k]);
  });
  if (i != arrays.size()) throw CheckpointError("checkpoint has unexpected extra parameters");
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Checkpoint& ck) {
  nlohmann::json header = {{"kind", ck.kind},
                           {"config", ck.config},
                           {"seed", ck.seed},
                           {"objective", ck.objective},
                           {"meta", ck.meta}};
  auto& params = header["params"] = nlohmann::json::array();
  for (const auto& a : ck.params) params.push_back({{"name", a.name}, {"shape", a.shape}});
  const std::string text = header.dump();
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(os, kCheckpointVersion);
  detail::put_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : ck.params) {
    for (const double v : a.values) detail::put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
  }
  if (!os) throw CheckpointError("failed writing checkpoint");
}

inline Checkpoint read_checkpoint(std::istream& is) {
  char magic[sizeof(kCheckpointMagic)];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const auto version = detail::get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto length = detail::get_le<std::uint64_t>(is);
  std::string text(length, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(length))) {
    throw CheckpointError("checkpoint header truncated");
  }
  const auto header = nlohmann::json::parse(text);
  Checkpoint ck;
  ck.kind = header.at("kind").get<std::string>();
  ck.config = header.at("config");
  ck.seed = header.at("seed").get<std::uint64_t>();
  ck.objective = header.at("objective").get<std::string>();
  ck.meta = header.value("meta", nlohmann::json::object());
  for (const auto& p : header.at("params")) {
    NamedArray a{p.at("name").get<std::string>(), p.at("shape").get<num::Shape>(), {}};
    a.values.resize(num::numel(a.shape));
    for (auto& v : a.values) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(is));
    ck.params.push_back(std::move(a));
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for writing");
  write_checkpoint(os, ck);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

template <class T>
Checkpoint make_checkpoint(const TransformerWeights<T>& w, std::uint64_t seed,
                           std::string objective, nlohmann::json meta = nlohmann::json::object()) {
  return {"transformer", to_json(w.config), seed, std::move(objective), std::move(meta),
          detail::named_arrays(w)};
}

template <class T>
Checkpoint make_checkpoint(const MlpWeights<T>& w, std::uint64_t seed, std::string objective,
                           nlohmann::json meta = nlohmann::json::object()) {
  return {"mlp", to_json(w.config), seed, std::move(objective), std::move(meta),
          detail::named_arrays(w)};
}

template <class T>
TransformerWeights<T> transformer_from(const Checkpoint& ck, bool requires_grad = true) {
  if (ck.kind != "transformer") throw CheckpointError("checkpoint holds a " + ck.kind + ", not a transformer");
  auto w = TransformerWeights<T>::zeros(model_config_from_json(ck.config), requires_grad);
  detail::fill_from(w, ck.params);
  return w;
}

template <class T>
MlpWeights<T> mlp_from(const Checkpoint& ck, bool requires_grad = true) {
  if (ck.kind != "mlp") throw CheckpointError("checkpoint holds a " + ck.kind + ", not an mlp");
  auto w = MlpWeights<T>::init(mlp_config_from_json(ck.config), 0, requires_grad);
  detail::fill_from(w, ck.params);
  return w;
}

}  // namespace icfcp::model
