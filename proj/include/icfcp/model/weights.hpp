// SPDX-License-Identifier: Apache-2.0
//
// Parameter containers for the in-context Transformer and the joint-learning
// MLP. Matrices are stored [fan_in × fan_out] so a layer computes x·W + b.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "icfcp/model/config.hpp"
#include "icfcp/numerics/tensor.hpp"

namespace icfcp::model {

using num::Tensor;

template <class T>
struct LayerWeights {
  Tensor<T> ln1_gain, ln1_shift;
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<T> ln2_gain, ln2_shift;
  Tensor<T> ffn_in, ffn_in_bias, ffn_out, ffn_out_bias;
};

/// Enumerates parameters as (name, tensor, fan_in); fan_in == 0 marks a
/// bias or layer-norm shift, fan_in < 0 a layer-norm gain.
template <class T>
struct TransformerWeights {
  ModelConfig config;
  Tensor<T> ctx_embed, ctx_embed_bias;      // h1: [input_dim + K] → model_dim
  Tensor<T> query_embed, query_embed_bias;  // h2: input_dim → model_dim
  std::vector<LayerWeights<T>> layers;
  Tensor<T> final_gain, final_shift;
  Tensor<T> head, head_bias;                // model_dim → K

  template <class F>
  void visit(F&& f) {
    visit_impl(*this, std::forward<F>(f));
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, std::forward<F>(f));
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    visit([&](const std::string&, const Tensor<T>& t, long) { out.push_back(t); });
    return out;
  }

  std::size_t num_scalars() const {
    std::size_t total = 0;
    visit([&](const std::string&, const Tensor<T>& t, long) { total += t.size(); });
    return total;
  }

  /// Allocates every tensor with zeros (gains included) and the given grad flag.
  static TransformerWeights zeros(const ModelConfig& config, bool requires_grad = true) {
    config.validate();
    TransformerWeights w;
    w.config = config;
    w.layers.resize(config.num_layers);
    w.visit_shapes([&](const std::string&, Tensor<T>& t, num::Shape shape, long) {
      t = Tensor<T>::zeros(std::move(shape), requires_grad);
    });
    return w;
  }

  /// Uniform(±1/√fan_in) weights, zero biases, unit layer-norm gains.
  static TransformerWeights init(const ModelConfig& config, std::uint64_t seed,
                                 bool requires_grad = true) {
    config.validate();
    TransformerWeights w;
    w.config = config;
    w.layers.resize(config.num_layers);
    std::mt19937_64 rng(seed);
    w.visit_shapes([&](const std::string&, Tensor<T>& t, num::Shape shape, long fan_in) {
      std::vector<T> data(num::numel(shape), T(0));
      if (fan_in > 0) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : data) v = static_cast<T>(dist(rng));
      } else if (fan_in < 0) {
        std::fill(data.begin(), data.end(), T(1));
      }
      t = Tensor<T>::from(std::move(shape), std::move(data), requires_grad);
    });
    return w;
  }

  TransformerWeights clone(bool requires_grad = true) const {
    TransformerWeights w;
    w.config = config;
    w.layers.resize(config.num_layers);
    auto src = parameters();
    std::size_t i = 0;
    w.visit([&](const std::string&, Tensor<T>& t, long) { t = src[i++].clone(requires_grad); });
    return w;
  }

  void zero_grad() {
    visit([](const std::string&, Tensor<T>& t, long) { t.zero_grad(); });
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F&& f) {
    const auto K = static_cast<long>(self.config.num_classes);
    const auto in = static_cast<long>(self.config.input_dim);
    const auto d = static_cast<long>(self.config.model_dim);
    const auto ffn = static_cast<long>(self.config.ffn_dim);
    f("ctx_embed.weight", self.ctx_embed, in + K);
    f("ctx_embed.bias", self.ctx_embed_bias, 0L);
    f("query_embed.weight", self.query_embed, in);
    f("query_embed.bias", self.query_embed_bias, 0L);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      f(p + "ln1.gain", L.ln1_gain, -1L);
      f(p + "ln1.shift", L.ln1_shift, 0L);
      f(p + "attn.wq", L.wq, d);
      f(p + "attn.bq", L.bq, 0L);
      f(p + "attn.wk", L.wk, d);
      f(p + "attn.bk", L.bk, 0L);
      f(p + "attn.wv", L.wv, d);
      f(p + "attn.bv", L.bv, 0L);
      f(p + "attn.wo", L.wo, d);
      f(p + "attn.bo", L.bo, 0L);
      f(p + "ln2.gain", L.ln2_gain, -1L);
      f(p + "ln2.shift", L.ln2_shift, 0L);
      f(p + "ffn.in", L.ffn_in, d);
      f(p + "ffn.in_bias", L.ffn_in_bias, 0L);
      f(p + "ffn.out", L.ffn_out, ffn);
      f(p + "ffn.out_bias", L.ffn_out_bias, 0L);
    }
    f("final_ln.gain", self.final_gain, -1L);
    f("final_ln.shift", self.final_shift, 0L);
    f("head.weight", self.head, d);
    f("head.bias", self.head_bias, 0L);
  }

  // Same traversal with shapes, used only while allocating.
  template <class F>
  void visit_shapes(F&& f) {
    const std::size_t K = config.num_classes, in = config.input_dim, d = config.model_dim,
                      ffn = config.ffn_dim;
    std::vector<num::Shape> shapes;
    shapes.push_back({in + K, d});
    shapes.push_back({d});
    shapes.push_back({in, d});
    shapes.push_back({d});
    for (std::size_t l = 0; l < config.num_layers; ++l) {
      for (auto s : std::initializer_list<num::Shape>{
               {d}, {d}, {d, d}, {d}, {d, d}, {d}, {d, d}, {d}, {d, d}, {d},
               {d}, {d}, {d, ffn}, {ffn}, {ffn, d}, {d}}) {
        shapes.push_back(std::move(s));
      }
    }
    shapes.push_back({d});
    shapes.push_back({d});
    shapes.push_back({d, K});
    shapes.push_back({K});
    std::size_t i = 0;
    visit([&](const std::string& name, Tensor<T>& t, long fan_in) {
      f(name, t, shapes.at(i++), fan_in);
    });
  }
};

template <class T>
struct MlpWeights {
  MlpConfig config;
  std::vector<Tensor<T>> weight;
  std::vector<Tensor<T>> bias;

  template <class F>
  void visit(F&& f) {
    for (std::size_t i = 0; i < weight.size(); ++i) {
      f("fc." + std::to_string(i) + ".weight", weight[i], static_cast<long>(weight[i].dim(0)));
      f("fc." + std::to_string(i) + ".bias", bias[i], 0L);
    }
  }
  template <class F>
  void visit(F&& f) const {
    const_cast<MlpWeights*>(this)->visit([&](const std::string& n, Tensor<T>& t, long fan) {
      f(n, static_cast<const Tensor<T>&>(t), fan);
    });
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> out;
    visit([&](const std::string&, const Tensor<T>& t, long) { out.push_back(t); });
    return out;
  }

  static MlpWeights init(const MlpConfig& config, std::uint64_t seed, bool requires_grad = true) {
    config.validate();
    MlpWeights w;
    w.config = config;
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < config.num_layers; ++i) {
      const std::size_t fan_in = i == 0 ? config.input_dim : config.hidden_dim;
      const std::size_t fan_out = i + 1 == config.num_layers ? config.num_classes : config.hidden_dim;
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      std::vector<T> data(fan_in * fan_out);
      for (auto& v : data) v = static_cast<T>(dist(rng));
      w.weight.push_back(Tensor<T>::from({fan_in, fan_out}, std::move(data), requires_grad));
      w.bias.push_back(Tensor<T>::zeros({fan_out}, requires_grad));
    }
    return w;
  }

  MlpWeights clone(bool requires_grad = true) const {
    MlpWeights w;
    w.config = config;
    for (const auto& t : weight) w.weight.push_back(t.clone(requires_grad));
    for (const auto& t : bias) w.bias.push_back(t.clone(requires_grad));
    return w;
  }

  void zero_grad() {
    for (auto& t : weight) t.zero_grad();
    for (auto& t : bias) t.zero_grad();
  }
};

}  // namespace icfcp::model
