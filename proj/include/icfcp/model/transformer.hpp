// SPDX-License-Identifier: Apache-2.0
//
// Permutation-invariant in-context learner.
//
// Context pairs are embedded by h1 from [x ∥ onehot(y)], query inputs by h2
// from x alone. The token sequence [contexts, queries] runs through pre-norm
// Transformer blocks under a mask where contexts see each other and each query
// sees the contexts plus itself. No positional signal enters anywhere, so the
// query outputs are symmetric functions of the context set.

#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "icfcp/model/config.hpp"
#include "icfcp/model/weights.hpp"
#include "icfcp/numerics/ops.hpp"
#include "icfcp/tasks/episode.hpp"

namespace icfcp::model {

/// Additive attention mask for `nc` context tokens followed by `nq` query tokens.
template <class T>
Tensor<T> build_mask(std::size_t nc, std::size_t nq) {
  if (nc == 0) throw std::invalid_argument("build_mask: at least one context token required");
  const std::size_t L = nc + nq;
  const T blocked = num::blocked_value<T>();
  std::vector<T> m(L * L, T(0));
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t j = nc; j < L; ++j) {
      // Context rows never see queries; query rows see only their own query slot.
      if (i < nc || i != j) m[i * L + j] = blocked;
    }
  }
  return Tensor<T>::from({L, L}, std::move(m));
}

namespace detail {

template <class T>
Tensor<T> affine(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  return num::add_bias(num::matmul(x, w), b);
}

template <class T>
Tensor<T> context_inputs(const Dataset& context, const ModelConfig& cfg) {
  const std::size_t width = cfg.input_dim + cfg.num_classes;
  std::vector<T> data(context.size() * width, T(0));
  for (std::size_t i = 0; i < context.size(); ++i) {
    const auto& p = context[i];
    if (p.x.size() != cfg.input_dim) throw num::DimensionError("context input has wrong dimension");
    check_label(p.y, cfg.num_classes);
    for (std::size_t j = 0; j < cfg.input_dim; ++j) data[i * width + j] = static_cast<T>(p.x[j]);
    data[i * width + cfg.input_dim + static_cast<std::size_t>(p.y)] = T(1);
  }
  return Tensor<T>::from({context.size(), width}, std::move(data));
}

template <class T>
Tensor<T> query_inputs(std::span<const Point> queries, const ModelConfig& cfg) {
  std::vector<T> data(queries.size() * cfg.input_dim);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (queries[i].size() != cfg.input_dim) throw num::DimensionError("query input has wrong dimension");
    for (std::size_t j = 0; j < cfg.input_dim; ++j)
      data[i * cfg.input_dim + j] = static_cast<T>(queries[i][j]);
  }
  return Tensor<T>::from({queries.size(), cfg.input_dim}, std::move(data));
}

template <class T>
Tensor<T> block(const LayerWeights<T>& L, const Tensor<T>& h, const Tensor<T>& mask,
                std::size_t heads) {
  const T eps = T(1e-5);
  auto a = num::layer_norm(h, L.ln1_gain, L.ln1_shift, eps);
  auto q = affine(a, L.wq, L.bq);
  auto k = affine(a, L.wk, L.bk);
  auto v = affine(a, L.wv, L.bv);
  auto att = num::masked_attention(q, k, v, mask, heads);
  auto h1 = num::add(h, affine(att, L.wo, L.bo));
  auto b = num::layer_norm(h1, L.ln2_gain, L.ln2_shift, eps);
  auto f = affine(num::gelu(affine(b, L.ffn_in, L.ffn_in_bias)), L.ffn_out, L.ffn_out_bias);
  return num::add(h1, f);
}

}  // namespace detail

/// h1 applied to a single labeled point; returns a [1 × model_dim] token.
template <class T>
Tensor<T> embed_context(const TransformerWeights<T>& w, const Point& x, int y) {
  Dataset one{{x, y}};
  return detail::affine(detail::context_inputs<T>(one, w.config), w.ctx_embed, w.ctx_embed_bias);
}

/// h2 applied to a single input; returns a [1 × model_dim] token.
template <class T>
Tensor<T> embed_query(const TransformerWeights<T>& w, const Point& x) {
  std::vector<Point> one{x};
  return detail::affine(detail::query_inputs<T>(one, w.config), w.query_embed, w.query_embed_bias);
}

/// Log-predictive distributions [nq × K] for each query given the context set.
template <class T>
Tensor<T> forward_logprobs(const TransformerWeights<T>& w, const Dataset& context,
                           std::span<const Point> queries) {
  if (context.empty()) throw std::invalid_argument("forward: empty context");
  const auto& cfg = w.config;
  const std::size_t nc = context.size(), nq = queries.size();
  auto ctx = detail::affine(detail::context_inputs<T>(context, cfg), w.ctx_embed, w.ctx_embed_bias);
  std::vector<Tensor<T>> parts{ctx};
  if (nq > 0) {
    parts.push_back(detail::affine(detail::query_inputs<T>(queries, cfg), w.query_embed,
                                   w.query_embed_bias));
  }
  auto h = num::concat_rows(parts);
  const auto mask = build_mask<T>(nc, nq);
  for (const auto& layer : w.layers) h = detail::block(layer, h, mask, cfg.num_heads);
  if (nq == 0) return Tensor<T>::zeros({0, cfg.num_classes});
  auto hq = num::layer_norm(num::slice_rows(h, nc, nq), w.final_gain, w.final_shift, T(1e-5));
  return num::log_softmax_rows(detail::affine(hq, w.head, w.head_bias));
}

/// G_θ(context, x) for each query: one probability vector per query.
template <class T>
Tensor<T> forward_context_query(const TransformerWeights<T>& w, const Dataset& context,
                                std::span<const Point> queries) {
  return forward_logprobs(w, context, queries);
}

/// Runs the augmented dataset as both contexts and queries; row i of the
/// result is the log-predictive distribution at input i.
template <class T>
Tensor<T> forward_augmented(const TransformerWeights<T>& w, const Dataset& augmented) {
  if (augmented.empty()) throw std::invalid_argument("forward_augmented: empty dataset");
  std::vector<Point> inputs;
  inputs.reserve(augmented.size());
  for (const auto& p : augmented) inputs.push_back(p.x);
  return forward_logprobs(w, augmented, std::span<const Point>(inputs));
}

/// Exponentiates log-probabilities into row vectors of doubles.
template <class T>
std::vector<std::vector<double>> to_probabilities(const Tensor<T>& logp) {
  std::vector<std::vector<double>> out(logp.rows(), std::vector<double>(logp.cols()));
  for (std::size_t i = 0; i < logp.rows(); ++i)
    for (std::size_t j = 0; j < logp.cols(); ++j)
      out[i][j] = std::exp(static_cast<double>(logp.at(i, j)));
  return out;
}

/// Joint-learning feedforward baseline: ReLU hidden layers, log-softmax head.
template <class T>
Tensor<T> mlp_logprobs(const MlpWeights<T>& w, std::span<const Point> inputs) {
  auto h = detail::query_inputs<T>(inputs, ModelConfig{.num_layers = 1,
                                                       .model_dim = 1,
                                                       .num_heads = 1,
                                                       .ffn_dim = 1,
                                                       .num_classes = w.config.num_classes,
                                                       .input_dim = w.config.input_dim});
  for (std::size_t i = 0; i < w.weight.size(); ++i) {
    h = detail::affine(h, w.weight[i], w.bias[i]);
    if (i + 1 < w.weight.size()) h = num::relu(h);
  }
  return num::log_softmax_rows(h);
}

}  // namespace icfcp::model
