// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace icfcp::model {

/// Transformer shape. Defaults are the six-layer QPSK configuration.
struct ModelConfig {
  std::size_t num_layers = 6;
  std::size_t model_dim = 16;
  std::size_t num_heads = 2;
  std::size_t ffn_dim = 1024;
  std::size_t num_classes = 4;
  std::size_t input_dim = 2;

  void validate() const {
    if (num_layers == 0 || model_dim == 0 || num_heads == 0 || ffn_dim == 0 ||
        num_classes == 0 || input_dim == 0) {
      throw std::invalid_argument("ModelConfig: all sizes must be positive");
    }
    if (model_dim % num_heads != 0) {
      throw std::invalid_argument("ModelConfig: model_dim " + std::to_string(model_dim) +
                                  " not divisible by num_heads " + std::to_string(num_heads));
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Feedforward baseline used by joint learning: input → hidden^(depth-1) → classes.
struct MlpConfig {
  std::size_t num_layers = 4;
  std::size_t hidden_dim = 64;
  std::size_t num_classes = 4;
  std::size_t input_dim = 2;

  void validate() const {
    if (num_layers < 1 || hidden_dim == 0 || num_classes == 0 || input_dim == 0) {
      throw std::invalid_argument("MlpConfig: all sizes must be positive");
    }
  }

  bool operator==(const MlpConfig&) const = default;
};

}  // namespace icfcp::model
