#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cattn/tensor.hpp"

namespace cattn {

struct ModelConfig {
  int layers = 3;
  int heads = 4;
  int model_dim = 64;
  int ff_dim = 256;
  int max_len = 64;
  int vocab_size = 0;
  std::uint64_t seed = 1;

  void validate() const;
  int head_dim() const { return model_dim / heads; }
};

struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_gain, ln2_bias;
  Tensor ff_w1, ff_b1, ff_w2, ff_b2;
};

// All learnable tensors. The MLM output projection is weight-tied to the
// token embeddings, so it does not appear separately.
struct ModelParams {
  ModelConfig config;
  Tensor tok_embed;  // (vocab, d)
  Tensor pos_embed;  // (max_len, d)
  std::vector<LayerParams> layers;
  Tensor final_ln_gain, final_ln_bias;

  // Fixed, deterministic order; handles share storage with the model.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::size_t parameter_count() const;
  void zero_grad() const;
};

// Weights from N(0, 0.02^2), layer-norm gains 1 and all biases 0,
// deterministic per config.seed.
ModelParams init_params(const ModelConfig& config);

// Plain-value view of every attention map of one forward pass, indexed
// [layer][head][query][key]; each (l,h,i) row is a distribution over keys.
struct AttentionTensor {
  std::size_t layers = 0, heads = 0, seq = 0;
  std::vector<double> values;

  double at(std::size_t l, std::size_t h, std::size_t i, std::size_t j) const {
    return values[((l * heads + h) * seq + i) * seq + j];
  }
};

struct ForwardOutput {
  Tensor logits;                  // (seq, vocab)
  std::vector<Tensor> attention;  // per layer, (heads, seq, seq), on the tape

  AttentionTensor attention_tensor() const;
};

// Full encoder pass. `valid` flags PAD positions (0 = PAD); pass an empty
// span when every position is real. The attention tensor is always
// materialized: the contrastive-attention loss and the analysis both read it.
ForwardOutput forward(const ModelParams& params, std::span<const int> ids,
                      std::span<const std::uint8_t> valid = {},
                      GradientTape* tape = nullptr);

}  // namespace cattn
