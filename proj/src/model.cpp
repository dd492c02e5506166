#include "cattn/model.hpp"

#include <cmath>

#include "cattn/errors.hpp"
#include "cattn/rng.hpp"

namespace cattn {

namespace {
constexpr double kInitStd = 0.02;
constexpr double kLnEps = 1e-5;
constexpr double kMaskedScore = -1e9;  // exp underflows to exactly 0
}  // namespace

void ModelConfig::validate() const {
  if (layers <= 0 || heads <= 0 || model_dim <= 0 || ff_dim <= 0 ||
      max_len <= 0 || vocab_size <= 0)
    throw ConfigError("model config: all counts must be positive");
  if (model_dim % heads != 0)
    throw ConfigError("model config: model_dim " + std::to_string(model_dim) +
                      " not divisible by heads " + std::to_string(heads));
}

namespace {

Tensor gaussian(Shape shape, Rng& rng) {
  std::vector<double> data(shape_size(shape));
  for (double& v : data) v = rng.next_gaussian() * kInitStd;
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

}  // namespace

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  std::size_t d = static_cast<std::size_t>(config.model_dim);
  std::size_t ff = static_cast<std::size_t>(config.ff_dim);

  ModelParams p;
  p.config = config;
  p.tok_embed = gaussian({static_cast<std::size_t>(config.vocab_size), d}, rng);
  p.pos_embed = gaussian({static_cast<std::size_t>(config.max_len), d}, rng);
  for (int l = 0; l < config.layers; ++l) {
    LayerParams layer;
    layer.ln1_gain = Tensor::full({d}, 1.0, true);
    layer.ln1_bias = Tensor::zeros({d}, true);
    layer.wq = gaussian({d, d}, rng);
    layer.bq = Tensor::zeros({d}, true);
    layer.wk = gaussian({d, d}, rng);
    layer.bk = Tensor::zeros({d}, true);
    layer.wv = gaussian({d, d}, rng);
    layer.bv = Tensor::zeros({d}, true);
    layer.wo = gaussian({d, d}, rng);
    layer.bo = Tensor::zeros({d}, true);
    layer.ln2_gain = Tensor::full({d}, 1.0, true);
    layer.ln2_bias = Tensor::zeros({d}, true);
    layer.ff_w1 = gaussian({d, ff}, rng);
    layer.ff_b1 = Tensor::zeros({ff}, true);
    layer.ff_w2 = gaussian({ff, d}, rng);
    layer.ff_b2 = Tensor::zeros({d}, true);
    p.layers.push_back(std::move(layer));
  }
  p.final_ln_gain = Tensor::full({d}, 1.0, true);
  p.final_ln_bias = Tensor::zeros({d}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named_parameters()
    const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("tok_embed", tok_embed);
  out.emplace_back("pos_embed", pos_embed);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerParams& lp = layers[l];
    std::string prefix = "layer" + std::to_string(l) + ".";
    out.emplace_back(prefix + "ln1.gain", lp.ln1_gain);
    out.emplace_back(prefix + "ln1.bias", lp.ln1_bias);
    out.emplace_back(prefix + "attn.wq", lp.wq);
    out.emplace_back(prefix + "attn.bq", lp.bq);
    out.emplace_back(prefix + "attn.wk", lp.wk);
    out.emplace_back(prefix + "attn.bk", lp.bk);
    out.emplace_back(prefix + "attn.wv", lp.wv);
    out.emplace_back(prefix + "attn.bv", lp.bv);
    out.emplace_back(prefix + "attn.wo", lp.wo);
    out.emplace_back(prefix + "attn.bo", lp.bo);
    out.emplace_back(prefix + "ln2.gain", lp.ln2_gain);
    out.emplace_back(prefix + "ln2.bias", lp.ln2_bias);
    out.emplace_back(prefix + "ff.w1", lp.ff_w1);
    out.emplace_back(prefix + "ff.b1", lp.ff_b1);
    out.emplace_back(prefix + "ff.w2", lp.ff_w2);
    out.emplace_back(prefix + "ff.b2", lp.ff_b2);
  }
  out.emplace_back("final_ln.gain", final_ln_gain);
  out.emplace_back("final_ln.bias", final_ln_bias);
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.size();
  return n;
}

void ModelParams::zero_grad() const {
  for (auto& [name, t] : named_parameters()) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

AttentionTensor ForwardOutput::attention_tensor() const {
  AttentionTensor out;
  out.layers = attention.size();
  if (out.layers == 0) return out;
  out.heads = attention[0].shape()[0];
  out.seq = attention[0].shape()[1];
  out.values.reserve(out.layers * out.heads * out.seq * out.seq);
  for (const Tensor& layer : attention)
    out.values.insert(out.values.end(), layer.values().begin(),
                      layer.values().end());
  return out;
}

ForwardOutput forward(const ModelParams& params, std::span<const int> ids,
                      std::span<const std::uint8_t> valid, GradientTape* tape) {
  const ModelConfig& cfg = params.config;
  std::size_t seq = ids.size();
  if (seq == 0) throw ContractError("forward: empty input");
  if (seq > static_cast<std::size_t>(cfg.max_len))
    throw ContractError("forward: length " + std::to_string(seq) +
                        " exceeds max_len " + std::to_string(cfg.max_len));
  if (!valid.empty() && valid.size() != seq)
    throw ContractError("forward: validity flags length mismatch");

  std::size_t d = static_cast<std::size_t>(cfg.model_dim);
  std::size_t heads = static_cast<std::size_t>(cfg.heads);
  std::size_t dh = static_cast<std::size_t>(cfg.head_dim());

  std::vector<int> positions(seq);
  for (std::size_t i = 0; i < seq; ++i) positions[i] = static_cast<int>(i);

  Tensor x = add(embedding_rows(params.tok_embed, ids, tape),
                 embedding_rows(params.pos_embed, positions, tape), tape);

  // additive key mask, broadcast over (heads, query, key)
  Tensor key_mask;
  if (!valid.empty()) {
    std::vector<double> mask(seq, 0.0);
    for (std::size_t i = 0; i < seq; ++i)
      if (!valid[i]) mask[i] = kMaskedScore;
    key_mask = Tensor::from_data({1, 1, seq}, std::move(mask));
  }

  ForwardOutput out;
  out.attention.reserve(params.layers.size());
  double score_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (const LayerParams& layer : params.layers) {
    Tensor n1 = layer_norm(x, layer.ln1_gain, layer.ln1_bias, kLnEps, tape);
    Tensor q = add(matmul(n1, layer.wq, tape), layer.bq, tape);
    Tensor k = add(matmul(n1, layer.wk, tape), layer.bk, tape);
    Tensor v = add(matmul(n1, layer.wv, tape), layer.bv, tape);

    auto split_heads = [&](const Tensor& t) {
      return transpose(reshape(t, {seq, heads, dh}, tape), {1, 0, 2}, tape);
    };
    Tensor qh = split_heads(q);  // (H, C, dh)
    Tensor kh = split_heads(k);
    Tensor vh = split_heads(v);

    Tensor scores = scale(matmul(qh, transpose(kh, {0, 2, 1}, tape), tape),
                          score_scale, tape);
    if (key_mask.defined()) scores = add(scores, key_mask, tape);
    Tensor attn = softmax(scores, 2, tape);  // (H, C, C)
    out.attention.push_back(attn);

    Tensor ctx = matmul(attn, vh, tape);  // (H, C, dh)
    Tensor merged = reshape(transpose(ctx, {1, 0, 2}, tape), {seq, d}, tape);
    Tensor attn_out = add(matmul(merged, layer.wo, tape), layer.bo, tape);
    x = add(x, attn_out, tape);

    Tensor n2 = layer_norm(x, layer.ln2_gain, layer.ln2_bias, kLnEps, tape);
    Tensor hidden = gelu(add(matmul(n2, layer.ff_w1, tape), layer.ff_b1, tape),
                         tape);
    Tensor ff_out = add(matmul(hidden, layer.ff_w2, tape), layer.ff_b2, tape);
    x = add(x, ff_out, tape);
  }

  Tensor final = layer_norm(x, params.final_ln_gain, params.final_ln_bias,
                            kLnEps, tape);
  out.logits = matmul(final, transpose(params.tok_embed, {1, 0}, tape), tape);
  return out;
}

}  // namespace cattn
