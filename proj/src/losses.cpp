#include "cattn/losses.hpp"

#include <cmath>

#include "cattn/errors.hpp"

namespace cattn {

namespace {
constexpr double kDegenerateEps = 1e-12;
}

void LossConfig::validate(int model_layers) const {
  if (ca_weight < 0.0 || cm_weight < 0.0)
    throw ConfigError("loss config: weights must be non-negative");
  if (last_k < 1 || last_k > model_layers)
    throw ConfigError("loss config: last_k " + std::to_string(last_k) +
                      " must lie in [1, " + std::to_string(model_layers) + "]");
  if (!enable_ca && !enable_cm)
    throw ConfigError("loss config: both loss terms are disabled");
}

const ForwardOutput& ForwardMemo::pass(const ModelParams& params,
                                       const std::vector<int>& ids,
                                       GradientTape* tape) {
  auto it = cache_.find(ids);
  if (it == cache_.end())
    it = cache_.emplace(ids, forward(params, ids, {}, tape)).first;
  return it->second;
}

CandidateAttention slice_candidate_attention(
    const std::vector<Tensor>& layer_attention, std::size_t mask_position,
    const std::array<TokenSpan, 2>& candidate_spans, int last_k,
    GradientTape* tape) {
  const std::size_t total_layers = layer_attention.size();
  if (last_k < 1 || static_cast<std::size_t>(last_k) > total_layers)
    throw ContractError("slice_candidate_attention: last_k " +
                        std::to_string(last_k) + " out of range for " +
                        std::to_string(total_layers) + " layers");

  // raw per-head mass for one candidate in one layer
  auto raw_mass = [&](const Tensor& attn, const TokenSpan& span) {
    std::size_t heads = attn.shape()[0];
    std::size_t seq = attn.shape()[1];
    if (mask_position >= seq || span.begin + span.len > seq)
      throw ContractError("slice_candidate_attention: span outside sequence");
    std::vector<std::size_t> indices;
    indices.reserve(heads * span.len);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < span.len; ++t)
        indices.push_back((h * seq + mask_position) * seq + span.begin + t);
    Tensor picked = gather(attn, indices, tape);
    return sum_axis(reshape(picked, {heads, span.len}, tape), 1, tape);
  };

  std::vector<Tensor> raw1_layers, raw2_layers;
  for (std::size_t l = total_layers - static_cast<std::size_t>(last_k);
       l < total_layers; ++l) {
    raw1_layers.push_back(raw_mass(layer_attention[l], candidate_spans[0]));
    raw2_layers.push_back(raw_mass(layer_attention[l], candidate_spans[1]));
  }
  Tensor raw1 = concat(raw1_layers, tape);  // (k*H), layer-major
  Tensor raw2 = concat(raw2_layers, tape);

  Tensor total = add(raw1, raw2, tape);
  std::size_t m = total.size();
  std::vector<double> degenerate(m, 0.0), live(m, 0.0);
  int degenerate_count = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (total.values()[i] < kDegenerateEps) {
      degenerate[i] = 1.0;
      ++degenerate_count;
    } else {
      live[i] = 1.0;
    }
  }
  Tensor deg = Tensor::from_data({m}, std::move(degenerate));
  Tensor live_mask = Tensor::from_data({m}, std::move(live));
  // degenerate heads divide by a shifted denominator, then get masked to 1/2;
  // this keeps the division finite without touching live heads
  Tensor safe_total = add(total, deg, tape);
  auto normalized = [&](const Tensor& raw) {
    return add(mul(div(raw, safe_total, tape), live_mask, tape),
               scale(deg, 0.5, tape), tape);
  };

  CandidateAttention out;
  out.first_candidate = normalized(raw1);
  out.second_candidate = normalized(raw2);
  out.last_k = last_k;
  out.degenerate_heads = degenerate_count;
  return out;
}

SentenceLikelihoods score_candidate_likelihood(const ModelParams& params,
                                               const EncodedSchema& enc,
                                               GradientTape* tape,
                                               ForwardMemo* memo) {
  ForwardMemo local;
  if (!memo) memo = &local;

  std::array<Tensor, 2> raw;
  for (int role = 1; role <= 2; ++role) {
    SubstitutedSchema sub = substitute_candidate(
        enc, role, static_cast<std::size_t>(params.config.max_len));
    const ForwardOutput& out = memo->pass(params, sub.ids, tape);
    Tensor logp = log_softmax(out.logits, 1, tape);
    std::size_t vocab = static_cast<std::size_t>(params.config.vocab_size);
    std::vector<std::size_t> indices;
    indices.reserve(sub.target_ids.size());
    for (std::size_t i = 0; i < sub.target_ids.size(); ++i)
      indices.push_back(sub.mask_positions[i] * vocab +
                        static_cast<std::size_t>(sub.target_ids[i]));
    raw[role - 1] = exp(mean(gather(logp, indices, tape), tape), tape);
  }
  Tensor total = add(raw[0], raw[1], tape);
  SentenceLikelihoods out;
  out.p1 = div(raw[0], total, tape);
  out.p2 = div(raw[1], total, tape);
  return out;
}

Tensor contrastive_attention_loss(const CandidateAttention& first,
                                  const CandidateAttention& second,
                                  const LossConfig& cfg, GradientTape* tape) {
  if (first.last_k != second.last_k ||
      first.first_candidate.size() != second.first_candidate.size())
    throw ContractError("contrastive_attention_loss: twin slices disagree (k " +
                        std::to_string(first.last_k) + " vs " +
                        std::to_string(second.last_k) + ")");

  std::size_t m = first.first_candidate.size();
  Tensor half = Tensor::full({m}, 0.5);
  Tensor ones = Tensor::full({m}, 1.0);

  Tensor total;
  for (int j = 0; j < 2; ++j) {
    const Tensor& a_i = j == 0 ? first.first_candidate : first.second_candidate;
    const Tensor& a_i1 =
        j == 0 ? second.first_candidate : second.second_candidate;

    Tensor binarization = add(square(sub(a_i, half, tape), tape),
                              square(sub(a_i1, half, tape), tape), tape);
    Tensor mex_a = sub(ones, square(sub(a_i, a_i1, tape), tape), tape);
    // identical in value to mex_a; written out so coefficients match the
    // printed equation
    Tensor mex_b = sub(ones,
                       square(sub(sub(ones, a_i, tape), sub(ones, a_i1, tape),
                                  tape), tape),
                       tape);
    Tensor mex = add(mex_a, mex_b, tape);

    Tensor candidate_term;
    if (cfg.ca_form == CaForm::coherent)
      candidate_term =
          sum(add(scale(binarization, -cfg.ca_weight, tape), mex, tape), tape);
    else
      candidate_term = scale(sum(add(binarization, mex, tape), tape),
                             -cfg.ca_weight, tape);
    total = total.defined() ? add(total, candidate_term, tape) : candidate_term;
  }
  return total;
}

Tensor contrastive_margin_loss(std::span<const SentenceLikelihoods> sentences,
                               const LossConfig& cfg, GradientTape* tape) {
  // max(0, .) as printed; it only bites if the margin offset is configured
  // negative, since |p1 - p2| + beta > 0 otherwise
  Tensor offset = Tensor::scalar(cfg.cm_margin);
  Tensor total;
  for (const SentenceLikelihoods& s : sentences) {
    Tensor gap = cattn::abs(sub(s.p1, s.p2, tape), tape);
    Tensor hinge = relu(add(gap, offset, tape), tape);
    total = total.defined() ? add(total, hinge, tape) : hinge;
  }
  if (!total.defined())
    throw ContractError("contrastive_margin_loss: no sentences");
  return scale(total, -cfg.cm_weight, tape);
}

PairLoss total_loss(const ModelParams& params, const EncodedSchema& first,
                    const EncodedSchema& second, const LossConfig& cfg,
                    GradientTape* tape) {
  cfg.validate(params.config.layers);

  ForwardMemo memo;
  PairLoss result;
  Tensor loss;

  if (cfg.enable_ca) {
    const ForwardOutput& out1 = memo.pass(params, first.ids, tape);
    const ForwardOutput& out2 = memo.pass(params, second.ids, tape);
    CandidateAttention slice1 = slice_candidate_attention(
        out1.attention, first.mask_position, first.candidate_spans,
        cfg.last_k, tape);
    CandidateAttention slice2 = slice_candidate_attention(
        out2.attention, second.mask_position, second.candidate_spans,
        cfg.last_k, tape);
    Tensor ca = contrastive_attention_loss(slice1, slice2, cfg, tape);
    result.diagnostics.ca_term = ca.scalar_value();
    result.diagnostics.degenerate_heads =
        slice1.degenerate_heads + slice2.degenerate_heads;
    loss = ca;
  }

  if (cfg.enable_cm) {
    std::array<SentenceLikelihoods, 2> rows = {
        score_candidate_likelihood(params, first, tape, &memo),
        score_candidate_likelihood(params, second, tape, &memo)};
    Tensor cm = contrastive_margin_loss(rows, cfg, tape);
    result.diagnostics.cm_term = cm.scalar_value();
    for (int i = 0; i < 2; ++i)
      result.diagnostics.margins[static_cast<std::size_t>(i)] =
          std::abs(rows[static_cast<std::size_t>(i)].p1.scalar_value() -
                   rows[static_cast<std::size_t>(i)].p2.scalar_value());
    loss = loss.defined() ? add(loss, cm, tape) : cm;
  }

  result.loss = loss;
  result.diagnostics.total = loss.scalar_value();
  return result;
}

}  // namespace cattn
