#pragma once

#include <array>
#include <map>
#include <span>
#include <vector>

#include "cattn/model.hpp"
#include "cattn/tokenizer.hpp"

namespace cattn {

// The printed equation scopes its leading -lambda ambiguously. The coherent
// form scales only the two binarization terms and is minimized exactly at
// binarized, twin-flipped attention; the literal form scales the whole
// bracket as printed and is kept behind this switch for fidelity runs.
enum class CaForm { coherent, literal };

struct LossConfig {
  double ca_weight = 1.0;   // lambda
  double cm_weight = 0.05;  // alpha
  double cm_margin = 0.02;  // beta
  int last_k = 3;           // layers entering the attention slice
  CaForm ca_form = CaForm::coherent;
  bool enable_ca = true;
  bool enable_cm = true;

  void validate(int model_layers) const;
};

// Per-head pseudo-likelihoods of the two candidates, over the last k layers
// (layer-major, then head); elementwise the two vectors sum to 1.
struct CandidateAttention {
  Tensor first_candidate;
  Tensor second_candidate;
  int last_k = 0;
  int degenerate_heads = 0;  // heads whose raw mass fell below epsilon
};

// One sentence's normalized candidate likelihoods (scalars, p1 + p2 = 1).
struct SentenceLikelihoods {
  Tensor p1, p2;
};

// Memoizes forward passes by input ids within one loss evaluation; the two
// candidate substitutions of a single-token pair share one pass.
class ForwardMemo {
 public:
  const ForwardOutput& pass(const ModelParams& params,
                            const std::vector<int>& ids, GradientTape* tape);

 private:
  std::map<std::vector<int>, ForwardOutput> cache_;
};

// MASK-row attention mass per head, summed over each candidate's span and
// normalized across the two candidates. A head where both candidates receive
// ~zero mass falls back to (1/2, 1/2) and is counted as degenerate.
CandidateAttention slice_candidate_attention(
    const std::vector<Tensor>& layer_attention, std::size_t mask_position,
    const std::array<TokenSpan, 2>& candidate_spans, int last_k,
    GradientTape* tape = nullptr);

// Substitutes each candidate, scores its tokens at the masked positions via
// log-softmax, averages, exponentiates, and normalizes the two raw scores.
SentenceLikelihoods score_candidate_likelihood(const ModelParams& params,
                                               const EncodedSchema& enc,
                                               GradientTape* tape = nullptr,
                                               ForwardMemo* memo = nullptr);

Tensor contrastive_attention_loss(const CandidateAttention& first,
                                  const CandidateAttention& second,
                                  const LossConfig& cfg,
                                  GradientTape* tape = nullptr);

Tensor contrastive_margin_loss(std::span<const SentenceLikelihoods> sentences,
                               const LossConfig& cfg,
                               GradientTape* tape = nullptr);

struct LossDiagnostics {
  double total = 0.0;
  double ca_term = 0.0;
  double cm_term = 0.0;
  std::array<double, 2> margins = {0.0, 0.0};  // |p1 - p2| per sentence
  int degenerate_heads = 0;
};

struct PairLoss {
  Tensor loss;
  LossDiagnostics diagnostics;
};

// Sum of the enabled terms for one twin pair. Gold labels play no part in
// any of this; the trainer additionally strips them before encoding.
PairLoss total_loss(const ModelParams& params, const EncodedSchema& first,
                    const EncodedSchema& second, const LossConfig& cfg,
                    GradientTape* tape = nullptr);

}  // namespace cattn
