#pragma once

#include <optional>
#include <string>
#include <vector>

#include "cattn/losses.hpp"
#include "cattn/model.hpp"
#include "cattn/schema.hpp"
#include "cattn/tokenizer.hpp"

namespace cattn {

struct TrainConfig {
  int epochs = 22;
  int batch_pairs = 18;
  double learning_rate = 1e-5;  // fine-tuning default
  LossConfig loss;
  std::uint64_t seed = 1;
  int checkpoint_every = 0;  // epochs between checkpoints; 0 = final only
  std::optional<double> grad_clip;
  double weight_decay = 0.0;   // decoupled, matrices only
  int ca_warmup_epochs = 0;    // epochs with the binarization weight at zero

  // An untrained start needs a larger rate plus clipping, and a warm-up
  // phase where only the mutual-exclusivity terms act: from random init the
  // twins' attention difference is near zero, and full-strength binarization
  // drives both twins to the same pole before that difference can grow.
  static TrainConfig from_scratch_defaults() {
    TrainConfig cfg;
    cfg.learning_rate = 3e-4;
    cfg.grad_clip = 1.0;
    cfg.ca_warmup_epochs = 20;
    return cfg;
  }

  void validate() const;
};

struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> first_moment;   // one per named parameter
  std::vector<std::vector<double>> second_moment;

  static AdamState for_params(const ModelParams& params);
};

// Bias-corrected Adam over the gradients accumulated on the parameter
// tensors; parameters with no accumulated gradient are treated as zero-grad.
// A non-finite gradient aborts with the parameter's name. weight_decay is
// decoupled and applies to matrices only (never biases or norm gains).
void adam_step(const ModelParams& params, AdamState& state, double lr,
               double weight_decay = 0.0);

struct EpochMetrics {
  std::size_t epoch = 0;
  std::size_t pairs_seen = 0;
  std::size_t steps = 0;
  std::size_t skipped_pairs = 0;
  double mean_loss = 0.0;
  double mean_ca = 0.0;
  double mean_cm = 0.0;
  double mean_margin = 0.0;
  double step_loss_variance = 0.0;  // fluctuation instrumentation
  std::size_t degenerate_heads = 0;
  std::optional<double> eval_accuracy;
};

// One pass over the pairs: deterministic shuffle per (seed, epoch), gold
// labels stripped before encoding, per-batch gradient accumulation in pair
// order, optional global-norm clipping, one Adam step per batch.
EpochMetrics train_epoch(ModelParams& params, const std::vector<TwinPair>& pairs,
                         const Vocab& vocab, const TrainConfig& cfg,
                         AdamState& state, std::size_t epoch_index);

struct TrainResult {
  ModelParams params;
  Vocab vocab;
  std::vector<EpochMetrics> history;
  std::string checkpoint_path;
  std::string metrics_path;
};

// Full run: builds the vocabulary over the training corpus (plus the eval
// corpus when attached, so held-out lexemes stay encodable), trains, writes
// line-delimited metrics and checkpoints under out_dir.
TrainResult run_training(const ModelConfig& model_cfg, const TrainConfig& cfg,
                         const Corpus& train_corpus, const Corpus* eval_corpus,
                         const std::string& out_dir,
                         const std::string& resolved_config_json = "{}");

}  // namespace cattn
