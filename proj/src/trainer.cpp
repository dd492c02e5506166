#include "cattn/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "cattn/analysis.hpp"
#include "cattn/checkpoint.hpp"
#include "cattn/errors.hpp"
#include "cattn/rng.hpp"

namespace cattn {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train config: epochs must be >= 0");
  if (batch_pairs <= 0)
    throw ConfigError("train config: batch_pairs must be positive");
  if (!(learning_rate > 0.0))
    throw ConfigError("train config: learning rate must be positive");
  if (grad_clip && !(*grad_clip > 0.0))
    throw ConfigError("train config: grad clip must be positive");
  if (weight_decay < 0.0)
    throw ConfigError("train config: weight decay must be non-negative");
  if (ca_warmup_epochs < 0)
    throw ConfigError("train config: warm-up epochs must be non-negative");
}

AdamState AdamState::for_params(const ModelParams& params) {
  AdamState state;
  for (const auto& [name, tensor] : params.named_parameters()) {
    state.first_moment.emplace_back(tensor.size(), 0.0);
    state.second_moment.emplace_back(tensor.size(), 0.0);
  }
  return state;
}

void adam_step(const ModelParams& params, AdamState& state, double lr,
               double weight_decay) {
  auto named = params.named_parameters();
  if (named.size() != state.first_moment.size())
    throw ContractError("adam_step: state does not match parameter list");

  ++state.step;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));

  for (std::size_t i = 0; i < named.size(); ++i) {
    Tensor handle = named[i].second;
    auto grad = handle.grad();
    auto value = handle.values_mut();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    double decay = handle.rank() >= 2 ? weight_decay : 0.0;
    for (std::size_t j = 0; j < value.size(); ++j) {
      double g = j < grad.size() ? grad[j] : 0.0;
      if (!std::isfinite(g))
        throw NumericError("adam_step: non-finite gradient in parameter \"" +
                           named[i].first + "\"");
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      double m_hat = m[j] / bc1;
      double v_hat = v[j] / bc2;
      value[j] -= lr * (m_hat / (std::sqrt(v_hat) + state.eps) + decay * value[j]);
    }
  }
}

namespace {

double global_grad_norm(const ModelParams& params) {
  double acc = 0.0;
  for (const auto& [name, tensor] : params.named_parameters())
    for (double g : tensor.grad()) acc += g * g;
  return std::sqrt(acc);
}

}  // namespace

EpochMetrics train_epoch(ModelParams& params, const std::vector<TwinPair>& pairs,
                         const Vocab& vocab, const TrainConfig& cfg,
                         AdamState& state, std::size_t epoch_index) {
  cfg.validate();
  cfg.loss.validate(params.config.layers);

  EpochMetrics metrics;
  metrics.epoch = epoch_index;
  if (pairs.empty()) return metrics;

  LossConfig loss_cfg = cfg.loss;
  if (loss_cfg.enable_ca &&
      epoch_index < static_cast<std::size_t>(cfg.ca_warmup_epochs))
    loss_cfg.ca_weight = 0.0;

  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + epoch_index);
  rng.shuffle(order);

  std::size_t max_len = static_cast<std::size_t>(params.config.max_len);
  double loss_sum = 0.0;
  std::vector<double> step_losses;

  std::size_t cursor = 0;
  while (cursor < order.size()) {
    std::size_t batch_end =
        std::min(cursor + static_cast<std::size_t>(cfg.batch_pairs),
                 order.size());
    params.zero_grad();
    double batch_loss = 0.0;
    std::size_t batch_pairs_used = 0;

    for (std::size_t b = cursor; b < batch_end; ++b) {
      TwinPair pair = pairs[order[b]].without_gold();
      EncodedSchema first, second;
      try {
        first = encode_masked(pair.first, vocab, max_len);
        second = encode_masked(pair.second, vocab, max_len);
      } catch (const DataError&) {
        ++metrics.skipped_pairs;
        continue;
      }
      GradientTape tape;
      PairLoss pair_loss = total_loss(params, first, second, loss_cfg, &tape);
      tape.backward(pair_loss.loss);

      batch_loss += pair_loss.diagnostics.total;
      metrics.mean_ca += pair_loss.diagnostics.ca_term;
      metrics.mean_cm += pair_loss.diagnostics.cm_term;
      metrics.mean_margin += (pair_loss.diagnostics.margins[0] +
                              pair_loss.diagnostics.margins[1]) /
                             2.0;
      metrics.degenerate_heads +=
          static_cast<std::size_t>(pair_loss.diagnostics.degenerate_heads);
      ++batch_pairs_used;
    }

    if (batch_pairs_used > 0) {
      if (cfg.grad_clip) {
        double norm = global_grad_norm(params);
        if (norm > *cfg.grad_clip) {
          double factor = *cfg.grad_clip / norm;
          for (auto& [name, tensor] : params.named_parameters()) {
            Tensor handle = tensor;
            for (double& g : handle.grad_mut()) g *= factor;
          }
        }
      }
      adam_step(params, state, cfg.learning_rate, cfg.weight_decay);
      ++metrics.steps;
      step_losses.push_back(batch_loss);
      loss_sum += batch_loss;
      metrics.pairs_seen += batch_pairs_used;
    }
    cursor = batch_end;
  }

  if (metrics.pairs_seen > 0) {
    metrics.mean_loss = loss_sum / static_cast<double>(metrics.pairs_seen);
    metrics.mean_ca /= static_cast<double>(metrics.pairs_seen);
    metrics.mean_cm /= static_cast<double>(metrics.pairs_seen);
    metrics.mean_margin /= static_cast<double>(metrics.pairs_seen);
  }
  if (step_losses.size() > 1) {
    double mean = loss_sum / static_cast<double>(step_losses.size());
    double var = 0.0;
    for (double l : step_losses) var += (l - mean) * (l - mean);
    metrics.step_loss_variance = var / static_cast<double>(step_losses.size());
  }
  return metrics;
}

namespace {

nlohmann::ordered_json metrics_json(const EpochMetrics& m) {
  nlohmann::ordered_json j;
  j["epoch"] = m.epoch;
  j["pairs"] = m.pairs_seen;
  j["steps"] = m.steps;
  j["skipped"] = m.skipped_pairs;
  j["mean_loss"] = m.mean_loss;
  j["mean_ca"] = m.mean_ca;
  j["mean_cm"] = m.mean_cm;
  j["mean_margin"] = m.mean_margin;
  j["step_loss_variance"] = m.step_loss_variance;
  j["degenerate_heads"] = m.degenerate_heads;
  if (m.eval_accuracy) j["eval_accuracy"] = *m.eval_accuracy;
  return j;
}

}  // namespace

TrainResult run_training(const ModelConfig& model_cfg, const TrainConfig& cfg,
                         const Corpus& train_corpus, const Corpus* eval_corpus,
                         const std::string& out_dir,
                         const std::string& resolved_config_json) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);

  // vocabulary over everything this run will ever need to encode
  Corpus vocab_corpus = train_corpus;
  if (eval_corpus) {
    vocab_corpus.pairs.insert(vocab_corpus.pairs.end(),
                              eval_corpus->pairs.begin(),
                              eval_corpus->pairs.end());
    vocab_corpus.singles.insert(vocab_corpus.singles.end(),
                                eval_corpus->singles.begin(),
                                eval_corpus->singles.end());
  }
  Vocab vocab = Vocab::build(vocab_corpus, 1);

  ModelConfig resolved_model = model_cfg;
  resolved_model.vocab_size = static_cast<int>(vocab.size());
  ModelParams params = init_params(resolved_model);
  AdamState state = AdamState::for_params(params);

  TrainResult result;
  result.metrics_path = out_dir + "/metrics.jsonl";
  result.checkpoint_path = out_dir + "/checkpoint.bin";

  std::ofstream log(result.metrics_path, std::ios::binary);
  if (!log) throw DataError("cannot write metrics log: " + result.metrics_path);
  log << resolved_config_json << "\n";

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochMetrics m = train_epoch(params, train_corpus.pairs, vocab, cfg, state,
                                 static_cast<std::size_t>(epoch));
    if (eval_corpus)
      m.eval_accuracy =
          accuracy(params, *eval_corpus, vocab,
                   static_cast<std::size_t>(resolved_model.max_len))
              .accuracy;
    log << metrics_json(m).dump() << "\n";
    result.history.push_back(std::move(m));

    if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 &&
        epoch + 1 < cfg.epochs)
      save_checkpoint(params, vocab,
                      out_dir + "/checkpoint_epoch" + std::to_string(epoch + 1) +
                          ".bin");
  }
  log.flush();
  if (!log) throw DataError("metrics log write failed: " + result.metrics_path);

  save_checkpoint(params, vocab, result.checkpoint_path);
  result.params = std::move(params);
  result.vocab = std::move(vocab);
  return result;
}

}  // namespace cattn
