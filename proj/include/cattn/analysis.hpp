#pragma once

#include <string>
#include <utility>

#include "cattn/losses.hpp"
#include "cattn/model.hpp"
#include "cattn/schema.hpp"
#include "cattn/tokenizer.hpp"

namespace cattn {

// Summed MASK-to-candidate attention for one candidate, per head and layer.
struct AttentionMap {
  std::size_t heads = 0, layers = 0;
  std::vector<double> values;  // indexed [head][layer]

  double at(std::size_t h, std::size_t l) const { return values[h * layers + l]; }
  double& at(std::size_t h, std::size_t l) { return values[h * layers + l]; }
  double mean() const;

  // Keeps the last k layer columns.
  AttentionMap last_k(std::size_t k) const;
};

struct Prediction {
  int role = 1;
  bool tie = false;
  double p1 = 0.0, p2 = 0.0;
};

// Argmax of the normalized candidate likelihoods; exact ties go to role 1.
Prediction predict(const ModelParams& params, const EncodedSchema& enc);

struct AccuracyResult {
  double accuracy = 0.0;
  std::size_t evaluated = 0, correct = 0, ties = 0, skipped_unlabeled = 0;
};

// Over pairs flattened plus singles; schemas without gold are excluded and
// counted. An empty evaluable set is an error.
AccuracyResult accuracy(const ModelParams& params, const Corpus& corpus,
                        const Vocab& vocab, std::size_t max_len = 64);

// A_r from the gold candidate's span, A_w from the other.
std::pair<AttentionMap, AttentionMap> attention_maps(const ModelParams& params,
                                                     const EncodedSchema& enc,
                                                     int gold);

struct MapEntropy {
  double nats = 0.0;
  bool degenerate = false;  // zero total mass
};

// Shannon entropy of the map normalized to one distribution over its
// heads x layers cells.
MapEntropy attention_map_entropy(const AttentionMap& map);

struct AnalysisReport {
  std::string dataset;
  std::size_t samples = 0;
  int k = 0;
  double accuracy = 0.0;
  std::size_t ties = 0, skipped_unlabeled = 0, degenerate_maps = 0;
  double entropy_gap_full = 0.0;    // mean |H(A_r) - H(A_w)|
  double entropy_gap_last_k = 0.0;  // same on the last k layers
  double mean_gap_full = 0.0;       // mean |mean(A_r) - mean(A_w)|
  double mean_gap_last_k = 0.0;
  double entropy_right_last_k = 0.0;  // mean H(A_r^[k])
  double entropy_wrong_last_k = 0.0;  // mean H(A_w^[k])
};

AnalysisReport analyze(const ModelParams& params, const Corpus& corpus,
                       const Vocab& vocab, int k, std::size_t max_len = 64);

std::string report_to_json(const AnalysisReport& report);
std::string report_to_csv(const AnalysisReport& report);
AnalysisReport report_from_json(const std::string& text);

// format is "json" or "csv"
void emit_report(const AnalysisReport& report, const std::string& format,
                 const std::string& path);

}  // namespace cattn
