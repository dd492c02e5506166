#include "cattn/analysis.hpp"

#include <cmath>
#include <json.hpp>

#include "cattn/errors.hpp"
#include "cattn/parsers.hpp"

namespace cattn {

double AttentionMap::mean() const {
  if (values.empty()) return 0.0;
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc / static_cast<double>(values.size());
}

AttentionMap AttentionMap::last_k(std::size_t k) const {
  if (k > layers)
    throw ContractError("attention map: last_k " + std::to_string(k) +
                        " exceeds layer count " + std::to_string(layers));
  AttentionMap out;
  out.heads = heads;
  out.layers = k;
  out.values.reserve(heads * k);
  for (std::size_t h = 0; h < heads; ++h)
    for (std::size_t l = layers - k; l < layers; ++l)
      out.values.push_back(at(h, l));
  return out;
}

Prediction predict(const ModelParams& params, const EncodedSchema& enc) {
  SentenceLikelihoods p = score_candidate_likelihood(params, enc);
  Prediction out;
  out.p1 = p.p1.scalar_value();
  out.p2 = p.p2.scalar_value();
  if (out.p1 == out.p2) {
    out.role = 1;
    out.tie = true;
  } else {
    out.role = out.p1 > out.p2 ? 1 : 2;
  }
  return out;
}

namespace {

// Every gold-labeled schema of the corpus, pairs flattened before singles.
std::vector<const WinogradSchema*> labeled_schemas(const Corpus& corpus,
                                                   std::size_t* skipped) {
  std::vector<const WinogradSchema*> out;
  auto consider = [&](const WinogradSchema& s) {
    if (s.gold)
      out.push_back(&s);
    else if (skipped)
      ++*skipped;
  };
  for (const TwinPair& pair : corpus.pairs) {
    consider(pair.first);
    consider(pair.second);
  }
  for (const WinogradSchema& s : corpus.singles) consider(s);
  return out;
}

}  // namespace

AccuracyResult accuracy(const ModelParams& params, const Corpus& corpus,
                        const Vocab& vocab, std::size_t max_len) {
  AccuracyResult result;
  auto schemas = labeled_schemas(corpus, &result.skipped_unlabeled);
  if (schemas.empty())
    throw NumericError("accuracy: corpus \"" + corpus.name +
                       "\" has no gold-labeled schemas");
  for (const WinogradSchema* s : schemas) {
    EncodedSchema enc = encode_masked(*s, vocab, max_len);
    Prediction pred = predict(params, enc);
    ++result.evaluated;
    if (pred.tie) ++result.ties;
    if (pred.role == *s->gold) ++result.correct;
  }
  result.accuracy =
      static_cast<double>(result.correct) / static_cast<double>(result.evaluated);
  return result;
}

std::pair<AttentionMap, AttentionMap> attention_maps(const ModelParams& params,
                                                     const EncodedSchema& enc,
                                                     int gold) {
  if (gold != 1 && gold != 2)
    throw ContractError("attention_maps: gold role must be 1 or 2, got " +
                        std::to_string(gold));
  ForwardOutput out = forward(params, enc.ids);
  AttentionTensor attn = out.attention_tensor();

  auto build = [&](const TokenSpan& span) {
    AttentionMap map;
    map.heads = attn.heads;
    map.layers = attn.layers;
    map.values.assign(map.heads * map.layers, 0.0);
    for (std::size_t h = 0; h < map.heads; ++h)
      for (std::size_t l = 0; l < map.layers; ++l) {
        double acc = 0.0;
        for (std::size_t t = 0; t < span.len; ++t)
          acc += attn.at(l, h, enc.mask_position, span.begin + t);
        map.at(h, l) = acc;
      }
    return map;
  };

  const TokenSpan& right_span = enc.candidate_spans[gold == 1 ? 0 : 1];
  const TokenSpan& wrong_span = enc.candidate_spans[gold == 1 ? 1 : 0];
  return {build(right_span), build(wrong_span)};
}

MapEntropy attention_map_entropy(const AttentionMap& map) {
  double total = 0.0;
  for (double v : map.values) total += v;
  if (!(total > 0.0)) return {0.0, true};
  double h = 0.0;
  for (double v : map.values) {
    if (v <= 0.0) continue;
    double q = v / total;
    h -= q * std::log(q);
  }
  return {h, false};
}

AnalysisReport analyze(const ModelParams& params, const Corpus& corpus,
                       const Vocab& vocab, int k, std::size_t max_len) {
  if (k < 1 || k > params.config.layers)
    throw ConfigError("analyze: k " + std::to_string(k) +
                      " must lie in [1, " +
                      std::to_string(params.config.layers) + "]");

  AnalysisReport report;
  report.dataset = corpus.name;
  report.k = k;

  auto schemas = labeled_schemas(corpus, &report.skipped_unlabeled);
  if (schemas.empty())
    throw NumericError("analyze: corpus \"" + corpus.name +
                       "\" has no gold-labeled schemas");

  std::size_t kk = static_cast<std::size_t>(k);
  for (const WinogradSchema* s : schemas) {
    EncodedSchema enc = encode_masked(*s, vocab, max_len);

    Prediction pred = predict(params, enc);
    if (pred.tie) ++report.ties;
    if (pred.role == *s->gold) ++report.accuracy;  // raw count for now

    auto [right, wrong] = attention_maps(params, enc, *s->gold);
    AttentionMap right_k = right.last_k(kk);
    AttentionMap wrong_k = wrong.last_k(kk);

    MapEntropy hr = attention_map_entropy(right);
    MapEntropy hw = attention_map_entropy(wrong);
    MapEntropy hrk = attention_map_entropy(right_k);
    MapEntropy hwk = attention_map_entropy(wrong_k);
    if (hr.degenerate || hw.degenerate || hrk.degenerate || hwk.degenerate)
      ++report.degenerate_maps;

    report.entropy_gap_full += std::abs(hr.nats - hw.nats);
    report.entropy_gap_last_k += std::abs(hrk.nats - hwk.nats);
    report.mean_gap_full += std::abs(right.mean() - wrong.mean());
    report.mean_gap_last_k += std::abs(right_k.mean() - wrong_k.mean());
    report.entropy_right_last_k += hrk.nats;
    report.entropy_wrong_last_k += hwk.nats;
    ++report.samples;
  }

  double n = static_cast<double>(report.samples);
  report.accuracy /= n;
  report.entropy_gap_full /= n;
  report.entropy_gap_last_k /= n;
  report.mean_gap_full /= n;
  report.mean_gap_last_k /= n;
  report.entropy_right_last_k /= n;
  report.entropy_wrong_last_k /= n;
  return report;
}

namespace {

nlohmann::ordered_json report_json(const AnalysisReport& r) {
  nlohmann::ordered_json j;
  j["dataset"] = r.dataset;
  j["samples"] = r.samples;
  j["k"] = r.k;
  j["accuracy"] = r.accuracy;
  j["ties"] = r.ties;
  j["skipped_unlabeled"] = r.skipped_unlabeled;
  j["degenerate_maps"] = r.degenerate_maps;
  j["entropy_gap_full"] = r.entropy_gap_full;
  j["entropy_gap_last_k"] = r.entropy_gap_last_k;
  j["mean_gap_full"] = r.mean_gap_full;
  j["mean_gap_last_k"] = r.mean_gap_last_k;
  j["entropy_right_last_k"] = r.entropy_right_last_k;
  j["entropy_wrong_last_k"] = r.entropy_wrong_last_k;
  return j;
}

}  // namespace

std::string report_to_json(const AnalysisReport& report) {
  return report_json(report).dump(2) + "\n";
}

AnalysisReport report_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw DataError("report: invalid JSON");
  AnalysisReport r;
  r.dataset = j.at("dataset").get<std::string>();
  r.samples = j.at("samples").get<std::size_t>();
  r.k = j.at("k").get<int>();
  r.accuracy = j.at("accuracy").get<double>();
  r.ties = j.at("ties").get<std::size_t>();
  r.skipped_unlabeled = j.at("skipped_unlabeled").get<std::size_t>();
  r.degenerate_maps = j.at("degenerate_maps").get<std::size_t>();
  r.entropy_gap_full = j.at("entropy_gap_full").get<double>();
  r.entropy_gap_last_k = j.at("entropy_gap_last_k").get<double>();
  r.mean_gap_full = j.at("mean_gap_full").get<double>();
  r.mean_gap_last_k = j.at("mean_gap_last_k").get<double>();
  r.entropy_right_last_k = j.at("entropy_right_last_k").get<double>();
  r.entropy_wrong_last_k = j.at("entropy_wrong_last_k").get<double>();
  return r;
}

std::string report_to_csv(const AnalysisReport& r) {
  nlohmann::ordered_json j = report_json(r);
  std::string header, row;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!header.empty()) {
      header += ',';
      row += ',';
    }
    header += it.key();
    row += it.value().is_string() ? it.value().get<std::string>()
                                  : it.value().dump();
  }
  return header + "\n" + row + "\n";
}

void emit_report(const AnalysisReport& report, const std::string& format,
                 const std::string& path) {
  if (format == "json")
    write_file(path, report_to_json(report));
  else if (format == "csv")
    write_file(path, report_to_csv(report));
  else
    throw ConfigError("emit_report: format must be json or csv, got \"" +
                      format + "\"");
}

}  // namespace cattn
