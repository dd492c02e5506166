#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cattn/schema.hpp"

namespace cattn {

// One trigger word pair; the first word makes `first_gold` the answer, the
// second word flips it.
struct TriggerPair {
  std::string first;
  std::string second;
  int first_gold = 1;
};

// Sentence pattern with the placeholders {1} {2} {it} {T} for the two
// candidates, the pronoun and the trigger word.
struct SentenceTemplate {
  std::string pattern;
  std::vector<TriggerPair> triggers;
};

struct GeneratorSpec {
  std::vector<std::pair<std::string, std::string>> object_pairs;
  std::vector<SentenceTemplate> templates;

  static GeneratorSpec builtin_default();
};

// Flat key=value format:
//   objects = trophy/suitcase, ball/box
//   template.1.text = the {1} could not fit in the {2} because {it} was too {T}
//   template.1.triggers = big>1, small>2; large>1, tiny>2
GeneratorSpec parse_generator_spec(const std::string& content);

// Deterministically draws `pair_count` twin pairs from the cartesian product
// of object pairs, templates and trigger pairs. Gold labels are attached for
// evaluation only.
Corpus generate_synthetic(const GeneratorSpec& spec, std::size_t pair_count,
                          std::uint64_t seed);

// Splits at TwinPair granularity, grouping by the ordered candidate-surface
// pair so held-out object pairs never share lexemes with training. The
// held-out fraction lands in the second corpus.
std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus,
                                       double held_out_fraction,
                                       std::uint64_t seed);

}  // namespace cattn
