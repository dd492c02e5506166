#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cattn/schema.hpp"

namespace cattn {

struct WordToken {
  std::string text;       // lowercased
  std::size_t begin = 0;  // char offsets into the original text
  std::size_t end = 0;
};

// Lowercasing word tokenizer: runs of letters/digits/apostrophes are words,
// any other non-space character is its own token.
std::vector<WordToken> word_tokenize(const std::string& text);

class Vocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kMask = 1;
  static constexpr int kUnk = 2;
  static constexpr int kBos = 3;
  static constexpr int kEos = 4;
  static constexpr std::size_t kReservedCount = 5;

  // Deterministic: tokens sorted by frequency, ties broken lexicographically;
  // tokens below min_count encode to UNK.
  static Vocab build(const Corpus& corpus, std::size_t min_count = 1);

  int id(const std::string& token) const;
  const std::string& token(int id) const;
  std::size_t size() const { return tokens_.size(); }

  // token-per-line, id order; embedded in the checkpoint bundle
  std::string to_text() const;
  static Vocab from_text(const std::string& text);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;

  void add(const std::string& token);
};

struct TokenSpan {
  std::size_t begin = 0;
  std::size_t len = 0;
  bool operator==(const TokenSpan&) const = default;
};

// Token-id view of one schema: BOS ... EOS with the pronoun replaced by a
// single MASK and both candidate spans located in token coordinates.
struct EncodedSchema {
  std::vector<int> ids;
  std::size_t mask_position = 0;
  std::array<TokenSpan, 2> candidate_spans;
  WinogradSchema source;

  std::size_t length() const { return ids.size(); }
};

EncodedSchema encode_masked(const WinogradSchema& schema, const Vocab& vocab,
                            std::size_t max_len = 64);

// The masked sentence with the pronoun position expanded to one MASK per
// candidate token; target_ids are what the model should predict there.
struct SubstitutedSchema {
  std::vector<int> ids;
  std::vector<int> target_ids;
  std::vector<std::size_t> mask_positions;
  std::array<TokenSpan, 2> candidate_spans;
};

SubstitutedSchema substitute_candidate(const EncodedSchema& enc, int role,
                                       std::size_t max_len = 64);

// Space-joined token surface, skipping PAD/BOS/EOS. Round-trip helper.
std::string decode_tokens(std::span<const int> ids, const Vocab& vocab);

}  // namespace cattn
