#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace cattn {

// Half-open character range [begin, end) into a schema's text.
struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  bool operator==(const CharSpan&) const = default;
};

struct Candidate {
  std::string surface;
  int role = 0;  // 1 or 2, position in the ordered candidate pair
};

// One Winograd-style sentence: an ambiguous pronoun plus an ordered pair of
// noun-phrase candidates. gold is the evaluation-only answer.
struct WinogradSchema {
  std::string text;
  CharSpan pronoun_span;
  std::array<Candidate, 2> candidates;
  std::optional<int> gold;
  std::string twin_id;
};

struct TwinPair {
  WinogradSchema first;
  WinogradSchema second;

  TwinPair without_gold() const;
};

struct Corpus {
  std::string name;
  std::vector<TwinPair> pairs;
  std::vector<WinogradSchema> singles;

  std::size_t schema_count() const { return 2 * pairs.size() + singles.size(); }
};

// First occurrence of `surface` in `text` outside `exclude`, matched
// case-insensitively with a leading article (the/a/an) stripped from the
// surface. Whole-word boundaries are required on both ends.
std::optional<CharSpan> find_candidate_span(const std::string& text,
                                            const std::string& surface,
                                            CharSpan exclude);

std::string strip_article(const std::string& surface);
std::string lowercase(const std::string& s);

// Throw DataError if a schema or twin violates its invariants.
void validate_schema(const WinogradSchema& schema);
void validate_twin(const TwinPair& pair);

}  // namespace cattn
