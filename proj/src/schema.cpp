#include "cattn/schema.hpp"

#include <algorithm>
#include <cctype>

#include "cattn/errors.hpp"

namespace cattn {

namespace {

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '\'';
}

bool overlaps(std::size_t begin, std::size_t end, CharSpan span) {
  return begin < span.end && span.begin < end;
}

}  // namespace

std::string lowercase(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) {
    return static_cast<char>(std::tolower(c));
  });
  return out;
}

std::string strip_article(const std::string& surface) {
  std::string s = surface;
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
    s.erase(s.begin());
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
    s.pop_back();
  std::string low = lowercase(s);
  for (const char* article : {"the ", "a ", "an "}) {
    std::size_t len = std::string(article).size();
    if (low.size() > len && low.compare(0, len, article) == 0)
      return s.substr(len);
  }
  return s;
}

std::optional<CharSpan> find_candidate_span(const std::string& text,
                                            const std::string& surface,
                                            CharSpan exclude) {
  std::string needle = lowercase(strip_article(surface));
  if (needle.empty()) return std::nullopt;
  std::string hay = lowercase(text);
  std::size_t pos = 0;
  while ((pos = hay.find(needle, pos)) != std::string::npos) {
    std::size_t end = pos + needle.size();
    bool left_ok = pos == 0 || !is_word_char(hay[pos - 1]);
    bool right_ok = end == hay.size() || !is_word_char(hay[end]);
    if (left_ok && right_ok && !overlaps(pos, end, exclude))
      return CharSpan{pos, end};
    ++pos;
  }
  return std::nullopt;
}

TwinPair TwinPair::without_gold() const {
  TwinPair stripped = *this;
  stripped.first.gold.reset();
  stripped.second.gold.reset();
  return stripped;
}

void validate_schema(const WinogradSchema& schema) {
  if (schema.text.empty()) throw DataError("schema: empty text");
  if (schema.pronoun_span.begin >= schema.pronoun_span.end ||
      schema.pronoun_span.end > schema.text.size())
    throw DataError("schema: pronoun span outside text: \"" + schema.text +
                    "\"");
  for (const Candidate& c : schema.candidates) {
    if (c.surface.empty()) throw DataError("schema: empty candidate surface");
    if (c.role != 1 && c.role != 2)
      throw DataError("schema: candidate role must be 1 or 2, got " +
                      std::to_string(c.role));
    if (!find_candidate_span(schema.text, c.surface, schema.pronoun_span))
      throw DataError("schema: candidate \"" + c.surface +
                      "\" not found in text: \"" + schema.text + "\"");
  }
  if (schema.gold && *schema.gold != 1 && *schema.gold != 2)
    throw DataError("schema: gold label must be 1 or 2, got " +
                    std::to_string(*schema.gold));
}

void validate_twin(const TwinPair& pair) {
  validate_schema(pair.first);
  validate_schema(pair.second);
  for (int i = 0; i < 2; ++i) {
    if (lowercase(pair.first.candidates[i].surface) !=
        lowercase(pair.second.candidates[i].surface))
      throw DataError("twin: candidate pair differs between members: \"" +
                      pair.first.candidates[i].surface + "\" vs \"" +
                      pair.second.candidates[i].surface + "\"");
  }
  if (pair.first.twin_id != pair.second.twin_id)
    throw DataError("twin: ids differ: " + pair.first.twin_id + " vs " +
                    pair.second.twin_id);
  if (pair.first.text == pair.second.text)
    throw DataError("twin: members share identical text (no trigger word)");
  if (pair.first.gold && pair.second.gold && *pair.first.gold == *pair.second.gold)
    throw DataError("twin: gold labels must be mutually exclusive in " +
                    pair.first.twin_id);
}

}  // namespace cattn
