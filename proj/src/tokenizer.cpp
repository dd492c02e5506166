#include "cattn/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

#include "cattn/errors.hpp"

namespace cattn {

namespace {

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '\'';
}

const std::array<std::string, Vocab::kReservedCount> kReserved = {
    "<pad>", "<mask>", "<unk>", "<bos>", "<eos>"};

}  // namespace

std::vector<WordToken> word_tokenize(const std::string& text) {
  std::vector<WordToken> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      ++i;
      continue;
    }
    WordToken tok;
    tok.begin = i;
    if (is_word_char(text[i])) {
      while (i < text.size() && is_word_char(text[i])) ++i;
    } else {
      ++i;
    }
    tok.end = i;
    tok.text = lowercase(text.substr(tok.begin, tok.end - tok.begin));
    tokens.push_back(std::move(tok));
  }
  return tokens;
}

void Vocab::add(const std::string& token) {
  ids_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocab Vocab::build(const Corpus& corpus, std::size_t min_count) {
  std::map<std::string, std::size_t> counts;
  auto count_text = [&](const std::string& text) {
    for (const WordToken& t : word_tokenize(text)) ++counts[t.text];
  };
  for (const TwinPair& pair : corpus.pairs) {
    count_text(pair.first.text);
    count_text(pair.second.text);
  }
  for (const WinogradSchema& s : corpus.singles) count_text(s.text);

  std::vector<std::pair<std::string, std::size_t>> entries(counts.begin(),
                                                           counts.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });

  Vocab v;
  for (const std::string& r : kReserved) v.add(r);
  for (const auto& [token, count] : entries)
    if (count >= min_count) v.add(token);
  return v;
}

int Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
    throw ContractError("vocab: id " + std::to_string(id) + " out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocab::to_text() const {
  std::string out;
  for (const std::string& t : tokens_) {
    out += t;
    out += '\n';
  }
  return out;
}

Vocab Vocab::from_text(const std::string& text) {
  Vocab v;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) v.add(line);
  }
  for (std::size_t i = 0; i < kReservedCount; ++i)
    if (v.tokens_.size() <= i || v.tokens_[i] != kReserved[i])
      throw DataError("vocab text is missing reserved token " + kReserved[i]);
  return v;
}

namespace {

// Finds the first occurrence of `needle` as a consecutive token-text run,
// skipping any window that touches an excluded position.
std::optional<TokenSpan> find_token_run(
    const std::vector<std::string>& haystack,
    const std::vector<std::string>& needle,
    const std::vector<std::size_t>& excluded) {
  if (needle.empty() || haystack.size() < needle.size()) return std::nullopt;
  for (std::size_t start = 0; start + needle.size() <= haystack.size();
       ++start) {
    bool match = true;
    for (std::size_t j = 0; j < needle.size() && match; ++j) {
      if (haystack[start + j] != needle[j]) match = false;
      for (std::size_t ex : excluded)
        if (start + j == ex) match = false;
    }
    if (match) return TokenSpan{start, needle.size()};
  }
  return std::nullopt;
}

}  // namespace

EncodedSchema encode_masked(const WinogradSchema& schema, const Vocab& vocab,
                            std::size_t max_len) {
  std::vector<WordToken> tokens = word_tokenize(schema.text);

  // token range covered by the pronoun span
  std::size_t pron_begin = tokens.size(), pron_end = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i].begin < schema.pronoun_span.end &&
        schema.pronoun_span.begin < tokens[i].end) {
      pron_begin = std::min(pron_begin, i);
      pron_end = std::max(pron_end, i + 1);
    }
  }
  if (pron_begin >= pron_end)
    throw DataError("encode: pronoun span covers no tokens in \"" +
                    schema.text + "\"");

  // encoded token strings: BOS, prefix, MASK, suffix, EOS
  std::vector<std::string> enc_tokens;
  enc_tokens.push_back(kReserved[Vocab::kBos]);
  for (std::size_t i = 0; i < pron_begin; ++i)
    enc_tokens.push_back(tokens[i].text);
  std::size_t mask_position = enc_tokens.size();
  enc_tokens.push_back(kReserved[Vocab::kMask]);
  for (std::size_t i = pron_end; i < tokens.size(); ++i)
    enc_tokens.push_back(tokens[i].text);
  enc_tokens.push_back(kReserved[Vocab::kEos]);

  if (enc_tokens.size() > max_len)
    throw DataError("encode: sentence needs " +
                    std::to_string(enc_tokens.size()) +
                    " tokens, maximum is " + std::to_string(max_len));

  EncodedSchema enc;
  enc.mask_position = mask_position;
  enc.source = schema;

  std::vector<std::size_t> excluded = {mask_position};
  for (int role = 1; role <= 2; ++role) {
    const Candidate& cand = schema.candidates[role - 1];
    std::vector<std::string> needle;
    for (const WordToken& t : word_tokenize(strip_article(cand.surface)))
      needle.push_back(t.text);
    auto span = find_token_run(enc_tokens, needle, excluded);
    if (!span)
      throw DataError("encode: candidate \"" + cand.surface +
                      "\" not locatable after tokenization of \"" +
                      schema.text + "\"");
    enc.candidate_spans[role - 1] = *span;
    for (std::size_t i = 0; i < span->len; ++i)
      excluded.push_back(span->begin + i);
  }

  enc.ids.reserve(enc_tokens.size());
  for (const std::string& t : enc_tokens) enc.ids.push_back(vocab.id(t));
  enc.ids[mask_position] = Vocab::kMask;
  return enc;
}

SubstitutedSchema substitute_candidate(const EncodedSchema& enc, int role,
                                       std::size_t max_len) {
  if (role != 1 && role != 2)
    throw ContractError("substitute_candidate: role must be 1 or 2, got " +
                        std::to_string(role));
  const TokenSpan span = enc.candidate_spans[role - 1];
  const std::size_t n = span.len;

  SubstitutedSchema sub;
  sub.target_ids.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    sub.target_ids.push_back(enc.ids[span.begin + i]);

  if (enc.ids.size() + n - 1 > max_len)
    throw DataError("substitute_candidate: expanded length " +
                    std::to_string(enc.ids.size() + n - 1) +
                    " exceeds maximum " + std::to_string(max_len));

  sub.ids.reserve(enc.ids.size() + n - 1);
  sub.ids.insert(sub.ids.end(), enc.ids.begin(),
                 enc.ids.begin() + static_cast<std::ptrdiff_t>(enc.mask_position));
  for (std::size_t i = 0; i < n; ++i) {
    sub.mask_positions.push_back(enc.mask_position + i);
    sub.ids.push_back(Vocab::kMask);
  }
  sub.ids.insert(sub.ids.end(),
                 enc.ids.begin() + static_cast<std::ptrdiff_t>(enc.mask_position) + 1,
                 enc.ids.end());

  const std::size_t shift = n - 1;
  for (int r = 0; r < 2; ++r) {
    TokenSpan s = enc.candidate_spans[r];
    if (s.begin > enc.mask_position) s.begin += shift;
    sub.candidate_spans[r] = s;
  }
  return sub;
}

std::string decode_tokens(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == Vocab::kPad || id == Vocab::kBos || id == Vocab::kEos) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

}  // namespace cattn
