#include "cattn/parsers.hpp"

#include <cctype>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "cattn/errors.hpp"

namespace cattn {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file: " + path);
  out << content;
  if (!out) throw DataError("write failed: " + path);
}

namespace {

// -------------------------------------------------------------------------
// Minimal XML reader, enough for the WSC collection layout. Error messages
// carry the element path down to the point of failure.

struct XmlElement {
  std::string tag;
  std::string text;  // concatenated character data of this element
  std::vector<XmlElement> children;

  const XmlElement* child(const std::string& name) const {
    for (const auto& c : children)
      if (c.tag == name) return &c;
    return nullptr;
  }
};

class XmlReader {
 public:
  explicit XmlReader(const std::string& src) : src_(src) {}

  XmlElement parse() {
    skip_prolog();
    XmlElement root = parse_element();
    skip_ws();
    return root;
  }

 private:
  const std::string& src_;
  std::size_t pos_ = 0;
  std::vector<std::string> path_;

  [[noreturn]] void fail(const std::string& what) {
    std::string where;
    for (const auto& p : path_) where += "/" + p;
    if (where.empty()) where = "/";
    throw DataError("xml parse error at " + where + " (offset " +
                    std::to_string(pos_) + "): " + what);
  }

  bool eof() const { return pos_ >= src_.size(); }
  char peek() const { return src_[pos_]; }

  void skip_ws() {
    while (!eof() && std::isspace(static_cast<unsigned char>(peek()))) ++pos_;
  }

  void skip_prolog() {
    skip_ws();
    while (!eof() && src_.compare(pos_, 2, "<?") == 0) {
      std::size_t end = src_.find("?>", pos_);
      if (end == std::string::npos) fail("unterminated declaration");
      pos_ = end + 2;
      skip_ws();
    }
    skip_comments();
  }

  void skip_comments() {
    skip_ws();
    while (!eof() && src_.compare(pos_, 4, "<!--") == 0) {
      std::size_t end = src_.find("-->", pos_);
      if (end == std::string::npos) fail("unterminated comment");
      pos_ = end + 3;
      skip_ws();
    }
  }

  std::string read_name() {
    std::size_t start = pos_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) ||
                      peek() == '_' || peek() == '-' || peek() == ':'))
      ++pos_;
    if (pos_ == start) fail("expected tag name");
    return src_.substr(start, pos_ - start);
  }

  std::string decode_entities(const std::string& raw) {
    std::string out;
    out.reserve(raw.size());
    for (std::size_t i = 0; i < raw.size();) {
      if (raw[i] != '&') {
        out += raw[i++];
        continue;
      }
      std::size_t semi = raw.find(';', i);
      if (semi == std::string::npos) fail("unterminated entity");
      std::string ent = raw.substr(i + 1, semi - i - 1);
      if (ent == "amp") out += '&';
      else if (ent == "lt") out += '<';
      else if (ent == "gt") out += '>';
      else if (ent == "quot") out += '"';
      else if (ent == "apos") out += '\'';
      else fail("unknown entity &" + ent + ";");
      i = semi + 1;
    }
    return out;
  }

  XmlElement parse_element() {
    skip_comments();
    if (eof() || peek() != '<') fail("expected element start");
    ++pos_;
    XmlElement elem;
    elem.tag = read_name();
    path_.push_back(elem.tag);
    // attributes are skipped; the WSC layout does not use them
    while (!eof() && peek() != '>' && peek() != '/') ++pos_;
    if (eof()) fail("unterminated start tag");
    if (peek() == '/') {
      pos_ += 2;  // "/>"
      path_.pop_back();
      return elem;
    }
    ++pos_;  // '>'
    std::string raw_text;
    while (true) {
      if (eof()) fail("unexpected end of input inside element");
      if (peek() == '<') {
        if (src_.compare(pos_, 4, "<!--") == 0) {
          skip_comments();
          continue;
        }
        if (src_.compare(pos_, 2, "</") == 0) {
          pos_ += 2;
          std::string closing = read_name();
          if (closing != elem.tag)
            fail("mismatched closing tag </" + closing + ">");
          if (eof() || peek() != '>') fail("malformed closing tag");
          ++pos_;
          break;
        }
        elem.children.push_back(parse_element());
      } else {
        raw_text += src_[pos_++];
      }
    }
    elem.text = decode_entities(raw_text);
    path_.pop_back();
    return elem;
  }
};

std::string collapse_ws(const std::string& s) {
  std::string out;
  bool in_space = true;  // trims leading space
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!in_space) out += ' ';
      in_space = true;
    } else {
      out += c;
      in_space = false;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Sequentially link adjacent schemas that share the ordered candidate pair,
// differ in text, and have non-conflicting gold labels.
Corpus link_twins(std::vector<WinogradSchema> schemas, const std::string& name) {
  Corpus corpus;
  corpus.name = name;
  std::size_t pair_index = 0;
  std::size_t i = 0;
  while (i < schemas.size()) {
    bool linkable = false;
    if (i + 1 < schemas.size()) {
      const auto& a = schemas[i];
      const auto& b = schemas[i + 1];
      linkable = lowercase(a.candidates[0].surface) ==
                     lowercase(b.candidates[0].surface) &&
                 lowercase(a.candidates[1].surface) ==
                     lowercase(b.candidates[1].surface) &&
                 a.text != b.text &&
                 !(a.gold && b.gold && *a.gold == *b.gold);
    }
    if (linkable) {
      TwinPair pair{std::move(schemas[i]), std::move(schemas[i + 1])};
      pair.first.twin_id = pair.second.twin_id =
          name + "-pair-" + std::to_string(pair_index++);
      corpus.pairs.push_back(std::move(pair));
      i += 2;
    } else {
      schemas[i].twin_id = name + "-single-" + std::to_string(i);
      corpus.singles.push_back(std::move(schemas[i]));
      i += 1;
    }
  }
  return corpus;
}

std::optional<CharSpan> whole_word_span(const std::string& text,
                                        const std::string& word) {
  return find_candidate_span(text, word, CharSpan{0, 0});
}

}  // namespace

// ---------------------------------------------------------------------------
// WSC XML

ParseResult parse_wsc_xml(const std::string& content,
                          const std::string& corpus_name) {
  XmlReader reader(content);
  XmlElement root = reader.parse();

  ParseResult result;
  std::vector<WinogradSchema> schemas;
  std::size_t record_no = 0;
  for (const XmlElement& schema_el : root.children) {
    if (schema_el.tag != "schema") continue;
    ++record_no;
    auto skip = [&](const std::string& why) {
      ++result.record_errors;
      result.warnings.push_back("wsc record " + std::to_string(record_no) +
                                ": " + why);
    };
    const XmlElement* text_el = schema_el.child("text");
    const XmlElement* answers_el = schema_el.child("answers");
    const XmlElement* correct_el = schema_el.child("correctAnswer");
    if (!text_el || !text_el->child("txt1") || !text_el->child("pron") ||
        !text_el->child("txt2")) {
      skip("missing text/txt1/pron/txt2");
      continue;
    }
    if (!answers_el || answers_el->children.size() < 2) {
      skip("missing answers");
      continue;
    }
    std::string txt1 = collapse_ws(text_el->child("txt1")->text);
    std::string pron = collapse_ws(text_el->child("pron")->text);
    std::string txt2 = collapse_ws(text_el->child("txt2")->text);
    if (pron.empty()) {
      skip("empty pronoun");
      continue;
    }

    WinogradSchema schema;
    schema.text = txt1.empty() ? pron : txt1 + " " + pron;
    schema.pronoun_span = {schema.text.size() - pron.size(), schema.text.size()};
    if (!txt2.empty()) schema.text += " " + txt2;
    schema.candidates[0] = {collapse_ws(answers_el->children[0].text), 1};
    schema.candidates[1] = {collapse_ws(answers_el->children[1].text), 2};
    if (correct_el) {
      std::string ans = trim(correct_el->text);
      if (!ans.empty() && (ans[0] == 'A' || ans[0] == 'a')) schema.gold = 1;
      else if (!ans.empty() && (ans[0] == 'B' || ans[0] == 'b')) schema.gold = 2;
    }
    try {
      validate_schema(schema);
    } catch (const DataError& e) {
      skip(e.what());
      continue;
    }
    schemas.push_back(std::move(schema));
  }
  result.corpus = link_twins(std::move(schemas), corpus_name);
  return result;
}

// ---------------------------------------------------------------------------
// DPR text

ParseResult parse_dpr(const std::string& content,
                      const std::string& corpus_name) {
  ParseResult result;
  std::vector<WinogradSchema> schemas;

  std::vector<std::vector<std::string>> records;
  std::vector<std::string> current;
  std::istringstream in(content);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) {
      if (!current.empty()) records.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(line);
    }
  }
  if (!current.empty()) records.push_back(std::move(current));

  for (std::size_t r = 0; r < records.size(); ++r) {
    auto skip = [&](const std::string& why) {
      ++result.record_errors;
      result.warnings.push_back("dpr record " + std::to_string(r + 1) + ": " +
                                why);
    };
    const auto& rec = records[r];
    if (rec.size() != 4) {
      skip("expected 4 lines, got " + std::to_string(rec.size()));
      continue;
    }
    WinogradSchema schema;
    schema.text = trim(rec[0]);
    std::string pronoun = trim(rec[1]);
    std::string cands = rec[2];
    std::string answer = trim(rec[3]);

    std::size_t comma = cands.find(',');
    if (comma == std::string::npos) {
      skip("candidates line has no comma");
      continue;
    }
    schema.candidates[0] = {trim(cands.substr(0, comma)), 1};
    schema.candidates[1] = {trim(cands.substr(comma + 1)), 2};

    auto pron_span = whole_word_span(schema.text, pronoun);
    if (!pron_span) {
      skip("pronoun \"" + pronoun + "\" not found in sentence");
      continue;
    }
    schema.pronoun_span = *pron_span;

    if (lowercase(answer) == lowercase(schema.candidates[0].surface))
      schema.gold = 1;
    else if (lowercase(answer) == lowercase(schema.candidates[1].surface))
      schema.gold = 2;
    else {
      skip("answer \"" + answer + "\" is not one of the candidates");
      continue;
    }
    try {
      validate_schema(schema);
    } catch (const DataError& e) {
      skip(e.what());
      continue;
    }
    schemas.push_back(std::move(schema));
  }
  result.corpus = link_twins(std::move(schemas), corpus_name);
  return result;
}

std::string serialize_dpr(const Corpus& corpus) {
  std::ostringstream out;
  bool first = true;
  auto emit = [&](const WinogradSchema& s) {
    if (!first) out << "\n";
    first = false;
    std::string pronoun = s.text.substr(s.pronoun_span.begin,
                                        s.pronoun_span.end - s.pronoun_span.begin);
    out << s.text << "\n"
        << pronoun << "\n"
        << s.candidates[0].surface << "," << s.candidates[1].surface << "\n"
        << s.candidates[(s.gold.value_or(1)) - 1].surface << "\n";
  };
  for (const TwinPair& pair : corpus.pairs) {
    emit(pair.first);
    emit(pair.second);
  }
  for (const WinogradSchema& s : corpus.singles) emit(s);
  return out.str();
}

// ---------------------------------------------------------------------------
// WinoGrande JSONL

ParseResult parse_winogrande_jsonl(const std::string& content,
                                   const std::string& corpus_name) {
  ParseResult result;
  result.corpus.name = corpus_name;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto skip = [&](const std::string& why) {
      ++result.record_errors;
      result.warnings.push_back("winogrande line " + std::to_string(line_no) +
                                ": " + why);
    };
    nlohmann::json rec = nlohmann::json::parse(line, nullptr, false);
    if (rec.is_discarded() || !rec.is_object()) {
      skip("invalid JSON");
      continue;
    }
    if (!rec.contains("sentence") || !rec.contains("option1") ||
        !rec.contains("option2") || !rec.contains("answer")) {
      skip("missing field");
      continue;
    }
    WinogradSchema schema;
    schema.text = rec["sentence"].get<std::string>();
    std::size_t blank = schema.text.find('_');
    if (blank == std::string::npos ||
        schema.text.find('_', blank + 1) != std::string::npos) {
      skip("sentence must contain exactly one blank marker");
      continue;
    }
    schema.pronoun_span = {blank, blank + 1};
    schema.candidates[0] = {trim(rec["option1"].get<std::string>()), 1};
    schema.candidates[1] = {trim(rec["option2"].get<std::string>()), 2};
    std::string answer = rec["answer"].is_string()
                             ? rec["answer"].get<std::string>()
                             : std::to_string(rec["answer"].get<int>());
    if (answer == "1") schema.gold = 1;
    else if (answer == "2") schema.gold = 2;
    else {
      skip("answer must be \"1\" or \"2\"");
      continue;
    }
    schema.twin_id = corpus_name + "-single-" + std::to_string(line_no);
    try {
      validate_schema(schema);
    } catch (const DataError& e) {
      skip(e.what());
      continue;
    }
    result.corpus.singles.push_back(std::move(schema));
  }
  return result;
}

}  // namespace cattn
