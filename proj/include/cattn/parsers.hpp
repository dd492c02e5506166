#pragma once

#include <string>
#include <vector>

#include "cattn/schema.hpp"

namespace cattn {

struct ParseResult {
  Corpus corpus;
  std::size_t record_errors = 0;          // records skipped, one per error
  std::vector<std::string> warnings;      // human-readable skip reasons
};

// WSC collection XML: <schema> elements carrying <text><txt1/pron/txt2>,
// <answers><answer>x2 and <correctAnswer>. Consecutive schemas sharing the
// ordered candidate pair and differing in a trigger word become TwinPairs;
// the rest go to singles. Malformed XML throws DataError with the element
// path; per-record problems skip the record and count it.
ParseResult parse_wsc_xml(const std::string& content,
                          const std::string& corpus_name = "wsc");

// DPR plain text: four lines per record (sentence / pronoun / candidates
// separated by "," / answer), records separated by blank lines, twins
// adjacent. Twin adjacency is an assumption about the release layout, not a
// documented guarantee.
ParseResult parse_dpr(const std::string& content,
                      const std::string& corpus_name = "dpr");

// WinoGrande JSON lines: {"sentence": "... _ ...", "option1", "option2",
// "answer"}. The blank marker is the pronoun span. All records go to
// singles; twins are not reliably adjacent in the release.
ParseResult parse_winogrande_jsonl(const std::string& content,
                                   const std::string& corpus_name = "winogrande");

// Writes pairs (then singles) in the DPR record format; parse_dpr of the
// output reproduces the corpus.
std::string serialize_dpr(const Corpus& corpus);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

}  // namespace cattn
