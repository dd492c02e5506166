#include <doctest.h>

#include <set>

#include "cattn/errors.hpp"
#include "cattn/parsers.hpp"
#include "cattn/schema.hpp"
#include "cattn/synth.hpp"

using namespace cattn;

namespace {
std::string fixture(const std::string& name) {
  return read_file(std::string(FIXTURE_DIR) + "/" + name);
}
}  // namespace

TEST_CASE("find_candidate_span strips articles and matches case-insensitively") {
  std::string text = "The trophy doesn't fit in the suitcase because it is too small.";
  auto span = find_candidate_span(text, "the trophy", {0, 0});
  REQUIRE(span.has_value());
  CHECK(text.substr(span->begin, span->end - span->begin) == "trophy");

  // whole-word boundaries: "cat" must not match inside "category"
  CHECK_FALSE(find_candidate_span("the category was wrong", "cat", {0, 0}));

  // first occurrence outside the exclusion zone
  std::string twice = "the box in the box";
  auto first = find_candidate_span(twice, "box", {0, 0});
  CHECK(first->begin == 4);
  auto second = find_candidate_span(twice, "box", *first);
  CHECK(second->begin == 15);
}

TEST_CASE("schema and twin validation") {
  WinogradSchema s;
  s.text = "the ball broke the window because it was heavy.";
  s.pronoun_span = {34, 36};
  CHECK(s.text.substr(34, 2) == "it");
  s.candidates[0] = {"ball", 1};
  s.candidates[1] = {"window", 2};
  s.gold = 1;
  s.twin_id = "t";
  CHECK_NOTHROW(validate_schema(s));

  WinogradSchema bad = s;
  bad.candidates[1].surface = "door";
  CHECK_THROWS_AS(validate_schema(bad), DataError);

  bad = s;
  bad.gold = 3;
  CHECK_THROWS_AS(validate_schema(bad), DataError);

  TwinPair pair{s, s};
  pair.second.text = "the ball broke the window because it was light.";
  pair.second.gold = 2;
  CHECK_NOTHROW(validate_twin(pair));
  pair.second.gold = 1;  // mutual exclusivity broken
  CHECK_THROWS_AS(validate_twin(pair), DataError);
}

TEST_CASE("parse_wsc_xml on the schema collection fixture") {
  auto result = parse_wsc_xml(fixture("wsc_fixture.xml"));
  CHECK(result.record_errors == 0);
  REQUIRE(result.corpus.pairs.size() == 3);
  CHECK(result.corpus.singles.empty());

  const TwinPair& trophy = result.corpus.pairs[0];
  CHECK(trophy.first.candidates[0].surface == "the trophy");
  CHECK(trophy.first.candidates[1].surface == "the suitcase");
  CHECK(trophy.first.gold == 2);   // "small" answer is the suitcase
  CHECK(trophy.second.gold == 1);  // "big" flips it
  CHECK(trophy.first.text ==
        "The trophy doesn't fit in the suitcase because it is too small.");
  std::string pron = trophy.first.text.substr(
      trophy.first.pronoun_span.begin,
      trophy.first.pronoun_span.end - trophy.first.pronoun_span.begin);
  CHECK(pron == "it");
  for (const TwinPair& p : result.corpus.pairs) CHECK_NOTHROW(validate_twin(p));
}

TEST_CASE("parse_wsc_xml edge cases") {
  auto empty = parse_wsc_xml("<collection></collection>");
  CHECK(empty.corpus.pairs.empty());
  CHECK(empty.corpus.singles.empty());

  CHECK_THROWS_WITH_AS(parse_wsc_xml(fixture("wsc_malformed.xml")),
                       doctest::Contains("txt1"), DataError);

  auto bad = parse_wsc_xml(fixture("wsc_bad_candidate.xml"));
  CHECK(bad.record_errors == 1);
  CHECK(bad.corpus.pairs.empty());
  CHECK(bad.corpus.singles.size() == 1);
}

TEST_CASE("parse_dpr links adjacent twins") {
  auto result = parse_dpr(fixture("dpr_fixture.txt"));
  CHECK(result.record_errors == 0);
  REQUIRE(result.corpus.pairs.size() == 4);
  CHECK(result.corpus.singles.empty());
  for (const TwinPair& p : result.corpus.pairs) {
    CHECK_NOTHROW(validate_twin(p));
    REQUIRE(p.first.gold.has_value());
    REQUIRE(p.second.gold.has_value());
    CHECK(*p.first.gold != *p.second.gold);
  }
}

TEST_CASE("parse_dpr skips records with unlocatable candidates") {
  auto result = parse_dpr(fixture("dpr_bad_candidate.txt"));
  CHECK(result.record_errors == 1);
  CHECK(result.corpus.pairs.empty());
  CHECK(result.corpus.singles.size() == 1);
  CHECK(result.warnings.size() == 1);
}

TEST_CASE("parse_winogrande_jsonl maps fields and counts bad lines") {
  auto result = parse_winogrande_jsonl(fixture("winogrande_fixture.jsonl"));
  CHECK(result.corpus.singles.size() == 4);
  CHECK(result.corpus.pairs.empty());
  CHECK(result.record_errors == 1);

  const WinogradSchema& s = result.corpus.singles[0];
  CHECK(s.candidates[0].surface == "trophy");
  CHECK(s.candidates[1].surface == "suitcase");
  CHECK(s.gold == 2);
  CHECK(s.text.substr(s.pronoun_span.begin, 1) == "_");

  CHECK(parse_winogrande_jsonl("").corpus.schema_count() == 0);
}

TEST_CASE("generate_synthetic instantiates templates with flipped golds") {
  GeneratorSpec spec;
  spec.object_pairs = {{"trophy", "suitcase"}};
  spec.templates = {{"the {1} could not fit in the {2} because {it} was too {T} .",
                     {{"big", "small", 1}}}};
  Corpus corpus = generate_synthetic(spec, 1, 7);
  REQUIRE(corpus.pairs.size() == 1);
  const TwinPair& p = corpus.pairs[0];
  CHECK(p.first.text ==
        "the trophy could not fit in the suitcase because it was too big .");
  CHECK(p.second.text ==
        "the trophy could not fit in the suitcase because it was too small .");
  CHECK(*p.first.gold == 1);
  CHECK(*p.second.gold == 2);
  CHECK_NOTHROW(validate_twin(p));
}

TEST_CASE("generate_synthetic is deterministic and validates its spec") {
  GeneratorSpec spec = GeneratorSpec::builtin_default();
  Corpus a = generate_synthetic(spec, 50, 99);
  Corpus b = generate_synthetic(spec, 50, 99);
  REQUIRE(a.pairs.size() == b.pairs.size());
  for (std::size_t i = 0; i < a.pairs.size(); ++i) {
    CHECK(a.pairs[i].first.text == b.pairs[i].first.text);
    CHECK(a.pairs[i].second.text == b.pairs[i].second.text);
    CHECK(a.pairs[i].first.gold == b.pairs[i].first.gold);
  }

  GeneratorSpec broken;
  broken.object_pairs = {{"a", "b"}};
  broken.templates = {{"no slots here", {{"x", "y", 1}}}};
  CHECK_THROWS_AS(generate_synthetic(broken, 1, 1), ConfigError);
}

TEST_CASE("generate_synthetic exhausts the full product with all invariants") {
  GeneratorSpec spec = GeneratorSpec::builtin_default();
  std::size_t product = 0;
  for (const auto& tpl : spec.templates)
    product += spec.object_pairs.size() * tpl.triggers.size();
  CHECK(product == 200);

  Corpus corpus = generate_synthetic(spec, 200, 3);
  CHECK(corpus.pairs.size() == 200);
  std::set<std::string> twin_ids;
  for (const TwinPair& p : corpus.pairs) {
    CHECK_NOTHROW(validate_twin(p));
    twin_ids.insert(p.first.twin_id);
  }
  CHECK(twin_ids.size() == 200);

  CHECK_THROWS_AS(generate_synthetic(spec, 201, 3), ConfigError);
}

TEST_CASE("parse_generator_spec round-trips the key-value format") {
  std::string text =
      "# comment\n"
      "objects = trophy/suitcase, ball/box\n"
      "template.1.text = the {1} could not fit in the {2} because {it} was too {T} .\n"
      "template.1.triggers = big>1, small>2; large>1, tiny>2\n";
  GeneratorSpec spec = parse_generator_spec(text);
  CHECK(spec.object_pairs.size() == 2);
  REQUIRE(spec.templates.size() == 1);
  CHECK(spec.templates[0].triggers.size() == 2);
  CHECK(spec.templates[0].triggers[1].first == "large");
  CHECK(spec.templates[0].triggers[1].first_gold == 1);

  CHECK_THROWS_AS(parse_generator_spec("bogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_generator_spec("template.1.triggers = big>1, small>1\n"),
                  ConfigError);
}

TEST_CASE("split_corpus divides pairs without straddling") {
  GeneratorSpec spec;
  spec.object_pairs = {{"a1", "b1"}, {"a2", "b2"}, {"a3", "b3"}, {"a4", "b4"}};
  spec.templates = {{"the {1} hit the {2} because {it} was {T} .",
                     {{"fast", "slow", 1}}}};
  Corpus corpus = generate_synthetic(spec, 4, 1);
  auto [train, eval] = split_corpus(corpus, 0.5, 11);
  CHECK(train.pairs.size() == 2);
  CHECK(eval.pairs.size() == 2);

  auto [train2, eval2] = split_corpus(corpus, 0.5, 11);
  for (std::size_t i = 0; i < train.pairs.size(); ++i)
    CHECK(train.pairs[i].first.text == train2.pairs[i].first.text);

  CHECK_THROWS_AS(split_corpus(corpus, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split_corpus(corpus, 1.0, 1), ConfigError);
}

TEST_CASE("split_corpus keeps held-out lexemes disjoint from training") {
  Corpus corpus = generate_synthetic(GeneratorSpec::builtin_default(), 200, 5);
  auto [train, eval] = split_corpus(corpus, 0.25, 42);
  CHECK(train.pairs.size() == 150);
  CHECK(eval.pairs.size() == 50);
  CHECK(train.pairs.size() + eval.pairs.size() == corpus.pairs.size());

  auto lexemes = [](const Corpus& c) {
    std::set<std::string> out;
    for (const TwinPair& p : c.pairs) {
      out.insert(lowercase(p.first.candidates[0].surface));
      out.insert(lowercase(p.first.candidates[1].surface));
    }
    return out;
  };
  std::set<std::string> train_lex = lexemes(train);
  for (const std::string& lex : lexemes(eval)) CHECK(train_lex.count(lex) == 0);
}

TEST_CASE("serialize_dpr round-trips byte-consistently") {
  Corpus corpus = generate_synthetic(GeneratorSpec::builtin_default(), 20, 17);
  std::string text = serialize_dpr(corpus);
  auto parsed = parse_dpr(text);
  CHECK(parsed.record_errors == 0);
  REQUIRE(parsed.corpus.pairs.size() == corpus.pairs.size());
  for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
    CHECK(parsed.corpus.pairs[i].first.text == corpus.pairs[i].first.text);
    CHECK(parsed.corpus.pairs[i].first.gold == corpus.pairs[i].first.gold);
    CHECK(parsed.corpus.pairs[i].second.gold == corpus.pairs[i].second.gold);
  }
  CHECK(serialize_dpr(parsed.corpus) == text);
}
