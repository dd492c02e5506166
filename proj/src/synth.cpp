#include "cattn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "cattn/errors.hpp"
#include "cattn/rng.hpp"

namespace cattn {

namespace {

std::string trim_copy(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim_copy(item));
  return out;
}

void validate_spec(const GeneratorSpec& spec) {
  if (spec.object_pairs.empty())
    throw ConfigError("generator spec: object-pair lexicon is empty");
  if (spec.templates.empty())
    throw ConfigError("generator spec: no templates");
  for (const auto& [a, b] : spec.object_pairs) {
    if (a.empty() || b.empty() || a == b)
      throw ConfigError("generator spec: bad object pair \"" + a + "/" + b +
                        "\"");
  }
  for (const SentenceTemplate& tpl : spec.templates) {
    for (const char* slot : {"{1}", "{2}", "{it}", "{T}"})
      if (tpl.pattern.find(slot) == std::string::npos)
        throw ConfigError("generator spec: template \"" + tpl.pattern +
                          "\" is missing slot " + slot);
    if (tpl.triggers.empty())
      throw ConfigError("generator spec: template has no trigger pairs");
    for (const TriggerPair& tp : tpl.triggers) {
      if (tp.first.empty() || tp.second.empty() || tp.first == tp.second)
        throw ConfigError("generator spec: bad trigger pair \"" + tp.first +
                          "/" + tp.second + "\"");
      if (tp.first_gold != 1 && tp.first_gold != 2)
        throw ConfigError("generator spec: trigger gold must be 1 or 2");
    }
  }
}

// Instantiates a pattern; records the pronoun span and checks single use of
// the pronoun and trigger slots.
WinogradSchema realize(const SentenceTemplate& tpl, const std::string& obj1,
                       const std::string& obj2, const std::string& trigger,
                       int gold) {
  WinogradSchema schema;
  std::string text;
  const std::string& p = tpl.pattern;
  std::size_t i = 0;
  while (i < p.size()) {
    if (p[i] != '{') {
      text += p[i++];
      continue;
    }
    std::size_t close = p.find('}', i);
    if (close == std::string::npos)
      throw ConfigError("generator spec: unterminated placeholder in \"" + p +
                        "\"");
    std::string slot = p.substr(i + 1, close - i - 1);
    if (slot == "1") text += obj1;
    else if (slot == "2") text += obj2;
    else if (slot == "T") text += trigger;
    else if (slot == "it") {
      schema.pronoun_span = {text.size(), text.size() + 2};
      text += "it";
    } else {
      throw ConfigError("generator spec: unknown placeholder {" + slot +
                        "} in \"" + p + "\"");
    }
    i = close + 1;
  }
  schema.text = std::move(text);
  schema.candidates[0] = {obj1, 1};
  schema.candidates[1] = {obj2, 2};
  schema.gold = gold;
  return schema;
}

}  // namespace

GeneratorSpec GeneratorSpec::builtin_default() {
  GeneratorSpec spec;
  spec.object_pairs = {
      {"trophy", "suitcase"}, {"ball", "box"},      {"statue", "crate"},
      {"piano", "hallway"},   {"book", "satchel"},  {"lamp", "cupboard"},
      {"cake", "tin"},        {"kite", "drawer"},   {"drum", "closet"},
      {"melon", "basket"},    {"helmet", "locker"}, {"violin", "cabinet"},
      {"pumpkin", "bucket"},  {"mirror", "carton"}, {"anchor", "pouch"},
      {"ladder", "shed"},     {"quilt", "chest"},   {"engine", "garage"},
      {"barrel", "cellar"},   {"organ", "attic"},
  };
  spec.templates = {
      {"the {1} could not fit in the {2} because {it} was too {T} .",
       {{"big", "small", 1},
        {"large", "tiny", 1},
        {"huge", "narrow", 1},
        {"wide", "slim", 1},
        {"bulky", "shallow", 1}}},
      {"the {2} could not hold the {1} because {it} was too {T} .",
       {{"heavy", "weak", 1},
        {"massive", "fragile", 1},
        {"dense", "flimsy", 1},
        {"solid", "brittle", 1},
        {"loaded", "thin", 1}}},
  };
  return spec;
}

GeneratorSpec parse_generator_spec(const std::string& content) {
  GeneratorSpec spec;
  std::map<int, SentenceTemplate> templates;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = trim_copy(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("generator spec line " + std::to_string(line_no) +
                        ": expected key = value");
    std::string key = trim_copy(t.substr(0, eq));
    std::string value = trim_copy(t.substr(eq + 1));
    if (key == "objects") {
      for (const std::string& item : split_on(value, ',')) {
        auto parts = split_on(item, '/');
        if (parts.size() != 2)
          throw ConfigError("generator spec line " + std::to_string(line_no) +
                            ": object pair must be a/b, got \"" + item + "\"");
        spec.object_pairs.emplace_back(parts[0], parts[1]);
      }
    } else if (key.rfind("template.", 0) == 0) {
      std::size_t second_dot = key.find('.', 9);
      if (second_dot == std::string::npos)
        throw ConfigError("generator spec line " + std::to_string(line_no) +
                          ": expected template.<n>.text or .triggers");
      int index = 0;
      try {
        index = std::stoi(key.substr(9, second_dot - 9));
      } catch (...) {
        throw ConfigError("generator spec line " + std::to_string(line_no) +
                          ": bad template index in \"" + key + "\"");
      }
      std::string field = key.substr(second_dot + 1);
      if (field == "text") {
        templates[index].pattern = value;
      } else if (field == "triggers") {
        for (const std::string& pair_str : split_on(value, ';')) {
          auto sides = split_on(pair_str, ',');
          if (sides.size() != 2)
            throw ConfigError("generator spec line " + std::to_string(line_no) +
                              ": trigger pair must be w>g, w>g");
          TriggerPair tp;
          int golds[2] = {0, 0};
          std::string words[2];
          for (int s = 0; s < 2; ++s) {
            auto wg = split_on(sides[s], '>');
            if (wg.size() != 2 || (wg[1] != "1" && wg[1] != "2"))
              throw ConfigError("generator spec line " +
                                std::to_string(line_no) +
                                ": trigger entry must be word>1 or word>2");
            words[s] = wg[0];
            golds[s] = wg[1] == "1" ? 1 : 2;
          }
          if (golds[0] == golds[1])
            throw ConfigError("generator spec line " + std::to_string(line_no) +
                              ": trigger pair golds must differ");
          tp.first = words[0];
          tp.second = words[1];
          tp.first_gold = golds[0];
          templates[index].triggers.push_back(tp);
        }
      } else {
        throw ConfigError("generator spec line " + std::to_string(line_no) +
                          ": unknown template field \"" + field + "\"");
      }
    } else {
      throw ConfigError("generator spec line " + std::to_string(line_no) +
                        ": unknown key \"" + key + "\"");
    }
  }
  for (auto& [index, tpl] : templates) {
    if (tpl.pattern.empty())
      throw ConfigError("generator spec: template " + std::to_string(index) +
                        " has no text");
    spec.templates.push_back(std::move(tpl));
  }
  return spec;
}

Corpus generate_synthetic(const GeneratorSpec& spec, std::size_t pair_count,
                          std::uint64_t seed) {
  validate_spec(spec);

  struct Combo {
    std::size_t object, tpl, trigger;
  };
  std::vector<Combo> combos;
  for (std::size_t o = 0; o < spec.object_pairs.size(); ++o)
    for (std::size_t t = 0; t < spec.templates.size(); ++t)
      for (std::size_t g = 0; g < spec.templates[t].triggers.size(); ++g)
        combos.push_back({o, t, g});
  if (pair_count > combos.size())
    throw ConfigError("generate_synthetic: requested " +
                      std::to_string(pair_count) + " pairs but only " +
                      std::to_string(combos.size()) +
                      " distinct combinations exist");

  Rng rng(seed);
  rng.shuffle(combos);

  Corpus corpus;
  corpus.name = "synthetic";
  for (std::size_t i = 0; i < pair_count; ++i) {
    const Combo& c = combos[i];
    const auto& [obj1, obj2] = spec.object_pairs[c.object];
    const SentenceTemplate& tpl = spec.templates[c.tpl];
    const TriggerPair& tp = tpl.triggers[c.trigger];
    TwinPair pair;
    pair.first = realize(tpl, obj1, obj2, tp.first, tp.first_gold);
    pair.second = realize(tpl, obj1, obj2, tp.second, 3 - tp.first_gold);
    pair.first.twin_id = pair.second.twin_id =
        "synth-pair-" + std::to_string(i);
    validate_twin(pair);
    corpus.pairs.push_back(std::move(pair));
  }
  return corpus;
}

std::pair<Corpus, Corpus> split_corpus(const Corpus& corpus,
                                       double held_out_fraction,
                                       std::uint64_t seed) {
  if (!(held_out_fraction > 0.0 && held_out_fraction < 1.0))
    throw ConfigError("split: held-out fraction must be in (0,1), got " +
                      std::to_string(held_out_fraction));

  auto lexeme_key = [](const WinogradSchema& s) {
    return lowercase(s.candidates[0].surface) + "|" +
           lowercase(s.candidates[1].surface);
  };

  Corpus train, eval;
  train.name = corpus.name + "-train";
  eval.name = corpus.name + "-eval";

  // pairs: whole candidate-lexeme groups go to one side
  std::vector<std::string> keys;
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < corpus.pairs.size(); ++i) {
    std::string key = lexeme_key(corpus.pairs[i].first);
    auto [it, inserted] = groups.try_emplace(key);
    if (inserted) keys.push_back(key);
    it->second.push_back(i);
  }
  Rng rng(seed);
  rng.shuffle(keys);
  std::size_t eval_target = static_cast<std::size_t>(
      std::llround(held_out_fraction * static_cast<double>(corpus.pairs.size())));
  std::size_t eval_pairs = 0;
  for (const std::string& key : keys) {
    bool to_eval = eval_pairs < eval_target;
    for (std::size_t idx : groups[key]) {
      (to_eval ? eval : train).pairs.push_back(corpus.pairs[idx]);
      if (to_eval) ++eval_pairs;
    }
  }

  // singles: same scheme, independent target
  std::vector<std::string> single_keys;
  std::map<std::string, std::vector<std::size_t>> single_groups;
  for (std::size_t i = 0; i < corpus.singles.size(); ++i) {
    std::string key = lexeme_key(corpus.singles[i]);
    auto [it, inserted] = single_groups.try_emplace(key);
    if (inserted) single_keys.push_back(key);
    it->second.push_back(i);
  }
  rng.shuffle(single_keys);
  std::size_t single_target = static_cast<std::size_t>(std::llround(
      held_out_fraction * static_cast<double>(corpus.singles.size())));
  std::size_t eval_singles = 0;
  for (const std::string& key : single_keys) {
    bool to_eval = eval_singles < single_target;
    for (std::size_t idx : single_groups[key]) {
      (to_eval ? eval : train).singles.push_back(corpus.singles[idx]);
      if (to_eval) ++eval_singles;
    }
  }
  return {std::move(train), std::move(eval)};
}

}  // namespace cattn
