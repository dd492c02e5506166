#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "cattn/checkpoint.hpp"
#include "cattn/errors.hpp"
#include "cattn/model.hpp"
#include "cattn/rng.hpp"
#include "cattn/tokenizer.hpp"
#include "fd_check.hpp"

using namespace cattn;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.model_dim = 16;
  cfg.ff_dim = 32;
  cfg.max_len = 8;
  cfg.vocab_size = 12;
  cfg.seed = 42;
  return cfg;
}

std::vector<int> random_ids(std::size_t n, int vocab, Rng& rng) {
  std::vector<int> ids(n);
  for (int& id : ids) id = static_cast<int>(rng.next_below(vocab));
  return ids;
}

Vocab vocab_of_size(std::size_t total) {
  Corpus c;
  WinogradSchema s;
  for (std::size_t i = 0; i + Vocab::kReservedCount < total; ++i)
    s.text += "w" + std::to_string(i) + " ";
  c.singles.push_back(s);
  Vocab v = Vocab::build(c, 1);
  REQUIRE(v.size() == total);
  return v;
}

// Permutes the heads of one layer together with the matching rows of its
// output projection; the model function must not change.
void permute_heads(ModelParams& params, std::size_t layer,
                   const std::vector<std::size_t>& perm) {
  LayerParams& lp = params.layers[layer];
  std::size_t d = static_cast<std::size_t>(params.config.model_dim);
  std::size_t dh = static_cast<std::size_t>(params.config.head_dim());
  auto permute_cols = [&](Tensor& w, Tensor& b) {
    std::vector<double> wv(w.values().begin(), w.values().end());
    std::vector<double> bv(b.values().begin(), b.values().end());
    auto wd = w.values_mut();
    auto bd = b.values_mut();
    for (std::size_t h = 0; h < perm.size(); ++h)
      for (std::size_t t = 0; t < dh; ++t) {
        for (std::size_t r = 0; r < d; ++r)
          wd[r * d + h * dh + t] = wv[r * d + perm[h] * dh + t];
        bd[h * dh + t] = bv[perm[h] * dh + t];
      }
  };
  permute_cols(lp.wq, lp.bq);
  permute_cols(lp.wk, lp.bk);
  permute_cols(lp.wv, lp.bv);
  std::vector<double> wo(lp.wo.values().begin(), lp.wo.values().end());
  auto wod = lp.wo.values_mut();
  for (std::size_t h = 0; h < perm.size(); ++h)
    for (std::size_t t = 0; t < dh; ++t)
      for (std::size_t c = 0; c < d; ++c)
        wod[(h * dh + t) * d + c] = wo[(perm[h] * dh + t) * d + c];
}

}  // namespace

TEST_CASE("init_params is deterministic per seed") {
  ModelConfig cfg = tiny_config();
  ModelParams a = init_params(cfg);
  ModelParams b = init_params(cfg);
  auto na = a.named_parameters();
  auto nb = b.named_parameters();
  REQUIRE(na.size() == nb.size());
  for (std::size_t i = 0; i < na.size(); ++i) {
    REQUIRE(na[i].second.size() == nb[i].second.size());
    for (std::size_t j = 0; j < na[i].second.size(); ++j)
      CHECK(na[i].second.values()[j] == nb[i].second.values()[j]);
  }
  cfg.seed = 43;
  ModelParams c = init_params(cfg);
  CHECK(c.tok_embed.values()[0] != a.tok_embed.values()[0]);
}

TEST_CASE("init_params sets layer-norm gains to exactly 1") {
  ModelParams p = init_params(tiny_config());
  for (const auto& layer : p.layers) {
    for (double v : layer.ln1_gain.values()) CHECK(v == 1.0);
    for (double v : layer.ln2_gain.values()) CHECK(v == 1.0);
    for (double v : layer.ln1_bias.values()) CHECK(v == 0.0);
  }
  for (double v : p.final_ln_gain.values()) CHECK(v == 1.0);
}

TEST_CASE("parameter count matches the closed form") {
  ModelConfig cfg;
  cfg.layers = 3;
  cfg.heads = 4;
  cfg.model_dim = 64;
  cfg.ff_dim = 256;
  cfg.max_len = 64;
  cfg.vocab_size = 256;
  ModelParams p = init_params(cfg);

  std::size_t d = 64, ff = 256, V = 256, maxlen = 64, L = 3;
  std::size_t per_layer = 4 * (d * d + d)        // q,k,v,o projections
                          + (d * ff + ff)        // ff in
                          + (ff * d + d)         // ff out
                          + 4 * d;               // two layer norms
  std::size_t expected = V * d + maxlen * d + L * per_layer + 2 * d;
  CHECK(p.parameter_count() == expected);

  ModelConfig bad = cfg;
  bad.heads = 5;
  CHECK_THROWS_AS(init_params(bad), ConfigError);
}

TEST_CASE("forward: attention rows are stochastic, PAD keys get zero mass") {
  ModelParams p = init_params(tiny_config());
  Rng rng(7);
  for (int rep = 0; rep < 100; ++rep) {
    std::size_t seq = 4 + rep % 5;
    std::vector<int> ids = random_ids(seq, p.config.vocab_size, rng);
    std::vector<std::uint8_t> valid(seq, 1);
    std::size_t pad_from = seq - 1 - rep % 2;
    for (std::size_t i = pad_from; i < seq; ++i) {
      valid[i] = 0;
      ids[i] = Vocab::kPad;
    }
    ForwardOutput out = forward(p, ids, valid);
    for (const Tensor& attn : out.attention) {
      for (std::size_t h = 0; h < attn.shape()[0]; ++h)
        for (std::size_t i = 0; i < seq; ++i) {
          double total = 0.0;
          for (std::size_t j = 0; j < seq; ++j) {
            double a = attn.values()[(h * seq + i) * seq + j];
            CHECK(a >= 0.0);
            CHECK(a <= 1.0);
            if (j >= pad_from) CHECK(a == 0.0);
            total += a;
          }
          CHECK(std::abs(total - 1.0) < 1e-9);
        }
    }
  }
}

TEST_CASE("forward: PAD content cannot leak into valid positions") {
  ModelParams p = init_params(tiny_config());
  std::vector<int> ids = {3, 5, 6, 7, 0, 0};
  std::vector<std::uint8_t> valid = {1, 1, 1, 1, 0, 0};
  ForwardOutput a = forward(p, ids, valid);
  std::vector<int> ids2 = {3, 5, 6, 7, 9, 2};  // different PAD-slot content
  ForwardOutput b = forward(p, ids2, valid);
  std::size_t vocab = static_cast<std::size_t>(p.config.vocab_size);
  for (std::size_t pos = 0; pos < 4; ++pos)
    for (std::size_t t = 0; t < vocab; ++t)
      CHECK(a.logits.values()[pos * vocab + t] ==
            b.logits.values()[pos * vocab + t]);
}

TEST_CASE("forward is deterministic and rejects bad input") {
  ModelParams p = init_params(tiny_config());
  std::vector<int> ids = {1, 2, 3};
  ForwardOutput a = forward(p, ids);
  ForwardOutput b = forward(p, ids);
  for (std::size_t i = 0; i < a.logits.size(); ++i)
    CHECK(a.logits.values()[i] == b.logits.values()[i]);

  CHECK_THROWS_AS(forward(p, std::vector<int>{1, 2, 99}), ContractError);
  CHECK_THROWS_AS(forward(p, std::vector<int>(9, 1)), ContractError);
  CHECK_THROWS_AS(forward(p, std::vector<int>{}), ContractError);
}

TEST_CASE("forward gradients match finite differences for every parameter") {
  ModelConfig cfg = tiny_config();
  ModelParams p = init_params(cfg);
  std::vector<int> ids = {1, 4, 7, 2, 9, 3, 5, 6};
  REQUIRE(ids.size() == 8);

  auto loss_value = [&]() {
    ForwardOutput out = forward(p, ids);
    return mean(square(out.logits)).scalar_value();
  };

  GradientTape tape;
  ForwardOutput out = forward(p, ids, {}, &tape);
  Tensor loss = mean(square(out.logits, &tape), &tape);
  tape.backward(loss);

  for (auto& [name, tensor] : p.named_parameters()) {
    Tensor handle = tensor;
    auto numeric = fd::numeric_gradient(handle, loss_value);
    auto m = fd::compare(handle.grad(), numeric);
    INFO(name << ": " << fd::describe(m));
    CHECK(m.ok);
  }
}

TEST_CASE("head permutation does not change the model function") {
  ModelParams p = init_params(tiny_config());
  std::vector<int> ids = {1, 4, 7, 2, 9};
  ForwardOutput base = forward(p, ids);

  ModelParams q = init_params(tiny_config());
  permute_heads(q, 0, {1, 0});
  permute_heads(q, 1, {1, 0});
  ForwardOutput permuted = forward(q, ids);

  bool attention_differs = false;
  for (std::size_t l = 0; l < base.attention.size(); ++l)
    for (std::size_t i = 0; i < base.attention[l].size(); ++i)
      if (base.attention[l].values()[i] != permuted.attention[l].values()[i])
        attention_differs = true;
  CHECK(attention_differs);  // the patterns moved ...
  for (std::size_t i = 0; i < base.logits.size(); ++i)
    CHECK(base.logits.values()[i] ==
          doctest::Approx(permuted.logits.values()[i]).epsilon(1e-12));
}

TEST_CASE("checkpoint round-trip is bit exact") {
  ModelParams p = init_params(tiny_config());
  Vocab v = vocab_of_size(12);
  std::string bytes = encode_checkpoint(p, v);
  Checkpoint ck = decode_checkpoint(bytes);

  auto orig = p.named_parameters();
  auto back = ck.params.named_parameters();
  REQUIRE(orig.size() == back.size());
  for (std::size_t i = 0; i < orig.size(); ++i) {
    CHECK(orig[i].first == back[i].first);
    REQUIRE(orig[i].second.size() == back[i].second.size());
    for (std::size_t j = 0; j < orig[i].second.size(); ++j)
      CHECK(orig[i].second.values()[j] == back[i].second.values()[j]);
  }
  CHECK(ck.vocab.size() == v.size());
  CHECK(encode_checkpoint(ck.params, ck.vocab) == bytes);

  // file round-trip
  std::string path = (std::filesystem::temp_directory_path() /
                      "cattn_test_checkpoint.bin").string();
  save_checkpoint(p, v, path);
  Checkpoint from_file = load_checkpoint(path);
  CHECK(encode_checkpoint(from_file.params, from_file.vocab) == bytes);
  std::remove(path.c_str());
}

TEST_CASE("checkpoint corruption is detected") {
  ModelParams p = init_params(tiny_config());
  Vocab v = vocab_of_size(12);
  std::string bytes = encode_checkpoint(p, v);

  std::string bad_magic = bytes;
  bad_magic[3] ^= 0x1;
  CHECK_THROWS_WITH_AS(decode_checkpoint(bad_magic),
                       doctest::Contains("magic"), DataError);

  std::string bad_version = bytes;
  bad_version[8] = 9;
  CHECK_THROWS_WITH_AS(decode_checkpoint(bad_version),
                       doctest::Contains("version"), DataError);

  std::string truncated = bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_WITH_AS(decode_checkpoint(truncated),
                       doctest::Contains("offset"), DataError);
}

TEST_CASE("checkpoint size follows the format arithmetic") {
  ModelConfig cfg;
  cfg.layers = 3;
  cfg.heads = 4;
  cfg.model_dim = 64;
  cfg.ff_dim = 256;
  cfg.max_len = 64;
  cfg.vocab_size = 69;
  ModelParams p = init_params(cfg);
  Vocab v = vocab_of_size(69);
  std::string bytes = encode_checkpoint(p, v);

  std::size_t expected = 8 + 4 + 7 * 8;        // magic, version, config
  expected += 4 + v.to_text().size();          // vocab block
  expected += 8;                               // tensor count
  for (const auto& [name, tensor] : p.named_parameters())
    expected += 4 + name.size() + 4 + 8 * tensor.rank() + 8 * tensor.size();
  CHECK(bytes.size() == expected);

  // the payload is dominated by 8 bytes per parameter
  CHECK(bytes.size() > 8 * p.parameter_count());
  CHECK(bytes.size() < 8 * p.parameter_count() + 8192);
}
