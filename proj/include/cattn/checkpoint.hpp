#pragma once

#include <string>

#include "cattn/model.hpp"
#include "cattn/tokenizer.hpp"

namespace cattn {

// Versioned binary bundle: magic, format version, config block, vocab block,
// then named tensors as little-endian IEEE-754 doubles with explicit shapes.
// Round-trips bit-exactly.
void save_checkpoint(const ModelParams& params, const Vocab& vocab,
                     const std::string& path);

struct Checkpoint {
  ModelParams params;
  Vocab vocab;
};

Checkpoint load_checkpoint(const std::string& path);

// In-memory codec, used by the file functions and by tests.
std::string encode_checkpoint(const ModelParams& params, const Vocab& vocab);
Checkpoint decode_checkpoint(const std::string& bytes);

}  // namespace cattn
