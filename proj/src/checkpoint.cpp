#include "cattn/checkpoint.hpp"

#include <cstring>

#include "cattn/errors.hpp"
#include "cattn/parsers.hpp"

namespace cattn {

namespace {

constexpr char kMagic[8] = {'C', 'A', 'T', 'T', 'N', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
}

void put_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  put_u64(out, bits);
}

void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out += s;
}

struct Cursor {
  const std::string& bytes;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) {
    if (pos + n > bytes.size())
      throw DataError("checkpoint truncated at offset " + std::to_string(pos) +
                      " while reading " + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(
               static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(i)]))
           << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(bytes[pos + static_cast<std::size_t>(i)]))
           << (8 * i);
    pos += 8;
    return v;
  }
  double f64(const char* what) {
    std::uint64_t bits = u64(what);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(const char* what) {
    std::uint32_t len = u32(what);
    need(len, what);
    std::string s = bytes.substr(pos, len);
    pos += len;
    return s;
  }
};

}  // namespace

std::string encode_checkpoint(const ModelParams& params, const Vocab& vocab) {
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put_u32(out, kVersion);

  const ModelConfig& c = params.config;
  put_u64(out, static_cast<std::uint64_t>(c.layers));
  put_u64(out, static_cast<std::uint64_t>(c.heads));
  put_u64(out, static_cast<std::uint64_t>(c.model_dim));
  put_u64(out, static_cast<std::uint64_t>(c.ff_dim));
  put_u64(out, static_cast<std::uint64_t>(c.max_len));
  put_u64(out, static_cast<std::uint64_t>(c.vocab_size));
  put_u64(out, c.seed);

  put_str(out, vocab.to_text());

  auto named = params.named_parameters();
  put_u64(out, named.size());
  for (const auto& [name, tensor] : named) {
    put_str(out, name);
    put_u32(out, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t dim : tensor.shape()) put_u64(out, dim);
    for (double v : tensor.values()) put_f64(out, v);
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Cursor cur{bytes};
  cur.need(sizeof(kMagic), "magic");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0)
    throw DataError("checkpoint magic mismatch: not a checkpoint file");
  cur.pos += sizeof(kMagic);
  std::uint32_t version = cur.u32("version");
  if (version != kVersion)
    throw DataError("checkpoint version " + std::to_string(version) +
                    " unsupported (expected " + std::to_string(kVersion) + ")");

  ModelConfig config;
  config.layers = static_cast<int>(cur.u64("config.layers"));
  config.heads = static_cast<int>(cur.u64("config.heads"));
  config.model_dim = static_cast<int>(cur.u64("config.model_dim"));
  config.ff_dim = static_cast<int>(cur.u64("config.ff_dim"));
  config.max_len = static_cast<int>(cur.u64("config.max_len"));
  config.vocab_size = static_cast<int>(cur.u64("config.vocab_size"));
  config.seed = cur.u64("config.seed");
  config.validate();

  Checkpoint ck;
  ck.vocab = Vocab::from_text(cur.str("vocab"));
  config.vocab_size = static_cast<int>(ck.vocab.size());
  ck.params = init_params(config);

  auto named = ck.params.named_parameters();
  std::uint64_t count = cur.u64("tensor count");
  if (count != named.size())
    throw DataError("checkpoint holds " + std::to_string(count) +
                    " tensors, model expects " + std::to_string(named.size()));
  for (auto& [name, tensor] : named) {
    std::string stored_name = cur.str("tensor name");
    if (stored_name != name)
      throw DataError("checkpoint tensor \"" + stored_name +
                      "\" where \"" + name + "\" was expected");
    std::uint32_t rank = cur.u32("tensor rank");
    Shape shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i) shape[i] = cur.u64("tensor dim");
    Tensor handle = tensor;
    if (shape != handle.shape())
      throw DataError("checkpoint tensor \"" + name + "\" has shape " +
                      shape_to_string(shape) + ", expected " +
                      shape_to_string(handle.shape()));
    auto dst = handle.values_mut();
    for (std::size_t i = 0; i < dst.size(); ++i)
      dst[i] = cur.f64("tensor data");
  }
  if (cur.pos != bytes.size())
    throw DataError("checkpoint has " + std::to_string(bytes.size() - cur.pos) +
                    " trailing bytes");
  return ck;
}

void save_checkpoint(const ModelParams& params, const Vocab& vocab,
                     const std::string& path) {
  write_file(path, encode_checkpoint(params, vocab));
}

Checkpoint load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace cattn
