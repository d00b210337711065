#include "binalign/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <stdexcept>

#include <json.hpp>

#include "binalign/util.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

namespace binalign {

namespace {

constexpr char kMagic[] = {'B', 'A', 'L', 'N', '1'};
constexpr std::size_t kMagicLen = sizeof(kMagic);

void append_u32(std::string& out, std::uint32_t v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

void append_u64(std::string& out, std::uint64_t v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(v));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  void raw(void* dst, std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw std::runtime_error("checkpoint truncated: wanted " +
                               std::to_string(n) + " bytes at offset " +
                               std::to_string(pos_) + ", have " +
                               std::to_string(bytes_.size() - pos_));
    }
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }

  std::uint32_t u32() {
    std::uint32_t v;
    raw(&v, sizeof(v));
    return v;
  }

  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof(v));
    return v;
  }

  std::string str(std::size_t n) {
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

nlohmann::json config_to_json(const Checkpoint& ckpt) {
  return nlohmann::json{{"d_model", ckpt.config.d_model},
                        {"n_heads", ckpt.config.n_heads},
                        {"n_layers", ckpt.config.n_layers},
                        {"ffn_dim", ckpt.config.ffn_dim},
                        {"max_len", ckpt.config.max_len},
                        {"vocab_size", ckpt.config.vocab_size},
                        {"dropout_rate", ckpt.config.dropout_rate},
                        {"epochs_seen", ckpt.epochs_seen},
                        {"init_seed", ckpt.init_seed}};
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  ckpt.config.validate();
  if (ckpt.vocab.size() != ckpt.config.vocab_size) {
    throw std::invalid_argument(
        "checkpoint: vocabulary size " + std::to_string(ckpt.vocab.size()) +
        " does not match config vocab_size " +
        std::to_string(ckpt.config.vocab_size));
  }
  const std::string config_json = config_to_json(ckpt).dump();
  const std::string vocab_text = ckpt.vocab.serialize();

  std::string out;
  out.append(kMagic, kMagicLen);
  append_u32(out, static_cast<std::uint32_t>(config_json.size()));
  out += config_json;
  append_u32(out, static_cast<std::uint32_t>(vocab_text.size()));
  out += vocab_text;

  auto blocks = param_blocks(ckpt.params);
  std::uint64_t count = 0;
  for (const auto& b : blocks) count += static_cast<std::uint64_t>(b.size);
  append_u64(out, count);
  for (const auto& b : blocks) {
    out.append(reinterpret_cast<const char*>(b.data),
               static_cast<std::size_t>(b.size) * sizeof(float));
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  char magic[kMagicLen];
  r.raw(magic, kMagicLen);
  if (std::memcmp(magic, kMagic, kMagicLen) != 0) {
    throw std::runtime_error("checkpoint: bad magic, not a model file");
  }

  Checkpoint ckpt;
  const std::string config_json = r.str(r.u32());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(config_json);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: bad config JSON: ") +
                             e.what());
  }
  ckpt.config.d_model = j.at("d_model").get<int>();
  ckpt.config.n_heads = j.at("n_heads").get<int>();
  ckpt.config.n_layers = j.at("n_layers").get<int>();
  ckpt.config.ffn_dim = j.at("ffn_dim").get<int>();
  ckpt.config.max_len = j.at("max_len").get<int>();
  ckpt.config.vocab_size = j.at("vocab_size").get<int>();
  ckpt.config.dropout_rate = j.at("dropout_rate").get<double>();
  ckpt.epochs_seen = j.value("epochs_seen", 0);
  ckpt.init_seed = j.value("init_seed", std::uint64_t{0});
  ckpt.config.validate();

  ckpt.vocab = SubwordVocabulary::deserialize(r.str(r.u32()));
  if (ckpt.vocab.size() != ckpt.config.vocab_size) {
    throw std::runtime_error(
        "checkpoint: vocabulary has " + std::to_string(ckpt.vocab.size()) +
        " entries but config says " + std::to_string(ckpt.config.vocab_size));
  }

  ckpt.params = make_zero_params<float>(ckpt.config);
  auto blocks = param_blocks(ckpt.params);
  std::uint64_t expected = 0;
  for (const auto& b : blocks) expected += static_cast<std::uint64_t>(b.size);
  const std::uint64_t count = r.u64();
  if (count != expected) {
    throw std::runtime_error("checkpoint: float count " +
                             std::to_string(count) + " does not match config (" +
                             std::to_string(expected) + " expected)");
  }
  for (auto& b : blocks) {
    r.raw(b.data, static_cast<std::size_t>(b.size) * sizeof(float));
  }
  if (r.remaining() != 0) {
    throw std::runtime_error("checkpoint: " + std::to_string(r.remaining()) +
                             " trailing bytes after parameter data");
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace binalign
