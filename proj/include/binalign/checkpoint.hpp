#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "binalign/corpus.hpp"
#include "binalign/encoder.hpp"

namespace binalign {

// A trained (or freshly initialized) model together with everything needed
// to run it: architecture config, subword vocabulary, weights.
struct Checkpoint {
  ModelConfig config;
  SubwordVocabulary vocab;
  Parameters<float> params;
  int epochs_seen = 0;
  std::uint64_t init_seed = 0;
};

// Binary layout: magic "BALN1", u32 config-JSON length + bytes, u32 vocab
// length + bytes, u64 float count, raw float32 data for every block in
// declaration order (column-major within a block). All integers and floats
// are little-endian. Round trips are bit-exact.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace binalign
