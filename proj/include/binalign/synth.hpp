#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "binalign/corpus.hpp"

namespace binalign {

// Recipe for a synthetic language pair. Every source word falls into exactly
// one category: dropped (untranslated), fertile (two contiguous target
// words), non-contiguous fertile (two non-adjacent target words), or plain
// one-to-one. Spurious target words are inserted on top at insert_rate per
// source word. Gold links follow ownership exactly, so S == P.
struct SynthSpec {
  int vocab_size = 200;
  std::uint64_t dict_seed = 1;
  double fertility_rate = 0.0;
  double noncontig_rate = 0.0;
  double drop_rate = 0.0;
  double insert_rate = 0.0;
  int shuffle_window = 0;
  int n_sentences = 0;
  int min_len = 1;
  int max_len = 10;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthCounts {
  long long sentences = 0;
  long long source_words = 0;
  long long target_words = 0;
  long long single = 0;
  long long fertile_contiguous = 0;
  long long fertile_noncontiguous = 0;
  long long dropped = 0;
  long long inserted = 0;
};

struct SynthCorpus {
  std::vector<SentencePair> pairs;
  SynthCounts counts;
};

// Deterministic in (spec); sentences are generated from per-sentence derived
// seeds, so the result is identical for any thread count.
SynthCorpus generate(const SynthSpec& spec, int n_threads = 1);

SynthSpec synth_spec_from_json(const std::string& text);
std::string synth_spec_to_json(const SynthSpec& spec);
std::string manifest_json(const SynthSpec& spec, const SynthCounts& counts);

// Surface forms: base-20 syllable strings over three disjoint consonant
// families, so the two languages and the noise lexicon never share words.
namespace synthwords {
std::string source_form(int id);
std::string target_form(int id);
std::string noise_form(int id);
// Second target word of a fertile source word.
std::string fertility_form(const std::string& target_word);
}  // namespace synthwords

}  // namespace binalign
