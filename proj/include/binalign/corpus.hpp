#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace binalign {

using AlignPair = std::pair<int, int>;
using AlignSet = std::set<AlignPair>;

// A whitespace-tokenized sentence. Joining `words` with single spaces
// reproduces `raw` up to whitespace normalization.
struct WordSequence {
  std::vector<std::string> words;
  std::string raw;

  static WordSequence from_line(std::string line);
  int size() const { return static_cast<int>(words.size()); }
};

// Gold links: `sure` is always a subset of `possible`.
struct GoldAlignment {
  AlignSet sure;
  AlignSet possible;

  bool operator==(const GoldAlignment&) const = default;
  // Throws if sure exceeds possible or any index is out of bounds.
  void validate(int n_src, int n_tgt) const;
};

struct SentencePair {
  WordSequence source;
  WordSequence target;
  std::optional<GoldAlignment> gold;
};

// Subword vocabulary with six reserved specials at fixed ids. Entries are
// plain strings; the continuation marker is applied at tokenization time.
struct SubwordVocabulary {
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kMarkOpen = 4;
  static constexpr int kMarkClose = 5;
  static constexpr const char* kContinuationMarker = "##";

  static const std::array<std::string, 6>& special_tokens();

  std::map<std::string, int> entries;  // includes the specials
  std::vector<std::string> id_to_token;
  int max_token_chars = 0;  // longest entry in codepoints, specials excluded

  int size() const { return static_cast<int>(id_to_token.size()); }
  const std::string& token(int id) const { return id_to_token.at(id); }

  // Rebuilds id_to_token/max_token_chars from `entries` and checks that ids
  // are dense and the specials sit at ids 0..5.
  void rebuild_index();

  // One `token<TAB>id` line per entry, in id order (specials first).
  std::string serialize() const;
  static SubwordVocabulary deserialize(const std::string& text);
};

// Result of subword segmentation. `word_index` maps each token to its word
// and is monotone non-decreasing with contiguous runs. Continuation tokens
// carry the "##" prefix in `token_strings` only; ids refer to plain entries.
struct SubwordTokenization {
  std::vector<int> token_ids;
  std::vector<std::string> token_strings;
  std::vector<int> word_index;
  std::vector<int> unk_positions;  // token indices that fell back to UNK

  int size() const { return static_cast<int>(token_ids.size()); }
};

struct TokenSpan {
  int begin = 0;
  int end = 0;  // half-open
  int width() const { return end - begin; }
  bool operator==(const TokenSpan&) const = default;
};

// Per-word token intervals; spans are disjoint, ordered, non-empty, and
// partition [0, n_tokens).
struct WordTokenMap {
  std::vector<TokenSpan> spans;
  int n_words() const { return static_cast<int>(spans.size()); }
};

// --- alignment text format -------------------------------------------------
//
// One sentence pair per line, whitespace-separated link tokens:
//   i-j   sure link (also possible)
//   ipj   possible-only link
GoldAlignment parse_pharaoh(const std::string& line);
std::string format_pharaoh(const GoldAlignment& g);

// Reads parallel files (and an optional alignment file) into sentence pairs.
// Line counts must agree; empty lines and malformed link tokens are errors
// that name the offending line.
std::vector<SentencePair> parse_parallel_corpus(
    const std::string& src_path, const std::string& tgt_path,
    const std::optional<std::string>& align_path = std::nullopt);

// BPE-style vocabulary training: all seen characters enter the vocabulary,
// then the most frequent adjacent merges are added until `target_size`
// entries exist. Ties break on the lexicographically smallest merged string.
SubwordVocabulary train_subword_vocab(const std::vector<SentencePair>& corpus,
                                      int target_size, std::uint64_t seed);

// Greedy longest-match segmentation per word. Characters absent from the
// vocabulary map to UNK and are recorded in unk_positions.
std::pair<SubwordTokenization, WordTokenMap> tokenize(
    const WordSequence& ws, const SubwordVocabulary& vocab);

// Exact inverse of tokenize for UNK-free input; throws if UNK is present.
WordSequence detokenize(const SubwordTokenization& t);

}  // namespace binalign
