#include "binalign/encoder.hpp"

#include <stdexcept>
#include <string>

namespace binalign {

void EncodedInput::validate(const ModelConfig& cfg) const {
  if (ids.empty()) {
    throw std::invalid_argument("encoded input is empty");
  }
  if (ids.size() != segments.size()) {
    throw std::invalid_argument("encoded input: ids and segments differ in length");
  }
  if (static_cast<int>(ids.size()) > cfg.max_len) {
    throw std::runtime_error("encoded input length " +
                             std::to_string(ids.size()) + " exceeds max_len " +
                             std::to_string(cfg.max_len));
  }
  for (int id : ids) {
    if (id < 0 || id >= cfg.vocab_size) {
      throw std::invalid_argument("encoded input: token id " +
                                  std::to_string(id) + " outside vocabulary");
    }
  }
  for (int s : segments) {
    if (s != 0 && s != 1) {
      throw std::invalid_argument("encoded input: segment ids must be 0 or 1");
    }
  }
  for (int pos : target_positions) {
    if (pos < 0 || pos >= length()) {
      throw std::invalid_argument("encoded input: target position " +
                                  std::to_string(pos) + " out of range");
    }
  }
}

std::vector<int> mark_span(const std::vector<int>& token_ids, int word,
                           const WordTokenMap& map) {
  if (word < 0 || word >= map.n_words()) {
    throw std::out_of_range("mark_span: word index " + std::to_string(word) +
                            " out of range for " +
                            std::to_string(map.n_words()) + " words");
  }
  const TokenSpan span = map.spans[static_cast<std::size_t>(word)];
  std::vector<int> out;
  out.reserve(token_ids.size() + 2);
  out.insert(out.end(), token_ids.begin(), token_ids.begin() + span.begin);
  out.push_back(SubwordVocabulary::kMarkOpen);
  out.insert(out.end(), token_ids.begin() + span.begin,
             token_ids.begin() + span.end);
  out.push_back(SubwordVocabulary::kMarkClose);
  out.insert(out.end(), token_ids.begin() + span.end, token_ids.end());
  return out;
}

TokenizedPair tokenize_pair(const SentencePair& pair,
                            const SubwordVocabulary& vocab) {
  TokenizedPair tp;
  auto [src_tok, src_map] = tokenize(pair.source, vocab);
  auto [tgt_tok, tgt_map] = tokenize(pair.target, vocab);
  tp.src_tok = std::move(src_tok);
  tp.src_map = std::move(src_map);
  tp.tgt_tok = std::move(tgt_tok);
  tp.tgt_map = std::move(tgt_map);
  return tp;
}

EncodedInput build_encoded_input(const TokenizedPair& tp, Direction dir,
                                 int marked_word, const ModelConfig& cfg) {
  const bool fwd = dir == Direction::kForwardXtoY;
  const SubwordTokenization& marked = fwd ? tp.src_tok : tp.tgt_tok;
  const WordTokenMap& marked_map = fwd ? tp.src_map : tp.tgt_map;
  const SubwordTokenization& scored = fwd ? tp.tgt_tok : tp.src_tok;

  std::vector<int> marked_ids = mark_span(marked.token_ids, marked_word, marked_map);

  EncodedInput in;
  in.ids.reserve(marked_ids.size() + scored.token_ids.size() + 3);
  in.ids.push_back(SubwordVocabulary::kCls);
  in.ids.insert(in.ids.end(), marked_ids.begin(), marked_ids.end());
  in.ids.push_back(SubwordVocabulary::kSep);
  const int scored_offset = static_cast<int>(in.ids.size());
  in.ids.insert(in.ids.end(), scored.token_ids.begin(), scored.token_ids.end());
  in.ids.push_back(SubwordVocabulary::kSep);

  in.segments.assign(static_cast<std::size_t>(scored_offset), 0);
  in.segments.resize(in.ids.size(), 1);

  in.target_positions.resize(static_cast<std::size_t>(scored.size()));
  for (int t = 0; t < scored.size(); ++t) {
    in.target_positions[static_cast<std::size_t>(t)] = scored_offset + t;
  }

  if (static_cast<int>(in.ids.size()) > cfg.max_len) {
    throw std::runtime_error(
        std::string("encoded pair too long for model: ") +
        std::to_string(in.ids.size()) + " tokens (" + direction_name(dir) +
        ", marked word " + std::to_string(marked_word) + ") with max_len " +
        std::to_string(cfg.max_len));
  }
  return in;
}

}  // namespace binalign
