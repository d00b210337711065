#include "binalign/corpus.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "binalign/util.hpp"

namespace binalign {

WordSequence WordSequence::from_line(std::string line) {
  WordSequence ws;
  ws.words = split_whitespace(line);
  ws.raw = std::move(line);
  return ws;
}

void GoldAlignment::validate(int n_src, int n_tgt) const {
  for (const auto& p : sure) {
    if (!possible.count(p)) {
      throw std::runtime_error("gold alignment: sure link not in possible");
    }
  }
  for (const auto& [i, j] : possible) {
    if (i < 0 || i >= n_src || j < 0 || j >= n_tgt) {
      std::ostringstream msg;
      msg << "gold alignment: link " << i << "-" << j << " out of bounds for "
          << n_src << "x" << n_tgt << " pair";
      throw std::runtime_error(msg.str());
    }
  }
}

const std::array<std::string, 6>& SubwordVocabulary::special_tokens() {
  static const std::array<std::string, 6> specials = {
      "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MARK]", "[/MARK]"};
  return specials;
}

void SubwordVocabulary::rebuild_index() {
  id_to_token.assign(entries.size(), {});
  for (const auto& [tok, id] : entries) {
    if (id < 0 || id >= static_cast<int>(entries.size())) {
      throw std::runtime_error("vocabulary ids are not dense: id " +
                               std::to_string(id));
    }
    if (!id_to_token[id].empty()) {
      throw std::runtime_error("vocabulary: duplicate id " + std::to_string(id));
    }
    id_to_token[id] = tok;
  }
  const auto& specials = special_tokens();
  for (int i = 0; i < 6; ++i) {
    if (id_to_token[static_cast<std::size_t>(i)] != specials[i]) {
      throw std::runtime_error("vocabulary: special token mismatch at id " +
                               std::to_string(i));
    }
  }
  max_token_chars = 0;
  for (std::size_t id = 6; id < id_to_token.size(); ++id) {
    int n = static_cast<int>(utf8_chars(id_to_token[id]).size());
    max_token_chars = std::max(max_token_chars, n);
  }
}

std::string SubwordVocabulary::serialize() const {
  std::string out;
  for (std::size_t id = 0; id < id_to_token.size(); ++id) {
    out += id_to_token[id];
    out += '\t';
    out += std::to_string(id);
    out += '\n';
  }
  return out;
}

SubwordVocabulary SubwordVocabulary::deserialize(const std::string& text) {
  SubwordVocabulary v;
  const auto lines = split_lines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const std::string& line = lines[ln];
    auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw std::runtime_error("vocabulary line " + std::to_string(ln + 1) +
                               ": missing tab");
    }
    std::string tok = line.substr(0, tab);
    int id = 0;
    try {
      std::size_t used = 0;
      id = std::stoi(line.substr(tab + 1), &used);
      if (used != line.size() - tab - 1) throw std::invalid_argument("");
    } catch (const std::exception&) {
      throw std::runtime_error("vocabulary line " + std::to_string(ln + 1) +
                               ": bad id");
    }
    if (!v.entries.emplace(std::move(tok), id).second) {
      throw std::runtime_error("vocabulary line " + std::to_string(ln + 1) +
                               ": duplicate token");
    }
  }
  v.rebuild_index();
  return v;
}

namespace {

bool parse_link_token(const std::string& tok, int& i, int& j, bool& sure) {
  std::size_t sep = std::string::npos;
  for (std::size_t k = 0; k < tok.size(); ++k) {
    if (tok[k] == '-' || tok[k] == 'p') {
      sep = k;
      break;
    }
  }
  if (sep == std::string::npos || sep == 0 || sep + 1 >= tok.size()) {
    return false;
  }
  sure = tok[sep] == '-';
  for (std::size_t k = 0; k < tok.size(); ++k) {
    if (k == sep) continue;
    if (tok[k] < '0' || tok[k] > '9') return false;
  }
  try {
    i = std::stoi(tok.substr(0, sep));
    j = std::stoi(tok.substr(sep + 1));
  } catch (const std::exception&) {
    return false;
  }
  return true;
}

}  // namespace

GoldAlignment parse_pharaoh(const std::string& line) {
  GoldAlignment g;
  for (const std::string& tok : split_whitespace(line)) {
    int i = 0, j = 0;
    bool sure = false;
    if (!parse_link_token(tok, i, j, sure)) {
      throw std::runtime_error("bad alignment token '" + tok + "'");
    }
    if (sure) g.sure.emplace(i, j);
    g.possible.emplace(i, j);
  }
  return g;
}

std::string format_pharaoh(const GoldAlignment& g) {
  std::string out;
  for (const auto& [i, j] : g.possible) {  // std::set: lexicographic order
    if (!out.empty()) out += ' ';
    out += std::to_string(i);
    out += g.sure.count({i, j}) ? '-' : 'p';
    out += std::to_string(j);
  }
  return out;
}

std::vector<SentencePair> parse_parallel_corpus(
    const std::string& src_path, const std::string& tgt_path,
    const std::optional<std::string>& align_path) {
  const auto src_lines = split_lines(read_file(src_path));
  const auto tgt_lines = split_lines(read_file(tgt_path));
  if (src_lines.size() != tgt_lines.size()) {
    throw std::runtime_error(
        "line count mismatch: " + src_path + " has " +
        std::to_string(src_lines.size()) + " lines, " + tgt_path + " has " +
        std::to_string(tgt_lines.size()));
  }
  std::vector<std::string> align_lines;
  if (align_path) {
    align_lines = split_lines(read_file(*align_path));
    if (align_lines.size() != src_lines.size()) {
      throw std::runtime_error(
          "line count mismatch: " + *align_path + " has " +
          std::to_string(align_lines.size()) + " lines, expected " +
          std::to_string(src_lines.size()));
    }
  }

  std::vector<SentencePair> pairs;
  pairs.reserve(src_lines.size());
  for (std::size_t ln = 0; ln < src_lines.size(); ++ln) {
    SentencePair pair;
    pair.source = WordSequence::from_line(src_lines[ln]);
    pair.target = WordSequence::from_line(tgt_lines[ln]);
    if (pair.source.words.empty()) {
      throw std::runtime_error(src_path + " line " + std::to_string(ln + 1) +
                               ": empty line");
    }
    if (pair.target.words.empty()) {
      throw std::runtime_error(tgt_path + " line " + std::to_string(ln + 1) +
                               ": empty line");
    }
    if (align_path) {
      GoldAlignment g;
      try {
        g = parse_pharaoh(align_lines[ln]);
        g.validate(pair.source.size(), pair.target.size());
      } catch (const std::exception& e) {
        throw std::runtime_error(*align_path + " line " +
                                 std::to_string(ln + 1) + ": " + e.what());
      }
      pair.gold = std::move(g);
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

SubwordVocabulary train_subword_vocab(const std::vector<SentencePair>& corpus,
                                      int target_size, std::uint64_t /*seed*/) {
  // Word frequencies over both sides.
  std::map<std::string, long long> word_freq;
  for (const SentencePair& p : corpus) {
    for (const auto& w : p.source.words) ++word_freq[w];
    for (const auto& w : p.target.words) ++word_freq[w];
  }

  std::set<std::string> alphabet;
  for (const auto& [w, f] : word_freq) {
    for (auto& c : utf8_chars(w)) alphabet.insert(std::move(c));
  }

  const int base_size = 6 + static_cast<int>(alphabet.size());
  if (target_size < base_size) {
    throw std::invalid_argument(
        "target_size too small: need at least " + std::to_string(base_size) +
        " (6 specials + " + std::to_string(alphabet.size()) + " characters)");
  }

  SubwordVocabulary vocab;
  int next_id = 0;
  for (const auto& s : SubwordVocabulary::special_tokens()) {
    vocab.entries.emplace(s, next_id++);
  }
  for (const auto& c : alphabet) vocab.entries.emplace(c, next_id++);

  // Each distinct word as a sequence of current symbols.
  std::vector<std::pair<std::vector<std::string>, long long>> seqs;
  seqs.reserve(word_freq.size());
  for (const auto& [w, f] : word_freq) seqs.emplace_back(utf8_chars(w), f);

  while (next_id < target_size) {
    // (left, right) -> count; std::map keeps selection deterministic.
    std::map<std::pair<std::string, std::string>, long long> pair_count;
    for (const auto& [syms, f] : seqs) {
      for (std::size_t k = 0; k + 1 < syms.size(); ++k) {
        pair_count[{syms[k], syms[k + 1]}] += f;
      }
    }
    if (pair_count.empty()) break;

    long long best_count = -1;
    std::pair<std::string, std::string> best;
    std::string best_merged;
    for (const auto& [pr, count] : pair_count) {
      std::string merged = pr.first + pr.second;
      if (count > best_count ||
          (count == best_count &&
           (merged < best_merged ||
            (merged == best_merged && pr.first < best.first)))) {
        best_count = count;
        best = pr;
        best_merged = std::move(merged);
      }
    }

    if (vocab.entries.emplace(best_merged, next_id).second) ++next_id;
    for (auto& [syms, f] : seqs) {
      for (std::size_t k = 0; k + 1 < syms.size();) {
        if (syms[k] == best.first && syms[k + 1] == best.second) {
          syms[k] = best_merged;
          syms.erase(syms.begin() + static_cast<std::ptrdiff_t>(k) + 1);
        } else {
          ++k;
        }
      }
    }
  }

  vocab.rebuild_index();
  return vocab;
}

std::pair<SubwordTokenization, WordTokenMap> tokenize(
    const WordSequence& ws, const SubwordVocabulary& vocab) {
  SubwordTokenization tok;
  WordTokenMap map;
  map.spans.reserve(ws.words.size());

  for (int w = 0; w < ws.size(); ++w) {
    const auto chars = utf8_chars(ws.words[static_cast<std::size_t>(w)]);
    const int span_begin = tok.size();
    std::size_t pos = 0;
    bool first = true;
    while (pos < chars.size()) {
      const std::size_t remaining = chars.size() - pos;
      std::size_t match_len = 0;
      int match_id = -1;
      std::string candidate;
      const std::size_t cap = std::min<std::size_t>(
          remaining, static_cast<std::size_t>(
                         std::max(vocab.max_token_chars, 1)));
      for (std::size_t len = cap; len >= 1; --len) {
        candidate.clear();
        for (std::size_t k = 0; k < len; ++k) candidate += chars[pos + k];
        auto it = vocab.entries.find(candidate);
        // Specials (ids 0..5) are never produced by surface text.
        if (it != vocab.entries.end() && it->second >= 6) {
          match_len = len;
          match_id = it->second;
          break;
        }
      }
      if (match_id < 0) {
        // Unknown character: consume one codepoint, keep the surface form so
        // diagnostics stay readable.
        tok.unk_positions.push_back(tok.size());
        tok.token_ids.push_back(SubwordVocabulary::kUnk);
        tok.token_strings.push_back(
            first ? chars[pos]
                  : SubwordVocabulary::kContinuationMarker + chars[pos]);
        pos += 1;
      } else {
        candidate.clear();
        for (std::size_t k = 0; k < match_len; ++k) candidate += chars[pos + k];
        tok.token_ids.push_back(match_id);
        tok.token_strings.push_back(
            first ? candidate
                  : SubwordVocabulary::kContinuationMarker + candidate);
        pos += match_len;
      }
      tok.word_index.push_back(w);
      first = false;
    }
    map.spans.push_back({span_begin, tok.size()});
  }
  return {std::move(tok), std::move(map)};
}

WordSequence detokenize(const SubwordTokenization& t) {
  if (!t.unk_positions.empty()) {
    throw std::runtime_error("detokenize: UNK at token position " +
                             std::to_string(t.unk_positions.front()));
  }
  WordSequence ws;
  const std::string marker = SubwordVocabulary::kContinuationMarker;
  std::string word;
  for (int k = 0; k < t.size(); ++k) {
    const bool new_word =
        k == 0 || t.word_index[static_cast<std::size_t>(k)] !=
                      t.word_index[static_cast<std::size_t>(k - 1)];
    if (new_word && k > 0) {
      ws.words.push_back(word);
      word.clear();
    }
    const std::string& s = t.token_strings[static_cast<std::size_t>(k)];
    if (!new_word && s.rfind(marker, 0) == 0) {
      word += s.substr(marker.size());
    } else {
      word += s;
    }
  }
  if (t.size() > 0) ws.words.push_back(word);
  for (std::size_t i = 0; i < ws.words.size(); ++i) {
    if (i > 0) ws.raw += ' ';
    ws.raw += ws.words[i];
  }
  return ws;
}

}  // namespace binalign
