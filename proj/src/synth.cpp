#include "binalign/synth.hpp"

#include <algorithm>
#include <numeric>
#include <set>
#include <stdexcept>
#include <utility>

#include <json.hpp>

#include "binalign/parallel.hpp"
#include "binalign/rng.hpp"

namespace binalign {

namespace synthwords {

namespace {

std::string base20_form(const char* consonants, int id) {
  static const char vowels[] = {'a', 'e', 'i', 'o', 'u'};
  std::string out;
  do {
    const int syl = id % 20;
    id /= 20;
    out.push_back(consonants[syl / 5]);
    out.push_back(vowels[syl % 5]);
  } while (id > 0);
  return out;
}

}  // namespace

std::string source_form(int id) { return base20_form("bdgk", id); }
std::string target_form(int id) { return base20_form("lmnp", id); }
std::string noise_form(int id) { return base20_form("svzf", id); }

std::string fertility_form(const std::string& target_word) {
  return target_word + "wu";
}

}  // namespace synthwords

void SynthSpec::validate() const {
  auto check_rate = [](double r, const char* name) {
    if (!(r >= 0.0 && r <= 0.5)) {
      throw std::invalid_argument(std::string("synth spec: ") + name +
                                  " must lie in [0, 0.5]");
    }
  };
  check_rate(fertility_rate, "fertility_rate");
  check_rate(noncontig_rate, "noncontig_rate");
  check_rate(drop_rate, "drop_rate");
  check_rate(insert_rate, "insert_rate");
  if (fertility_rate + noncontig_rate + drop_rate + insert_rate > 0.9) {
    throw std::invalid_argument("synth spec: rates sum to more than 0.9");
  }
  if (min_len < 1 || max_len < min_len) {
    throw std::invalid_argument("synth spec: need 1 <= min_len <= max_len");
  }
  if (vocab_size < max_len) {
    throw std::invalid_argument(
        "synth spec: vocab_size must be >= max_len so sentences can use "
        "distinct words");
  }
  if (n_sentences < 0 || shuffle_window < 0) {
    throw std::invalid_argument("synth spec: counts must be >= 0");
  }
}

namespace {

enum class Category { kSingle, kFertile, kNonContiguous, kDropped };

struct TargetWord {
  std::string form;
  int owner = -1;  // source word index, -1 for inserted noise
};

struct SentenceCounts {
  long long single = 0, fert = 0, noncontig = 0, dropped = 0, inserted = 0;
  long long target_words = 0;
  int n_src = 0;
};

// Insertion slots that keep every adjacent same-owner pair intact.
bool splits_owner_run(const std::vector<TargetWord>& tgt, int j) {
  return j > 0 && j < static_cast<int>(tgt.size()) &&
         tgt[static_cast<std::size_t>(j - 1)].owner ==
             tgt[static_cast<std::size_t>(j)].owner;
}

SentencePair generate_sentence(const SynthSpec& spec,
                               const std::vector<int>& dictionary,
                               std::uint64_t sentence_seed,
                               SentenceCounts& counts) {
  Rng rng(sentence_seed);
  const int n = rng.range(spec.min_len, spec.max_len);
  counts.n_src = n;

  // Distinct source word ids per sentence, so occurrences are unambiguous.
  std::vector<int> ids;
  std::set<int> used;
  while (static_cast<int>(ids.size()) < n) {
    const int id = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.vocab_size)));
    if (used.insert(id).second) ids.push_back(id);
  }

  std::vector<Category> cats(static_cast<std::size_t>(n));
  for (auto& c : cats) {
    const double u = rng.uniform();
    if (u < spec.drop_rate) {
      c = Category::kDropped;
    } else if (u < spec.drop_rate + spec.fertility_rate) {
      c = Category::kFertile;
    } else if (u < spec.drop_rate + spec.fertility_rate + spec.noncontig_rate) {
      c = Category::kNonContiguous;
    } else {
      c = Category::kSingle;
    }
  }
  std::vector<bool> insert_noise(static_cast<std::size_t>(n));
  std::vector<int> noise_ids(static_cast<std::size_t>(n), 0);
  for (int i = 0; i < n; ++i) {
    insert_noise[static_cast<std::size_t>(i)] = rng.uniform() < spec.insert_rate;
    if (insert_noise[static_cast<std::size_t>(i)]) {
      noise_ids[static_cast<std::size_t>(i)] =
          static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.vocab_size)));
    }
  }

  // Translation units move as blocks under local reordering, which keeps
  // fertile pairs contiguous.
  struct Unit {
    double key;
    std::vector<TargetWord> words;
  };
  std::vector<Unit> units;
  for (int i = 0; i < n; ++i) {
    const Category c = cats[static_cast<std::size_t>(i)];
    if (c == Category::kDropped) continue;
    const std::string base =
        synthwords::target_form(dictionary[static_cast<std::size_t>(ids[static_cast<std::size_t>(i)])]);
    Unit u;
    u.key = i + rng.uniform() * spec.shuffle_window;
    u.words.push_back({base, i});
    if (c == Category::kFertile) {
      u.words.push_back({synthwords::fertility_form(base), i});
    }
    units.push_back(std::move(u));
  }
  std::stable_sort(units.begin(), units.end(),
                   [](const Unit& a, const Unit& b) { return a.key < b.key; });

  std::vector<TargetWord> tgt;
  for (auto& u : units) {
    for (auto& w : u.words) tgt.push_back(std::move(w));
  }

  // Second parts of non-contiguous words, deferred so the slot choice can
  // avoid the first part's neighborhood. If no valid slot exists the word
  // degrades to a contiguous fertile pair.
  for (int i = 0; i < n; ++i) {
    if (cats[static_cast<std::size_t>(i)] != Category::kNonContiguous) continue;
    int pos1 = -1;
    for (int j = 0; j < static_cast<int>(tgt.size()); ++j) {
      if (tgt[static_cast<std::size_t>(j)].owner == i) {
        pos1 = j;
        break;
      }
    }
    const std::string part2 = synthwords::fertility_form(
        tgt[static_cast<std::size_t>(pos1)].form);
    std::vector<int> valid;
    for (int j = 0; j <= static_cast<int>(tgt.size()); ++j) {
      if (j == pos1 || j == pos1 + 1) continue;
      if (splits_owner_run(tgt, j)) continue;
      valid.push_back(j);
    }
    if (valid.empty()) {
      tgt.insert(tgt.begin() + pos1 + 1, {part2, i});
      cats[static_cast<std::size_t>(i)] = Category::kFertile;
    } else {
      const int j = valid[rng.below(valid.size())];
      tgt.insert(tgt.begin() + j, {part2, i});
    }
  }

  for (int i = 0; i < n; ++i) {
    if (!insert_noise[static_cast<std::size_t>(i)]) continue;
    std::vector<int> valid;
    for (int j = 0; j <= static_cast<int>(tgt.size()); ++j) {
      if (!splits_owner_run(tgt, j)) valid.push_back(j);
    }
    const int j = valid[rng.below(valid.size())];
    tgt.insert(tgt.begin() + j,
               {synthwords::noise_form(noise_ids[static_cast<std::size_t>(i)]), -1});
    ++counts.inserted;
  }

  for (const Category c : cats) {
    switch (c) {
      case Category::kSingle: ++counts.single; break;
      case Category::kFertile: ++counts.fert; break;
      case Category::kNonContiguous: ++counts.noncontig; break;
      case Category::kDropped: ++counts.dropped; break;
    }
  }
  counts.target_words = static_cast<long long>(tgt.size());

  SentencePair pair;
  for (int i = 0; i < n; ++i) {
    pair.source.words.push_back(
        synthwords::source_form(ids[static_cast<std::size_t>(i)]));
  }
  GoldAlignment gold;
  for (int j = 0; j < static_cast<int>(tgt.size()); ++j) {
    pair.target.words.push_back(tgt[static_cast<std::size_t>(j)].form);
    if (tgt[static_cast<std::size_t>(j)].owner >= 0) {
      gold.sure.emplace(tgt[static_cast<std::size_t>(j)].owner, j);
    }
  }
  gold.possible = gold.sure;
  for (std::size_t w = 0; w < pair.source.words.size(); ++w) {
    if (w) pair.source.raw += ' ';
    pair.source.raw += pair.source.words[w];
  }
  for (std::size_t w = 0; w < pair.target.words.size(); ++w) {
    if (w) pair.target.raw += ' ';
    pair.target.raw += pair.target.words[w];
  }
  pair.gold = std::move(gold);
  return pair;
}

}  // namespace

SynthCorpus generate(const SynthSpec& spec, int n_threads) {
  spec.validate();

  // Bijective word dictionary shared by every sentence of the language pair.
  std::vector<int> dictionary(static_cast<std::size_t>(spec.vocab_size));
  std::iota(dictionary.begin(), dictionary.end(), 0);
  Rng dict_rng(spec.dict_seed);
  dict_rng.shuffle(dictionary);

  SynthCorpus corpus;
  corpus.pairs.resize(static_cast<std::size_t>(spec.n_sentences));
  std::vector<SentenceCounts> per_sentence(
      static_cast<std::size_t>(spec.n_sentences));
  parallel_for(static_cast<std::size_t>(spec.n_sentences), n_threads,
               [&](std::size_t s) {
                 corpus.pairs[s] = generate_sentence(
                     spec, dictionary, derive_seed(spec.seed, s + 1),
                     per_sentence[s]);
               });

  corpus.counts.sentences = spec.n_sentences;
  for (const auto& c : per_sentence) {
    corpus.counts.source_words += c.n_src;
    corpus.counts.target_words += c.target_words;
    corpus.counts.single += c.single;
    corpus.counts.fertile_contiguous += c.fert;
    corpus.counts.fertile_noncontiguous += c.noncontig;
    corpus.counts.dropped += c.dropped;
    corpus.counts.inserted += c.inserted;
  }
  return corpus;
}

namespace {

nlohmann::json spec_json(const SynthSpec& spec) {
  return nlohmann::json{{"vocab_size", spec.vocab_size},
                        {"dict_seed", spec.dict_seed},
                        {"fertility_rate", spec.fertility_rate},
                        {"noncontig_rate", spec.noncontig_rate},
                        {"drop_rate", spec.drop_rate},
                        {"insert_rate", spec.insert_rate},
                        {"shuffle_window", spec.shuffle_window},
                        {"n_sentences", spec.n_sentences},
                        {"len_range", {spec.min_len, spec.max_len}},
                        {"seed", spec.seed}};
}

}  // namespace

SynthSpec synth_spec_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("synth spec: bad JSON: ") + e.what());
  }
  SynthSpec spec;
  try {
    spec.vocab_size = j.at("vocab_size").get<int>();
    spec.dict_seed = j.at("dict_seed").get<std::uint64_t>();
    spec.fertility_rate = j.value("fertility_rate", 0.0);
    spec.noncontig_rate = j.value("noncontig_rate", 0.0);
    spec.drop_rate = j.value("drop_rate", 0.0);
    spec.insert_rate = j.value("insert_rate", 0.0);
    spec.shuffle_window = j.value("shuffle_window", 0);
    spec.n_sentences = j.at("n_sentences").get<int>();
    const auto& lr = j.at("len_range");
    spec.min_len = lr.at(0).get<int>();
    spec.max_len = lr.at(1).get<int>();
    spec.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("synth spec: missing or bad field: ") +
                                e.what());
  }
  spec.validate();
  return spec;
}

std::string synth_spec_to_json(const SynthSpec& spec) {
  return spec_json(spec).dump(2) + "\n";
}

std::string manifest_json(const SynthSpec& spec, const SynthCounts& counts) {
  nlohmann::json j{{"spec", spec_json(spec)},
                   {"realized",
                    {{"sentences", counts.sentences},
                     {"source_words", counts.source_words},
                     {"target_words", counts.target_words},
                     {"single", counts.single},
                     {"fertile_contiguous", counts.fertile_contiguous},
                     {"fertile_noncontiguous", counts.fertile_noncontiguous},
                     {"dropped", counts.dropped},
                     {"inserted", counts.inserted}}}};
  return j.dump(2) + "\n";
}

}  // namespace binalign
