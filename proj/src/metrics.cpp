#include "binalign/metrics.hpp"

#include <map>
#include <stdexcept>

namespace binalign {

EvalCounts count_pair(const AlignSet& hyp, const GoldAlignment& gold) {
  EvalCounts c;
  c.h = static_cast<long long>(hyp.size());
  c.s = static_cast<long long>(gold.sure.size());
  for (const auto& p : hyp) {
    if (gold.sure.count(p)) ++c.h_cap_s;
    if (gold.possible.count(p)) ++c.h_cap_p;
  }
  return c;
}

double aer(const EvalCounts& c) {
  if (c.h + c.s == 0) {
    throw std::runtime_error("AER undefined: |H| + |S| == 0");
  }
  return 1.0 - static_cast<double>(c.h_cap_s + c.h_cap_p) /
                   static_cast<double>(c.h + c.s);
}

Prf prf(const EvalCounts& c) {
  if (c.s == 0) throw std::runtime_error("P/R/F1 undefined: |S| == 0");
  Prf r;
  r.recall = static_cast<double>(c.h_cap_s) / static_cast<double>(c.s);
  if (c.h > 0) {
    r.precision = static_cast<double>(c.h_cap_p) / static_cast<double>(c.h);
  } else {
    r.precision = 0.0;
    r.precision_defined = false;
  }
  const double pr = r.precision + r.recall;
  r.f1 = pr > 0.0 ? 2.0 * r.precision * r.recall / pr : 0.0;
  return r;
}

EvalReport evaluate_corpus(const std::vector<AlignSet>& hyps,
                           const std::vector<GoldAlignment>& golds) {
  if (hyps.size() != golds.size()) {
    throw std::runtime_error("evaluate: " + std::to_string(hyps.size()) +
                             " hypotheses vs " + std::to_string(golds.size()) +
                             " gold lines");
  }
  EvalReport rep;
  rep.n_pairs = static_cast<int>(hyps.size());
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    rep.counts += count_pair(hyps[i], golds[i]);
  }
  rep.aer = aer(rep.counts);
  const Prf r = prf(rep.counts);
  rep.precision = r.precision;
  rep.recall = r.recall;
  rep.f1 = r.f1;
  rep.precision_defined = r.precision_defined;
  return rep;
}

namespace {

bool contiguous(const std::set<int>& xs) {
  if (xs.empty()) return true;
  return *xs.rbegin() - *xs.begin() + 1 == static_cast<int>(xs.size());
}

// Tallies one side of one pair. `gold_of`/`hyp_of` map a word index to its
// partner set on the other side.
void tally_side(int n_words, const std::map<int, std::set<int>>& gold_of,
                const std::map<int, std::set<int>>& hyp_of, StratReport& rep) {
  static const std::set<int> kEmpty;
  for (int w = 0; w < n_words; ++w) {
    auto git = gold_of.find(w);
    const std::set<int>& gold = git == gold_of.end() ? kEmpty : git->second;
    auto hit = hyp_of.find(w);
    const std::set<int>& hyp = hit == hyp_of.end() ? kEmpty : hit->second;

    if (gold.empty()) {
      ++rep.untranslated.occurrences;
      if (hyp.empty()) ++rep.untranslated.correct;
    } else if (gold.size() >= 2) {
      ++rep.one_to_many.occurrences;
      const bool exact = hyp == gold;
      if (exact) ++rep.one_to_many.correct;
      if (!contiguous(gold)) {
        ++rep.one_to_many_noncontiguous.occurrences;
        if (exact) ++rep.one_to_many_noncontiguous.correct;
      }
    }
  }
}

}  // namespace

StratReport stratify(const std::vector<AlignSet>& hyps,
                     const std::vector<SentencePair>& pairs) {
  if (hyps.size() != pairs.size()) {
    throw std::runtime_error("stratify: " + std::to_string(hyps.size()) +
                             " hypotheses vs " + std::to_string(pairs.size()) +
                             " pairs");
  }
  StratReport rep;
  for (std::size_t n = 0; n < pairs.size(); ++n) {
    const SentencePair& pair = pairs[n];
    if (!pair.gold) {
      throw std::runtime_error("stratify: pair " + std::to_string(n + 1) +
                               " has no gold alignment");
    }
    std::map<int, std::set<int>> gold_src, gold_tgt, hyp_src, hyp_tgt;
    for (const auto& [i, j] : pair.gold->sure) {
      gold_src[i].insert(j);
      gold_tgt[j].insert(i);
    }
    for (const auto& [i, j] : hyps[n]) {
      hyp_src[i].insert(j);
      hyp_tgt[j].insert(i);
    }
    tally_side(pair.source.size(), gold_src, hyp_src, rep);
    tally_side(pair.target.size(), gold_tgt, hyp_tgt, rep);
  }
  return rep;
}

}  // namespace binalign
