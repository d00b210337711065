#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "binalign/corpus.hpp"
#include "binalign/metrics.hpp"
#include "binalign/rng.hpp"

using namespace binalign;

namespace {

// Independent set-arithmetic oracle: recomputes every quantity from raw sets
// with integer counting and a single final division.
struct OracleReport {
  long long hs = 0, hp = 0, h = 0, s = 0;
  double aer = 0, precision = 0, recall = 0, f1 = 0;
};

OracleReport oracle(const std::vector<AlignSet>& hyps,
                    const std::vector<GoldAlignment>& golds) {
  OracleReport r;
  for (std::size_t k = 0; k < hyps.size(); ++k) {
    AlignSet cap_s, cap_p;
    std::set_intersection(hyps[k].begin(), hyps[k].end(),
                          golds[k].sure.begin(), golds[k].sure.end(),
                          std::inserter(cap_s, cap_s.begin()));
    std::set_intersection(hyps[k].begin(), hyps[k].end(),
                          golds[k].possible.begin(), golds[k].possible.end(),
                          std::inserter(cap_p, cap_p.begin()));
    r.hs += static_cast<long long>(cap_s.size());
    r.hp += static_cast<long long>(cap_p.size());
    r.h += static_cast<long long>(hyps[k].size());
    r.s += static_cast<long long>(golds[k].sure.size());
  }
  r.aer = 1.0 - static_cast<double>(r.hs + r.hp) / static_cast<double>(r.h + r.s);
  r.recall = static_cast<double>(r.hs) / static_cast<double>(r.s);
  r.precision = r.h == 0 ? 0.0 : static_cast<double>(r.hp) / static_cast<double>(r.h);
  r.f1 = (r.precision + r.recall) == 0.0
             ? 0.0
             : 2.0 * r.precision * r.recall / (r.precision + r.recall);
  return r;
}

GoldAlignment random_gold(Rng& rng, int n_src, int n_tgt, bool s_equals_p) {
  GoldAlignment g;
  for (int i = 0; i < n_src; ++i) {
    for (int j = 0; j < n_tgt; ++j) {
      if (rng.uniform() < 0.25) {
        g.possible.emplace(i, j);
        if (s_equals_p || rng.uniform() < 0.7) g.sure.emplace(i, j);
      }
    }
  }
  if (g.sure.empty()) {  // keep |S| > 0 so prf is defined
    g.sure.emplace(0, 0);
    g.possible.emplace(0, 0);
  }
  if (s_equals_p) g.sure = g.possible;
  return g;
}

AlignSet random_hyp(Rng& rng, int n_src, int n_tgt) {
  AlignSet h;
  for (int i = 0; i < n_src; ++i) {
    for (int j = 0; j < n_tgt; ++j) {
      if (rng.uniform() < 0.25) h.emplace(i, j);
    }
  }
  return h;
}

SentencePair make_pair(int n_src, int n_tgt, const AlignSet& sure,
                       const AlignSet& possible_extra = {}) {
  SentencePair p;
  for (int i = 0; i < n_src; ++i) p.source.words.push_back("s" + std::to_string(i));
  for (int j = 0; j < n_tgt; ++j) p.target.words.push_back("t" + std::to_string(j));
  GoldAlignment g;
  g.sure = sure;
  g.possible = sure;
  for (const auto& l : possible_extra) g.possible.insert(l);
  p.gold = g;
  return p;
}

}  // namespace

TEST_CASE("aer hand examples") {
  SUBCASE("perfect prediction") {
    EvalCounts c{2, 2, 2, 2};
    CHECK(aer(c) == 0.0);
  }
  SUBCASE("possible-only link does not hurt") {
    // H={(0,0),(1,1)}, S={(0,0)}, P={(0,0),(1,1)}: 1 - (1+2)/(2+1) = 0
    AlignSet h{{0, 0}, {1, 1}};
    GoldAlignment g;
    g.sure = {{0, 0}};
    g.possible = {{0, 0}, {1, 1}};
    CHECK(aer(count_pair(h, g)) == 0.0);
  }
  SUBCASE("empty hypothesis") {
    AlignSet h;
    GoldAlignment g;
    g.sure = g.possible = {{0, 0}, {1, 1}};
    CHECK(aer(count_pair(h, g)) == 1.0);
  }
  SUBCASE("undefined when H and S are both empty") {
    CHECK_THROWS_AS(aer(EvalCounts{0, 0, 0, 0}), std::exception);
  }
}

TEST_CASE("prf hand examples") {
  SUBCASE("perfect") {
    Prf r = prf(EvalCounts{3, 3, 3, 3});
    CHECK(r.precision == 1.0);
    CHECK(r.recall == 1.0);
    CHECK(r.f1 == 1.0);
  }
  SUBCASE("disjoint") {
    Prf r = prf(EvalCounts{0, 0, 4, 3});
    CHECK(r.precision == 0.0);
    CHECK(r.recall == 0.0);
    CHECK(r.f1 == 0.0);
    CHECK(r.precision_defined);
  }
  SUBCASE("empty hypothesis flags precision") {
    Prf r = prf(EvalCounts{0, 0, 0, 3});
    CHECK(r.precision == 0.0);
    CHECK_FALSE(r.precision_defined);
  }
  SUBCASE("no sure links is an error") {
    CHECK_THROWS_AS(prf(EvalCounts{0, 2, 3, 0}), std::exception);
  }
}

TEST_CASE("aer equals 1 - f1 when S == P") {
  Rng rng(11);
  for (int t = 0; t < 1000; ++t) {
    const int n_src = rng.range(1, 10), n_tgt = rng.range(1, 10);
    GoldAlignment g = random_gold(rng, n_src, n_tgt, /*s_equals_p=*/true);
    AlignSet h = random_hyp(rng, n_src, n_tgt);
    EvalCounts c = count_pair(h, g);
    if (c.h + c.s == 0) continue;
    const double lhs = aer(c);
    const double rhs = 1.0 - prf(c).f1;
    CHECK(std::abs(lhs - rhs) <= 1e-12);
  }
}

TEST_CASE("library matches the brute-force oracle exactly") {
  Rng rng(42);
  for (int corpus_idx = 0; corpus_idx < 100; ++corpus_idx) {
    const int n_pairs = rng.range(1, 50);
    std::vector<AlignSet> hyps;
    std::vector<GoldAlignment> golds;
    for (int k = 0; k < n_pairs; ++k) {
      const int n_src = rng.range(1, 12), n_tgt = rng.range(1, 12);
      golds.push_back(random_gold(rng, n_src, n_tgt, false));
      hyps.push_back(random_hyp(rng, n_src, n_tgt));
    }
    const EvalReport rep = evaluate_corpus(hyps, golds);
    const OracleReport ora = oracle(hyps, golds);
    CHECK(rep.counts.h_cap_s == ora.hs);
    CHECK(rep.counts.h_cap_p == ora.hp);
    CHECK(rep.counts.h == ora.h);
    CHECK(rep.counts.s == ora.s);
    CHECK(rep.aer == ora.aer);
    CHECK(rep.precision == ora.precision);
    CHECK(rep.recall == ora.recall);
    CHECK(rep.f1 == ora.f1);
  }
}

TEST_CASE("aer monotonicity under hypothesis edits") {
  Rng rng(13);
  for (int t = 0; t < 500; ++t) {
    const int n_src = rng.range(2, 10), n_tgt = rng.range(2, 10);
    GoldAlignment g = random_gold(rng, n_src, n_tgt, false);
    AlignSet h = random_hyp(rng, n_src, n_tgt);
    const double base = aer(count_pair(h, g));

    // Adding a missing sure pair never increases AER.
    for (const auto& link : g.sure) {
      if (!h.count(link)) {
        AlignSet h2 = h;
        h2.insert(link);
        CHECK(aer(count_pair(h2, g)) <= base + 1e-15);
        break;
      }
    }
    // Adding a pair outside P never decreases AER.
    AlignSet h3 = h;
    h3.emplace(n_src + 5, n_tgt + 5);
    if (!g.possible.count({n_src + 5, n_tgt + 5})) {
      CHECK(aer(count_pair(h3, g)) >= base - 1e-15);
    }
  }
}

TEST_CASE("corpus aggregation is micro-averaged") {
  Rng rng(7);
  std::vector<AlignSet> hyps;
  std::vector<GoldAlignment> golds;
  for (int k = 0; k < 5; ++k) {
    golds.push_back(random_gold(rng, 6, 6, false));
    hyps.push_back(random_hyp(rng, 6, 6));
  }
  const EvalReport rep = evaluate_corpus(hyps, golds);

  SUBCASE("single pair matches the scalar functions") {
    const EvalReport one = evaluate_corpus({hyps[0]}, {golds[0]});
    const EvalCounts c = count_pair(hyps[0], golds[0]);
    CHECK(one.aer == aer(c));
    CHECK(one.f1 == prf(c).f1);
    CHECK(one.n_pairs == 1);
  }
  SUBCASE("duplicating the corpus changes nothing") {
    auto hyps2 = hyps;
    auto golds2 = golds;
    hyps2.insert(hyps2.end(), hyps.begin(), hyps.end());
    golds2.insert(golds2.end(), golds.begin(), golds.end());
    const EvalReport rep2 = evaluate_corpus(hyps2, golds2);
    CHECK(rep2.aer == rep.aer);
    CHECK(rep2.precision == rep.precision);
    CHECK(rep2.recall == rep.recall);
    CHECK(rep2.f1 == rep.f1);
  }
  SUBCASE("length mismatch is an error") {
    auto short_golds = golds;
    short_golds.pop_back();
    CHECK_THROWS_AS(evaluate_corpus(hyps, short_golds), std::exception);
  }
}

TEST_CASE("stratification categories") {
  SUBCASE("non-contiguous exact match") {
    // Source word 0 aligns to target {2,3,5}: one-to-many and non-contiguous.
    SentencePair p = make_pair(1, 6, AlignSet{{0, 2}, {0, 3}, {0, 5}});

    StratReport exact = stratify({AlignSet{{0, 2}, {0, 3}, {0, 5}}}, {p});
    CHECK(exact.one_to_many.occurrences == 1);  // only the source side word
    CHECK(exact.one_to_many.correct == 1);
    CHECK(exact.one_to_many_noncontiguous.occurrences == 1);
    CHECK(exact.one_to_many_noncontiguous.correct == 1);

    StratReport partial = stratify({AlignSet{{0, 2}, {0, 3}}}, {p});
    CHECK(partial.one_to_many.correct == 0);
    CHECK(partial.one_to_many_noncontiguous.correct == 0);
  }
  SUBCASE("contiguous one-to-many is not counted non-contiguous") {
    SentencePair p = make_pair(1, 3, AlignSet{{0, 1}, {0, 2}});
    StratReport r = stratify({AlignSet{{0, 1}, {0, 2}}}, {p});
    CHECK(r.one_to_many.occurrences == 1);
    CHECK(r.one_to_many_noncontiguous.occurrences == 0);
  }
  SUBCASE("untranslated words on both sides") {
    // Source word 1 and target word 0 have no sure links.
    SentencePair p = make_pair(2, 2, AlignSet{{0, 1}});
    StratReport empty_pred = stratify({AlignSet{}}, {p});
    CHECK(empty_pred.untranslated.occurrences == 2);
    CHECK(empty_pred.untranslated.correct == 2);

    StratReport noisy = stratify({AlignSet{{1, 1}}}, {p});
    CHECK(noisy.untranslated.occurrences == 2);
    CHECK(noisy.untranslated.correct == 1);  // tgt word 0 still unlinked
  }
  SUBCASE("target-side one-to-many is seen") {
    // Target word 0 linked from source {0, 2}: non-contiguous on the target side.
    SentencePair p = make_pair(3, 1, AlignSet{{0, 0}, {2, 0}});
    StratReport r = stratify({AlignSet{{0, 0}, {2, 0}}}, {p});
    CHECK(r.one_to_many.occurrences == 1);
    CHECK(r.one_to_many_noncontiguous.occurrences == 1);
    CHECK(r.one_to_many_noncontiguous.correct == 1);
  }
  SUBCASE("possible-only links do not define categories") {
    SentencePair p = make_pair(1, 3, AlignSet{{0, 0}}, AlignSet{{0, 1}, {0, 2}});
    StratReport r = stratify({AlignSet{{0, 0}}}, {p});
    CHECK(r.one_to_many.occurrences == 0);
  }
  SUBCASE("missing gold is an error") {
    SentencePair p = make_pair(1, 1, AlignSet{{0, 0}});
    p.gold.reset();
    CHECK_THROWS_AS(stratify({AlignSet{}}, {p}), std::exception);
  }
  SUBCASE("non-contiguous never exceeds one-to-many on random data") {
    Rng rng(5);
    for (int t = 0; t < 200; ++t) {
      const int n_src = rng.range(1, 8), n_tgt = rng.range(1, 8);
      GoldAlignment g = random_gold(rng, n_src, n_tgt, true);
      SentencePair p = make_pair(n_src, n_tgt, g.sure);
      StratReport r = stratify({random_hyp(rng, n_src, n_tgt)}, {p});
      CHECK(r.one_to_many_noncontiguous.occurrences <= r.one_to_many.occurrences);
      CHECK(r.untranslated.correct <= r.untranslated.occurrences);
      CHECK(r.one_to_many.correct <= r.one_to_many.occurrences);
    }
  }
}
