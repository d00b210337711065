#pragma once

#include <cstdint>
#include <vector>

#include "binalign/corpus.hpp"

namespace binalign {

// Raw overlap counts between a hypothesis H and gold (S, P).
struct EvalCounts {
  long long h_cap_s = 0;
  long long h_cap_p = 0;
  long long h = 0;
  long long s = 0;

  EvalCounts& operator+=(const EvalCounts& o) {
    h_cap_s += o.h_cap_s;
    h_cap_p += o.h_cap_p;
    h += o.h;
    s += o.s;
    return *this;
  }
  bool operator==(const EvalCounts&) const = default;
};

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_defined = true;  // false when |H| == 0
};

struct EvalReport {
  double aer = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool precision_defined = true;
  EvalCounts counts;
  int n_pairs = 0;
};

// Per-category tallies for the error breakdown.
struct StratCategory {
  long long occurrences = 0;
  long long correct = 0;
  double percent() const {
    return occurrences == 0 ? 0.0
                            : 100.0 * static_cast<double>(correct) /
                                  static_cast<double>(occurrences);
  }
};

struct StratReport {
  StratCategory untranslated;
  StratCategory one_to_many;
  StratCategory one_to_many_noncontiguous;
};

EvalCounts count_pair(const AlignSet& hyp, const GoldAlignment& gold);

// AER = 1 - (|H∩S| + |H∩P|) / (|H| + |S|). Undefined (throws) when both
// H and S are empty.
double aer(const EvalCounts& c);

// recall = |H∩S|/|S|, precision = |H∩P|/|H| (0 with a flag when |H| == 0),
// F1 = 2PR/(P+R) or 0 when P+R == 0. Throws when |S| == 0.
Prf prf(const EvalCounts& c);

// Micro-aggregation: counts are summed over pairs, formulas applied once.
EvalReport evaluate_corpus(const std::vector<AlignSet>& hyps,
                           const std::vector<GoldAlignment>& golds);

// Word-level error breakdown over both sides of each pair. Categories are
// defined by sure links only:
//   untranslated:       words with no sure link; correct iff the predicted
//                       link set is empty
//   one-to-many:        words with >= 2 sure links; correct iff predicted
//                       equals the gold set exactly
//   ...non-contiguous:  the subset of one-to-many whose gold partner
//                       indices do not form a contiguous run
StratReport stratify(const std::vector<AlignSet>& hyps,
                     const std::vector<SentencePair>& pairs);

}  // namespace binalign
