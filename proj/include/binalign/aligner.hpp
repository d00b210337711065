#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "binalign/checkpoint.hpp"
#include "binalign/corpus.hpp"
#include "binalign/encoder.hpp"

namespace binalign {

// How a marked word's per-token probabilities on the other side collapse to
// one probability per word.
enum class Aggregation { kMax, kMean, kMin };

// How the two directional decisions combine into the final alignment.
enum class Symmetrization {
  kForwardOnly,
  kReverseOnly,
  kProbAverage,
  kIntersection,
  kUnion,
  kBidiAverage,
};

const char* aggregation_name(Aggregation a);
const char* symmetrization_name(Symmetrization s);
Aggregation aggregation_from_name(const std::string& name);
Symmetrization symmetrization_from_name(const std::string& name);

// Needs the reverse score matrix as well as the forward one?
bool needs_forward(Symmetrization s);
bool needs_reverse(Symmetrization s);

// Logits -> probabilities, computed in double and clamped strictly inside
// (0, 1) so downstream log/odds math stays finite.
Vec<double> token_probs(const Vec<float>& logits);

// Per-token alignment probabilities for one marked word: sigmoid over the
// scored side's token logits.
Vec<double> word_token_probs(const TokenizedPair& tp, Direction dir,
                             int marked_word, const Parameters<float>& params,
                             const ModelConfig& cfg);

double aggregate_word(const Vec<double>& probs, const TokenSpan& span,
                      Aggregation agg);

// Directional word-level score matrix, always indexed (source word, target
// word). For the reverse direction the model marks target words and scores
// source tokens; the result is stored transposed so the indexing convention
// holds for both directions.
Mat<double> score_matrix(const TokenizedPair& tp, Direction dir,
                         const Parameters<float>& params,
                         const ModelConfig& cfg, Aggregation agg,
                         int n_threads = 1);

// Links whose score clears the threshold (ties align).
AlignSet decode_links(const Mat<double>& scores, double threshold);

// Combines the directional matrices. Single-direction kinds ignore the other
// matrix entirely; two-direction kinds require matching shapes.
AlignSet symmetrize(const Mat<double>& fwd, const Mat<double>& rev,
                    Symmetrization sym, double threshold);

// The per-link score that was compared against the threshold: the matrix
// entry for single-direction kinds, the average for ProbAverage, min/max for
// Intersection/Union, and the mean of the two binarized decisions for
// BidiAverage. For every kind, link present == score >= threshold.
double link_score(const Mat<double>& fwd, const Mat<double>& rev,
                  Symmetrization sym, double threshold, int i, int j);

struct AlignOptions {
  Symmetrization sym = Symmetrization::kProbAverage;
  Aggregation agg = Aggregation::kMax;
  double threshold = 0.5;
  int n_threads = 1;
};

struct PairAlignment {
  AlignSet links;
  std::map<AlignPair, double> link_scores;
  // Set when this pair could not be aligned (e.g. too long for the model);
  // links are then empty and processing of other pairs continues.
  std::optional<std::string> error;
};

// Aligns every pair, in input order. Unneeded directions are skipped for
// single-direction kinds. Per-pair failures are recorded on the result, not
// thrown, so one bad pair cannot abort a corpus run.
std::vector<PairAlignment> align_corpus(const std::vector<SentencePair>& corpus,
                                        const Checkpoint& model,
                                        const AlignOptions& opts);

}  // namespace binalign
