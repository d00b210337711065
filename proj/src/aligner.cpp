#include "binalign/aligner.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "binalign/parallel.hpp"

namespace binalign {

const char* aggregation_name(Aggregation a) {
  switch (a) {
    case Aggregation::kMax: return "max";
    case Aggregation::kMean: return "mean";
    case Aggregation::kMin: return "min";
  }
  throw std::logic_error("unknown aggregation");
}

const char* symmetrization_name(Symmetrization s) {
  switch (s) {
    case Symmetrization::kForwardOnly: return "forward";
    case Symmetrization::kReverseOnly: return "reverse";
    case Symmetrization::kProbAverage: return "avg";
    case Symmetrization::kIntersection: return "intersection";
    case Symmetrization::kUnion: return "union";
    case Symmetrization::kBidiAverage: return "bidi-avg";
  }
  throw std::logic_error("unknown symmetrization");
}

Aggregation aggregation_from_name(const std::string& name) {
  for (Aggregation a : {Aggregation::kMax, Aggregation::kMean, Aggregation::kMin}) {
    if (name == aggregation_name(a)) return a;
  }
  throw std::invalid_argument("unknown aggregation '" + name +
                              "' (expected max, mean or min)");
}

Symmetrization symmetrization_from_name(const std::string& name) {
  for (Symmetrization s :
       {Symmetrization::kForwardOnly, Symmetrization::kReverseOnly,
        Symmetrization::kProbAverage, Symmetrization::kIntersection,
        Symmetrization::kUnion, Symmetrization::kBidiAverage}) {
    if (name == symmetrization_name(s)) return s;
  }
  throw std::invalid_argument(
      "unknown symmetrization '" + name +
      "' (expected forward, reverse, avg, intersection, union or bidi-avg)");
}

bool needs_forward(Symmetrization s) {
  return s != Symmetrization::kReverseOnly;
}

bool needs_reverse(Symmetrization s) {
  return s != Symmetrization::kForwardOnly;
}

Vec<double> token_probs(const Vec<float>& logits) {
  constexpr double tiny = 1e-15;
  Vec<double> p(logits.size());
  for (Index k = 0; k < logits.size(); ++k) {
    const double sig = stable_sigmoid(static_cast<double>(logits(k)));
    p(k) = std::min(1.0 - tiny, std::max(tiny, sig));
  }
  return p;
}

Vec<double> word_token_probs(const TokenizedPair& tp, Direction dir,
                             int marked_word, const Parameters<float>& params,
                             const ModelConfig& cfg) {
  EncodedInput in = build_encoded_input(tp, dir, marked_word, cfg);
  return token_probs(forward(in, params, cfg));
}

double aggregate_word(const Vec<double>& probs, const TokenSpan& span,
                      Aggregation agg) {
  if (span.begin < 0 || span.end > probs.size() || span.width() <= 0) {
    throw std::out_of_range("aggregate_word: span [" +
                            std::to_string(span.begin) + ", " +
                            std::to_string(span.end) + ") invalid for " +
                            std::to_string(probs.size()) + " token probabilities");
  }
  auto seg = probs.segment(span.begin, span.width());
  switch (agg) {
    case Aggregation::kMax: return seg.maxCoeff();
    case Aggregation::kMean: return seg.mean();
    case Aggregation::kMin: return seg.minCoeff();
  }
  throw std::logic_error("unknown aggregation");
}

Mat<double> score_matrix(const TokenizedPair& tp, Direction dir,
                         const Parameters<float>& params,
                         const ModelConfig& cfg, Aggregation agg,
                         int n_threads) {
  const bool fwd = dir == Direction::kForwardXtoY;
  const WordTokenMap& marked_map = fwd ? tp.src_map : tp.tgt_map;
  const WordTokenMap& scored_map = fwd ? tp.tgt_map : tp.src_map;
  const int n_marked = marked_map.n_words();
  const int n_scored = scored_map.n_words();

  // Rows are always source words, columns target words.
  Mat<double> out(fwd ? n_marked : n_scored, fwd ? n_scored : n_marked);
  parallel_for(static_cast<std::size_t>(n_marked), n_threads, [&](std::size_t w) {
    const int word = static_cast<int>(w);
    Vec<double> probs = word_token_probs(tp, dir, word, params, cfg);
    for (int s = 0; s < n_scored; ++s) {
      const double score =
          aggregate_word(probs, scored_map.spans[static_cast<std::size_t>(s)], agg);
      if (fwd) {
        out(word, s) = score;
      } else {
        out(s, word) = score;
      }
    }
  });
  return out;
}

AlignSet decode_links(const Mat<double>& scores, double threshold) {
  AlignSet links;
  for (Index i = 0; i < scores.rows(); ++i) {
    for (Index j = 0; j < scores.cols(); ++j) {
      if (scores(i, j) >= threshold) {
        links.emplace(static_cast<int>(i), static_cast<int>(j));
      }
    }
  }
  return links;
}

namespace {

void check_same_shape(const Mat<double>& fwd, const Mat<double>& rev) {
  if (fwd.rows() != rev.rows() || fwd.cols() != rev.cols()) {
    throw std::invalid_argument(
        "symmetrize: directional matrices disagree in shape (" +
        std::to_string(fwd.rows()) + "x" + std::to_string(fwd.cols()) +
        " vs " + std::to_string(rev.rows()) + "x" +
        std::to_string(rev.cols()) + ")");
  }
}

}  // namespace

AlignSet symmetrize(const Mat<double>& fwd, const Mat<double>& rev,
                    Symmetrization sym, double threshold) {
  switch (sym) {
    case Symmetrization::kForwardOnly:
      return decode_links(fwd, threshold);
    case Symmetrization::kReverseOnly:
      return decode_links(rev, threshold);
    case Symmetrization::kProbAverage:
      check_same_shape(fwd, rev);
      return decode_links(((fwd + rev) / 2.0).eval(), threshold);
    case Symmetrization::kIntersection: {
      check_same_shape(fwd, rev);
      return decode_links(fwd.cwiseMin(rev).eval(), threshold);
    }
    case Symmetrization::kUnion: {
      check_same_shape(fwd, rev);
      return decode_links(fwd.cwiseMax(rev).eval(), threshold);
    }
    case Symmetrization::kBidiAverage: {
      check_same_shape(fwd, rev);
      Mat<double> votes(fwd.rows(), fwd.cols());
      for (Index i = 0; i < fwd.rows(); ++i) {
        for (Index j = 0; j < fwd.cols(); ++j) {
          votes(i, j) = ((fwd(i, j) >= threshold ? 1.0 : 0.0) +
                         (rev(i, j) >= threshold ? 1.0 : 0.0)) /
                        2.0;
        }
      }
      return decode_links(votes, threshold);
    }
  }
  throw std::logic_error("unknown symmetrization");
}

double link_score(const Mat<double>& fwd, const Mat<double>& rev,
                  Symmetrization sym, double threshold, int i, int j) {
  switch (sym) {
    case Symmetrization::kForwardOnly: return fwd(i, j);
    case Symmetrization::kReverseOnly: return rev(i, j);
    case Symmetrization::kProbAverage: return (fwd(i, j) + rev(i, j)) / 2.0;
    case Symmetrization::kIntersection: return std::min(fwd(i, j), rev(i, j));
    case Symmetrization::kUnion: return std::max(fwd(i, j), rev(i, j));
    case Symmetrization::kBidiAverage:
      return ((fwd(i, j) >= threshold ? 1.0 : 0.0) +
              (rev(i, j) >= threshold ? 1.0 : 0.0)) /
             2.0;
  }
  throw std::logic_error("unknown symmetrization");
}

std::vector<PairAlignment> align_corpus(const std::vector<SentencePair>& corpus,
                                        const Checkpoint& model,
                                        const AlignOptions& opts) {
  if (!(opts.threshold > 0.0 && opts.threshold < 1.0)) {
    throw std::invalid_argument("alignment threshold must lie inside (0, 1)");
  }
  std::vector<PairAlignment> out(corpus.size());
  parallel_for(corpus.size(), opts.n_threads, [&](std::size_t idx) {
    PairAlignment& res = out[idx];
    try {
      const SentencePair& pair = corpus[idx];
      TokenizedPair tp = tokenize_pair(pair, model.vocab);
      Mat<double> fwd, rev;
      if (needs_forward(opts.sym)) {
        fwd = score_matrix(tp, Direction::kForwardXtoY, model.params,
                           model.config, opts.agg);
      }
      if (needs_reverse(opts.sym)) {
        rev = score_matrix(tp, Direction::kReverseYtoX, model.params,
                           model.config, opts.agg);
      }
      res.links = symmetrize(fwd, rev, opts.sym, opts.threshold);
      for (const AlignPair& link : res.links) {
        res.link_scores[link] = link_score(fwd, rev, opts.sym, opts.threshold,
                                           link.first, link.second);
      }
    } catch (const std::exception& e) {
      res.links.clear();
      res.link_scores.clear();
      res.error = "pair " + std::to_string(idx + 1) + ": " + e.what();
    }
  });
  return out;
}

}  // namespace binalign
