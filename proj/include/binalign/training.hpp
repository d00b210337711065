#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <vector>

#include "binalign/aligner.hpp"
#include "binalign/checkpoint.hpp"
#include "binalign/corpus.hpp"
#include "binalign/encoder.hpp"

namespace binalign {

struct TrainConfig {
  double lr = 2e-3;
  int batch_size = 8;
  int epochs = 5;
  int n_threads = 1;
  std::uint64_t seed = 0;
  // Decoding settings used for validation AER between epochs.
  Symmetrization val_sym = Symmetrization::kProbAverage;
  Aggregation val_agg = Aggregation::kMax;
  double val_threshold = 0.5;

  void validate() const;
};

// One supervised item: a (direction, marked word) query against one pair,
// with a 0/1 label per scored-side token derived from the sure links.
struct TrainingExample {
  EncodedInput input;
  Vec<float> labels;
};

// Per-token labels for marking `marked_word` on `dir`'s source side: 1 when
// the token's word is sure-linked to the marked word.
Vec<float> derive_labels(const SentencePair& pair, const TokenizedPair& tp,
                         Direction dir, int marked_word);

struct ExampleSet {
  std::vector<TrainingExample> examples;
  int used_pairs = 0;
  int skipped_pairs = 0;  // pairs whose encoding exceeds max_len
};

// Expands a gold-annotated corpus into one example per (pair, direction,
// marked word). Pairs too long for the model are skipped and counted.
ExampleSet build_examples(const std::vector<SentencePair>& corpus,
                          const SubwordVocabulary& vocab,
                          const ModelConfig& cfg);

// Deterministic k-sample subset: shuffle [0, n) with the seed, keep the
// first k, return them sorted. k >= n selects everything.
std::vector<int> few_shot_subset(int n, int k, std::uint64_t seed);

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  std::optional<double> val_aer;
};

struct TrainResult {
  Checkpoint final_model;
  Checkpoint best_model;  // lowest validation AER; final model if no val set
  std::vector<EpochLog> log;
  int skipped_pairs = 0;
};

// Minibatch Adam over the expanded example set. Shuffling, batching and
// reduction order are fixed by cfg.seed, so reruns are bit-identical for any
// thread count. If val_corpus is given, AER on it is computed after every
// epoch and the best epoch's weights are returned alongside the final ones.
// Emits one JSON object per epoch to log_stream when provided.
TrainResult train(const std::vector<SentencePair>& train_corpus,
                  const std::optional<std::vector<SentencePair>>& val_corpus,
                  const Checkpoint& init, const TrainConfig& tc,
                  std::ostream* log_stream = nullptr);

}  // namespace binalign
