#include "binalign/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "binalign/metrics.hpp"
#include "binalign/rng.hpp"

namespace binalign {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw std::invalid_argument("train config: lr must be finite and >= 0");
  }
  if (batch_size <= 0) {
    throw std::invalid_argument("train config: batch_size must be positive");
  }
  if (epochs < 0) {
    throw std::invalid_argument("train config: epochs must be >= 0");
  }
  if (val_threshold < 0.0 || val_threshold > 1.0) {
    throw std::invalid_argument("train config: val_threshold must lie in [0, 1]");
  }
}

Vec<float> derive_labels(const SentencePair& pair, const TokenizedPair& tp,
                         Direction dir, int marked_word) {
  if (!pair.gold) {
    throw std::invalid_argument("derive_labels: sentence pair has no gold alignment");
  }
  const bool fwd = dir == Direction::kForwardXtoY;
  const SubwordTokenization& scored = fwd ? tp.tgt_tok : tp.src_tok;
  const AlignSet& sure = pair.gold->sure;

  Vec<float> labels(scored.size());
  for (int t = 0; t < scored.size(); ++t) {
    const int word = scored.word_index[static_cast<std::size_t>(t)];
    const AlignPair link = fwd ? AlignPair{marked_word, word}
                               : AlignPair{word, marked_word};
    labels(t) = sure.count(link) ? 1.0f : 0.0f;
  }
  return labels;
}

ExampleSet build_examples(const std::vector<SentencePair>& corpus,
                          const SubwordVocabulary& vocab,
                          const ModelConfig& cfg) {
  ExampleSet set;
  for (std::size_t idx = 0; idx < corpus.size(); ++idx) {
    const SentencePair& pair = corpus[idx];
    if (!pair.gold) {
      throw std::invalid_argument("training pair " + std::to_string(idx + 1) +
                                  " has no gold alignment");
    }
    TokenizedPair tp = tokenize_pair(pair, vocab);
    // [CLS] + marks + 2x[SEP] add five tokens whichever word is marked.
    const int encoded_len = tp.src_tok.size() + tp.tgt_tok.size() + 5;
    if (encoded_len > cfg.max_len) {
      ++set.skipped_pairs;
      continue;
    }
    ++set.used_pairs;
    for (int i = 0; i < tp.src_map.n_words(); ++i) {
      TrainingExample ex;
      ex.input = build_encoded_input(tp, Direction::kForwardXtoY, i, cfg);
      ex.labels = derive_labels(pair, tp, Direction::kForwardXtoY, i);
      set.examples.push_back(std::move(ex));
    }
    for (int j = 0; j < tp.tgt_map.n_words(); ++j) {
      TrainingExample ex;
      ex.input = build_encoded_input(tp, Direction::kReverseYtoX, j, cfg);
      ex.labels = derive_labels(pair, tp, Direction::kReverseYtoX, j);
      set.examples.push_back(std::move(ex));
    }
  }
  return set;
}

std::vector<int> few_shot_subset(int n, int k, std::uint64_t seed) {
  if (n < 0 || k < 0) {
    throw std::invalid_argument("few_shot_subset: n and k must be >= 0");
  }
  std::vector<int> indices(static_cast<std::size_t>(n));
  std::iota(indices.begin(), indices.end(), 0);
  Rng rng(seed);
  rng.shuffle(indices);
  if (k < n) indices.resize(static_cast<std::size_t>(k));
  std::sort(indices.begin(), indices.end());
  return indices;
}

namespace {

double validation_aer(const std::vector<SentencePair>& val,
                      const Checkpoint& model, const TrainConfig& tc) {
  AlignOptions opts;
  opts.sym = tc.val_sym;
  opts.agg = tc.val_agg;
  opts.threshold = tc.val_threshold;
  opts.n_threads = tc.n_threads;
  std::vector<PairAlignment> hyps = align_corpus(val, model, opts);
  std::vector<AlignSet> links(hyps.size());
  for (std::size_t i = 0; i < hyps.size(); ++i) links[i] = hyps[i].links;
  std::vector<GoldAlignment> gold(val.size());
  for (std::size_t i = 0; i < val.size(); ++i) {
    if (!val[i].gold) {
      throw std::invalid_argument("validation pair " + std::to_string(i + 1) +
                                  " has no gold alignment");
    }
    gold[i] = *val[i].gold;
  }
  return evaluate_corpus(links, gold).aer;
}

}  // namespace

TrainResult train(const std::vector<SentencePair>& train_corpus,
                  const std::optional<std::vector<SentencePair>>& val_corpus,
                  const Checkpoint& init, const TrainConfig& tc,
                  std::ostream* log_stream) {
  tc.validate();
  init.config.validate();

  ExampleSet set = build_examples(train_corpus, init.vocab, init.config);
  if (set.examples.empty()) {
    throw std::runtime_error(
        "no usable training examples (" + std::to_string(set.skipped_pairs) +
        " pairs skipped as too long)");
  }

  TrainResult result;
  result.skipped_pairs = set.skipped_pairs;
  result.final_model = init;

  AdamState<float> adam = AdamState<float>::zeros(init.config);
  Rng shuffle_rng(derive_seed(tc.seed, 1));
  Rng dropout_rng(derive_seed(tc.seed, 2));

  const std::size_t n_ex = set.examples.size();
  std::vector<std::size_t> order(n_ex);
  std::iota(order.begin(), order.end(), std::size_t{0});

  double best_aer = std::numeric_limits<double>::infinity();
  bool have_best = false;

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double loss_sum = 0.0;
    long long token_sum = 0;
    for (std::size_t start = 0; start < n_ex;
         start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t stop =
          std::min(n_ex, start + static_cast<std::size_t>(tc.batch_size));
      std::vector<const EncodedInput*> inputs;
      std::vector<const Vec<float>*> labels;
      long long batch_tokens = 0;
      inputs.reserve(stop - start);
      labels.reserve(stop - start);
      for (std::size_t k = start; k < stop; ++k) {
        const TrainingExample& ex = set.examples[order[k]];
        inputs.push_back(&ex.input);
        labels.push_back(&ex.labels);
        batch_tokens += ex.labels.size();
      }
      LossGrad<float> lg =
          loss_and_grad(inputs, labels, result.final_model.params, init.config,
                        tc.n_threads,
                        init.config.dropout_rate > 0.0 ? &dropout_rng : nullptr);
      if (!std::isfinite(lg.loss)) {
        throw std::runtime_error("training diverged: non-finite loss in epoch " +
                                 std::to_string(epoch) + ", batch starting at " +
                                 std::to_string(start));
      }
      adam_step(result.final_model.params, lg.grads, adam,
                static_cast<float>(tc.lr));
      loss_sum += static_cast<double>(lg.loss) * static_cast<double>(batch_tokens);
      token_sum += batch_tokens;
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.mean_loss = loss_sum / static_cast<double>(token_sum);
    if (val_corpus) {
      entry.val_aer = validation_aer(*val_corpus, result.final_model, tc);
      if (*entry.val_aer < best_aer) {
        best_aer = *entry.val_aer;
        result.best_model = result.final_model;
        result.best_model.epochs_seen = init.epochs_seen + epoch;
        have_best = true;
      }
    }
    result.log.push_back(entry);
    if (log_stream) {
      nlohmann::json line{{"epoch", entry.epoch}, {"mean_loss", entry.mean_loss}};
      if (entry.val_aer) line["val_aer"] = *entry.val_aer;
      (*log_stream) << line.dump() << "\n" << std::flush;
    }
  }

  result.final_model.epochs_seen = init.epochs_seen + tc.epochs;
  if (!have_best) result.best_model = result.final_model;
  return result;
}

}  // namespace binalign
