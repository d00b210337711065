#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "binalign/aligner.hpp"
#include "binalign/checkpoint.hpp"
#include "binalign/corpus.hpp"
#include "binalign/metrics.hpp"
#include "binalign/synth.hpp"
#include "binalign/training.hpp"
#include "binalign/util.hpp"

namespace {

using namespace binalign;

std::string format_links(const AlignSet& links) {
  GoldAlignment g;
  g.sure = links;
  g.possible = links;
  return format_pharaoh(g);
}

std::string format_scores(const PairAlignment& pa) {
  std::string out;
  char buf[64];
  for (const auto& [link, score] : pa.link_scores) {
    if (!out.empty()) out += ' ';
    std::snprintf(buf, sizeof(buf), "%d-%d:%.4f", link.first, link.second, score);
    out += buf;
  }
  return out;
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(out_path, text);
  }
}

std::vector<AlignSet> read_hypotheses(const std::string& path) {
  std::vector<AlignSet> hyps;
  for (const std::string& line : split_lines(read_file(path))) {
    hyps.push_back(parse_pharaoh(line).possible);
  }
  return hyps;
}

std::vector<GoldAlignment> read_gold(const std::string& path) {
  std::vector<GoldAlignment> gold;
  for (const std::string& line : split_lines(read_file(path))) {
    gold.push_back(parse_pharaoh(line));
  }
  return gold;
}

struct SynthArgs {
  std::string spec_path, out_dir;
  int jobs = 1;
};

int run_synth(const SynthArgs& a) {
  const SynthSpec spec = synth_spec_from_json(read_file(a.spec_path));
  const SynthCorpus corpus = generate(spec, a.jobs);

  std::filesystem::create_directories(a.out_dir);
  std::string src, tgt, aln;
  for (const SentencePair& pair : corpus.pairs) {
    src += pair.source.raw + "\n";
    tgt += pair.target.raw + "\n";
    aln += format_pharaoh(*pair.gold) + "\n";
  }
  const std::filesystem::path dir(a.out_dir);
  write_file_atomic((dir / "source.txt").string(), src);
  write_file_atomic((dir / "target.txt").string(), tgt);
  write_file_atomic((dir / "gold.align").string(), aln);
  write_file_atomic((dir / "manifest.json").string(),
                    manifest_json(spec, corpus.counts));
  std::cerr << "wrote " << corpus.pairs.size() << " pairs to " << a.out_dir
            << "\n";
  return 0;
}

struct VocabArgs {
  std::string src, tgt, out;
  int size = 1000;
  std::uint64_t seed = 0;
};

int run_vocab(const VocabArgs& a) {
  const auto corpus = parse_parallel_corpus(a.src, a.tgt);
  const SubwordVocabulary vocab = train_subword_vocab(corpus, a.size, a.seed);
  write_file_atomic(a.out, vocab.serialize());
  std::cerr << "vocabulary of " << vocab.size() << " entries written to "
            << a.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string src, tgt, aln;
  std::string val_src, val_tgt, val_aln;
  std::string vocab_path, init_path, out_path, best_out, log_path, config_path;
  TrainConfig tc;
  ModelConfig mc;
  int few_shot = 0;
  // Which flags were given explicitly (these beat the config file).
  CLI::Option *lr_opt = nullptr, *batch_opt = nullptr, *epochs_opt = nullptr,
              *seed_opt = nullptr, *jobs_opt = nullptr, *few_opt = nullptr,
              *dm_opt = nullptr, *nh_opt = nullptr, *nl_opt = nullptr,
              *ff_opt = nullptr, *ml_opt = nullptr, *do_opt = nullptr;
};

void apply_train_config_file(TrainArgs& a) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(a.config_path));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("config " + a.config_path + ": bad JSON: " +
                             e.what());
  }
  if (!a.lr_opt->count()) a.tc.lr = j.value("lr", a.tc.lr);
  if (!a.batch_opt->count()) a.tc.batch_size = j.value("batch_size", a.tc.batch_size);
  if (!a.epochs_opt->count()) a.tc.epochs = j.value("epochs", a.tc.epochs);
  if (!a.seed_opt->count()) a.tc.seed = j.value("seed", a.tc.seed);
  if (!a.jobs_opt->count()) a.tc.n_threads = j.value("jobs", a.tc.n_threads);
  if (!a.few_opt->count()) a.few_shot = j.value("few_shot", a.few_shot);
  if (j.contains("model")) {
    const auto& m = j["model"];
    if (!a.dm_opt->count()) a.mc.d_model = m.value("d_model", a.mc.d_model);
    if (!a.nh_opt->count()) a.mc.n_heads = m.value("n_heads", a.mc.n_heads);
    if (!a.nl_opt->count()) a.mc.n_layers = m.value("n_layers", a.mc.n_layers);
    if (!a.ff_opt->count()) a.mc.ffn_dim = m.value("ffn_dim", a.mc.ffn_dim);
    if (!a.ml_opt->count()) a.mc.max_len = m.value("max_len", a.mc.max_len);
    if (!a.do_opt->count())
      a.mc.dropout_rate = m.value("dropout_rate", a.mc.dropout_rate);
  }
}

int run_train(TrainArgs& a) {
  if (!a.config_path.empty()) apply_train_config_file(a);

  auto corpus = parse_parallel_corpus(a.src, a.tgt, a.aln);
  if (a.few_shot > 0) {
    const auto keep =
        few_shot_subset(static_cast<int>(corpus.size()), a.few_shot, a.tc.seed);
    std::vector<SentencePair> subset;
    subset.reserve(keep.size());
    for (int idx : keep) subset.push_back(std::move(corpus[static_cast<std::size_t>(idx)]));
    corpus = std::move(subset);
    std::cerr << "few-shot: training on " << corpus.size() << " pairs\n";
  }

  std::optional<std::vector<SentencePair>> val;
  const int val_given = static_cast<int>(!a.val_src.empty()) +
                        static_cast<int>(!a.val_tgt.empty()) +
                        static_cast<int>(!a.val_aln.empty());
  if (val_given == 3) {
    val = parse_parallel_corpus(a.val_src, a.val_tgt, a.val_aln);
  } else if (val_given != 0) {
    throw std::runtime_error(
        "validation needs --val-source, --val-target and --val-align together");
  }

  Checkpoint init;
  if (!a.init_path.empty()) {
    init = load_checkpoint(a.init_path);
  } else {
    if (a.vocab_path.empty()) {
      throw std::runtime_error("either --vocab or --init is required");
    }
    init.vocab = SubwordVocabulary::deserialize(read_file(a.vocab_path));
    init.config = a.mc;
    init.config.vocab_size = init.vocab.size();
    init.init_seed = a.tc.seed;
    init.params = init_params<float>(init.config, derive_seed(a.tc.seed, 7));
  }

  std::ofstream log_file;
  std::ostream* log_stream = &std::cerr;
  if (!a.log_path.empty()) {
    log_file.open(a.log_path, std::ios::binary | std::ios::trunc);
    if (!log_file) throw std::runtime_error("cannot open log file " + a.log_path);
    log_stream = &log_file;
  }

  const TrainResult result = train(corpus, val, init, a.tc, log_stream);
  if (result.skipped_pairs > 0) {
    std::cerr << "warning: skipped " << result.skipped_pairs
              << " pairs longer than max_len\n";
  }
  save_checkpoint(result.final_model, a.out_path);
  if (!a.best_out.empty()) save_checkpoint(result.best_model, a.best_out);
  std::cerr << "trained " << a.tc.epochs << " epochs, checkpoint written to "
            << a.out_path << "\n";
  return 0;
}

struct AlignArgs {
  std::string src, tgt, ckpt, out, scores_out;
  std::string sym = "avg";
  std::string agg = "max";
  double threshold = 0.5;
  int jobs = 1;
};

int run_align(const AlignArgs& a) {
  const Checkpoint model = load_checkpoint(a.ckpt);
  const auto corpus = parse_parallel_corpus(a.src, a.tgt);
  AlignOptions opts;
  opts.sym = symmetrization_from_name(a.sym);
  opts.agg = aggregation_from_name(a.agg);
  opts.threshold = a.threshold;
  opts.n_threads = a.jobs;
  const auto results = align_corpus(corpus, model, opts);

  std::string out, scores;
  int failures = 0;
  for (const PairAlignment& pa : results) {
    out += format_links(pa.links) + "\n";
    if (!a.scores_out.empty()) scores += format_scores(pa) + "\n";
    if (pa.error) {
      std::cerr << "error: " << *pa.error << "\n";
      ++failures;
    }
  }
  emit(out, a.out);
  if (!a.scores_out.empty()) write_file_atomic(a.scores_out, scores);
  if (failures > 0) {
    std::cerr << "error: " << failures << " of " << results.size()
              << " pairs failed\n";
    return 1;
  }
  return 0;
}

struct EvalArgs {
  std::string hyp, gold, out;
};

int run_eval(const EvalArgs& a) {
  const auto hyps = read_hypotheses(a.hyp);
  const auto gold = read_gold(a.gold);
  if (hyps.size() != gold.size()) {
    throw std::runtime_error("hypothesis file has " +
                             std::to_string(hyps.size()) + " lines but gold has " +
                             std::to_string(gold.size()));
  }
  const EvalReport rep = evaluate_corpus(hyps, gold);
  nlohmann::json j{{"aer", rep.aer},
                   {"precision", rep.precision},
                   {"recall", rep.recall},
                   {"f1", rep.f1},
                   {"counts",
                    {{"h_cap_s", rep.counts.h_cap_s},
                     {"h_cap_p", rep.counts.h_cap_p},
                     {"h", rep.counts.h},
                     {"s", rep.counts.s}}},
                   {"n_pairs", rep.n_pairs}};
  if (!rep.precision_defined) j["precision_defined"] = false;
  emit(j.dump(2) + "\n", a.out);
  return 0;
}

struct AnalyzeArgs {
  std::string hyp, gold, src, tgt, out;
};

int run_analyze(const AnalyzeArgs& a) {
  const auto hyps = read_hypotheses(a.hyp);
  const auto pairs = parse_parallel_corpus(a.src, a.tgt, a.gold);
  if (hyps.size() != pairs.size()) {
    throw std::runtime_error("hypothesis file has " +
                             std::to_string(hyps.size()) + " lines but corpus has " +
                             std::to_string(pairs.size()));
  }
  const StratReport rep = stratify(hyps, pairs);
  auto cat = [](const StratCategory& c) {
    return nlohmann::json{{"occurrences", c.occurrences},
                          {"correct", c.correct},
                          {"percent_correct", c.percent()}};
  };
  nlohmann::json j{{"untranslated", cat(rep.untranslated)},
                   {"one_to_many", cat(rep.one_to_many)},
                   {"one_to_many_noncontiguous",
                    cat(rep.one_to_many_noncontiguous)}};
  emit(j.dump(2) + "\n", a.out);

  auto row = [](const char* name, const StratCategory& c) {
    std::fprintf(stderr, "%-28s %12lld %12lld %10.1f\n", name, c.occurrences,
                 c.correct, c.percent());
  };
  std::fprintf(stderr, "%-28s %12s %12s %10s\n", "category", "occurrences",
               "correct", "% correct");
  row("untranslated", rep.untranslated);
  row("one-to-many", rep.one_to_many);
  row("one-to-many non-contiguous", rep.one_to_many_noncontiguous);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "binalign: word alignment as per-token binary classification over "
      "span-marked sentence pairs"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth_cmd = app.add_subcommand(
      "synth", "Generate a synthetic parallel corpus with exact gold links");
  synth_cmd->add_option("--spec", synth_args.spec_path, "Corpus spec (JSON)")
      ->required();
  synth_cmd->add_option("--out-dir", synth_args.out_dir,
                        "Directory for source.txt/target.txt/gold.align/manifest.json")
      ->required();
  synth_cmd->add_option("--jobs", synth_args.jobs, "Worker threads")
      ->check(CLI::PositiveNumber);

  VocabArgs vocab_args;
  auto* vocab_cmd =
      app.add_subcommand("vocab", "Train a subword vocabulary on a parallel corpus");
  vocab_cmd->add_option("--source", vocab_args.src, "Source text file")->required();
  vocab_cmd->add_option("--target", vocab_args.tgt, "Target text file")->required();
  vocab_cmd->add_option("--size", vocab_args.size, "Vocabulary size (default 1000)")
      ->check(CLI::PositiveNumber);
  vocab_cmd->add_option("--seed", vocab_args.seed, "Seed (default 0)");
  vocab_cmd->add_option("--out", vocab_args.out, "Output vocabulary file")->required();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train an alignment model");
  train_cmd->add_option("--source", train_args.src, "Training source text")->required();
  train_cmd->add_option("--target", train_args.tgt, "Training target text")->required();
  train_cmd->add_option("--align", train_args.aln, "Training gold alignments")->required();
  train_cmd->add_option("--val-source", train_args.val_src, "Validation source text");
  train_cmd->add_option("--val-target", train_args.val_tgt, "Validation target text");
  train_cmd->add_option("--val-align", train_args.val_aln, "Validation gold alignments");
  train_cmd->add_option("--vocab", train_args.vocab_path,
                        "Subword vocabulary (ignored with --init)");
  train_cmd->add_option("--init", train_args.init_path,
                        "Starting checkpoint (pre-trained weights)");
  train_cmd->add_option("--out", train_args.out_path, "Output checkpoint")->required();
  train_cmd->add_option("--best-out", train_args.best_out,
                        "Also write the best-validation-AER checkpoint here");
  train_cmd->add_option("--log", train_args.log_path,
                        "Training log file, one JSON object per epoch (default stderr)");
  train_cmd->add_option("--config", train_args.config_path,
                        "JSON config; explicit flags override file values");
  train_args.lr_opt =
      train_cmd->add_option("--lr", train_args.tc.lr, "Learning rate (default 0.002)");
  train_args.batch_opt = train_cmd->add_option("--batch-size", train_args.tc.batch_size,
                                               "Minibatch size (default 8)");
  train_args.epochs_opt =
      train_cmd->add_option("--epochs", train_args.tc.epochs, "Epochs (default 5)");
  train_args.seed_opt = train_cmd->add_option("--seed", train_args.tc.seed,
                                              "Seed for init/shuffling (default 0)");
  train_args.jobs_opt = train_cmd->add_option("--jobs", train_args.tc.n_threads,
                                              "Worker threads (default 1)");
  train_args.few_opt = train_cmd->add_option(
      "--few-shot", train_args.few_shot,
      "Train on this many sampled pairs (0 = all; 32 matches the few-shot regime)");
  train_args.dm_opt = train_cmd->add_option("--d-model", train_args.mc.d_model,
                                            "Model width (default 64)");
  train_args.nh_opt = train_cmd->add_option("--n-heads", train_args.mc.n_heads,
                                            "Attention heads (default 4)");
  train_args.nl_opt = train_cmd->add_option("--n-layers", train_args.mc.n_layers,
                                            "Encoder layers (default 2)");
  train_args.ff_opt = train_cmd->add_option("--ffn-dim", train_args.mc.ffn_dim,
                                            "Feed-forward width (default 128)");
  train_args.ml_opt = train_cmd->add_option("--max-len", train_args.mc.max_len,
                                            "Maximum encoded length (default 256)");
  train_args.do_opt = train_cmd->add_option("--dropout", train_args.mc.dropout_rate,
                                            "Dropout rate (default 0)");

  AlignArgs align_args;
  auto* align_cmd = app.add_subcommand("align", "Align a parallel corpus");
  align_cmd->add_option("--source", align_args.src, "Source text file")->required();
  align_cmd->add_option("--target", align_args.tgt, "Target text file")->required();
  align_cmd->add_option("--checkpoint", align_args.ckpt, "Model checkpoint")->required();
  align_cmd->add_option("--out", align_args.out, "Output alignment file (default stdout)");
  align_cmd
      ->add_option("--sym", align_args.sym,
                   "Symmetrization: forward, reverse, avg, intersection, union, "
                   "bidi-avg (default avg)")
      ->check(CLI::IsMember({"forward", "reverse", "avg", "intersection", "union",
                             "bidi-avg"}));
  align_cmd
      ->add_option("--agg", align_args.agg,
                   "Token-to-word aggregation: max, mean, min (default max)")
      ->check(CLI::IsMember({"max", "mean", "min"}));
  align_cmd
      ->add_option("--threshold", align_args.threshold,
                   "Decision threshold (default 0.5)")
      ->check(CLI::Range(0.0, 1.0));
  align_cmd->add_option("--jobs", align_args.jobs, "Worker threads")
      ->check(CLI::PositiveNumber);
  align_cmd->add_option("--scores", align_args.scores_out,
                        "Also write per-link scores as i-j:val lines");

  EvalArgs eval_args;
  auto* eval_cmd =
      app.add_subcommand("eval", "Score a hypothesis against gold alignments");
  eval_cmd->add_option("--hyp", eval_args.hyp, "Hypothesis alignment file")->required();
  eval_cmd->add_option("--gold", eval_args.gold, "Gold alignment file")->required();
  eval_cmd->add_option("--out", eval_args.out, "Output JSON (default stdout)");

  AnalyzeArgs analyze_args;
  auto* analyze_cmd = app.add_subcommand(
      "analyze", "Word-level error breakdown (untranslated / one-to-many / "
                 "non-contiguous)");
  analyze_cmd->add_option("--hyp", analyze_args.hyp, "Hypothesis alignment file")
      ->required();
  analyze_cmd->add_option("--gold", analyze_args.gold, "Gold alignment file")
      ->required();
  analyze_cmd->add_option("--source", analyze_args.src, "Source text file")->required();
  analyze_cmd->add_option("--target", analyze_args.tgt, "Target text file")->required();
  analyze_cmd->add_option("--out", analyze_args.out, "Output JSON (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand(synth_cmd)) return run_synth(synth_args);
    if (app.got_subcommand(vocab_cmd)) return run_vocab(vocab_args);
    if (app.got_subcommand(train_cmd)) return run_train(train_args);
    if (app.got_subcommand(align_cmd)) return run_align(align_args);
    if (app.got_subcommand(eval_cmd)) return run_eval(eval_args);
    if (app.got_subcommand(analyze_cmd)) return run_analyze(analyze_args);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
