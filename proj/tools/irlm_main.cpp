// Command-line front end: build-vocab, train, eval, complete, analyze.
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "irlm/irlm.hpp"

namespace {

using namespace irlm;

struct SharedFlags {
  std::string vocab_path;
  std::string corpus_path;
  std::string model_path;
  std::string config_path;
  std::optional<int64_t> seed;
  bool quiet = false;
};

LoadedModel load_model_checked(const std::string& model_path, const std::string& vocab_path,
                               Vocabulary* vocab_out) {
  LoadedModel loaded = model_from_checkpoint(Checkpoint::load(model_path));
  Vocabulary vocab = Vocabulary::load_file(vocab_path, loaded.mode);
  const std::string actual = vocab.content_hash_hex();
  if (actual != loaded.vocab_hash)
    throw DataError("vocabulary hash mismatch: checkpoint has " + loaded.vocab_hash +
                    ", supplied vocabulary has " + actual);
  if (vocab.size() != loaded.params.vocab_size())
    throw DataError("vocabulary size does not match the checkpoint");
  *vocab_out = std::move(vocab);
  return loaded;
}

DropoutInference inference_from_header(const LoadedModel& loaded) {
  auto it = loaded.header.find("cfg.dropout_prob");
  if (it != loaded.header.end()) {
    double p = std::stod(it->second);
    if (p > 0.0) return DropoutInference::mean_mask(1.0 - p);
  }
  return DropoutInference::none();
}

int cmd_build_vocab(const SharedFlags& shared, const std::string& mode_str,
                    int64_t min_count) {
  const std::string text = read_text_file(shared.corpus_path);
  Vocabulary vocab = build_vocab(text, vocab_mode_from_string(mode_str),
                                 static_cast<uint64_t>(min_count));
  if (shared.vocab_path.empty()) {
    vocab.save(std::cout);
  } else {
    vocab.save(shared.vocab_path);
    if (!shared.quiet)
      std::cerr << "wrote " << vocab.size() << " entries to " << shared.vocab_path << "\n";
  }
  return 0;
}

int cmd_train(const SharedFlags& shared, const std::string& valid_path,
              const std::string& log_path, const std::vector<std::string>& overrides) {
  TrainConfig cfg;
  if (!shared.config_path.empty()) cfg = parse_config_file(shared.config_path, cfg);
  for (const auto& o : overrides) apply_override(cfg, o);
  if (shared.seed) cfg.seed = static_cast<uint64_t>(*shared.seed);
  cfg.validate();

  Vocabulary vocab = Vocabulary::load_file(shared.vocab_path, cfg.mode);
  const std::string text = read_text_file(shared.corpus_path);
  EncodedCorpus full = encode(text, vocab);

  EncodedCorpus train, valid;
  if (!valid_path.empty()) {
    train = std::move(full);
    valid = encode(read_text_file(valid_path), vocab);
  } else {
    // carve the validation stream off the tail of the training text
    const double vf = cfg.valid_fraction;
    auto splits = split_corpus(full, SplitFractions{1.0 - 2 * vf, vf, vf});
    train = std::move(splits[0]);
    valid = std::move(splits[1]);
    // the held-back test share stays untouched for later evaluation
  }

  std::ofstream log_file;
  std::ostream* log = nullptr;
  if (!log_path.empty()) {
    log_file.open(log_path, std::ios::binary | std::ios::trunc);
    if (!log_file) throw DataError("cannot open log file for writing: " + log_path);
    log = &log_file;
  } else if (!shared.quiet) {
    log = &std::cout;
  }

  TrainOptions opts;
  opts.model_path = shared.model_path;
  opts.log = log;
  TrainSummary summary = train_model(cfg, train, valid, vocab, opts);
  if (!shared.quiet)
    std::cerr << "trained " << summary.epochs_run << " epochs, " << summary.updates
              << " updates, best valid nll " << summary.best_valid_nll << "\n";
  return 0;
}

int cmd_eval(const SharedFlags& shared, std::optional<double> dynamic_lr,
             const std::string& inference_str, int mc_samples) {
  Vocabulary vocab;
  LoadedModel loaded = load_model_checked(shared.model_path, shared.vocab_path, &vocab);
  EncodedCorpus corpus = encode(read_text_file(shared.corpus_path), vocab);

  DropoutInference inf = inference_from_header(loaded);
  if (!inference_str.empty()) {
    inf.kind = inference_kind_from_string(inference_str);
    if (inf.kind == DropoutInference::Kind::monte_carlo) inf.samples = mc_samples;
  }

  EvalReport rep;
  if (dynamic_lr) {
    int64_t seg = 50;
    auto it = loaded.header.find("cfg.segment_length");
    if (it != loaded.header.end()) seg = std::stoll(it->second);
    rep = dynamic_evaluate(loaded.params, corpus, *dynamic_lr, seg, inf);
  } else {
    rep = evaluate(loaded.params, corpus, inf);
  }
  std::printf("%lld\t%.8f\t%.6f\t%.6f\n", static_cast<long long>(rep.token_count),
              rep.mean_nll, rep.perplexity, rep.bits_per_token);
  return 0;
}

int cmd_complete(const SharedFlags& shared, const std::string& questions_path,
                 const std::string& answers_path, const std::string& mode_str,
                 const std::string& out_path) {
  Vocabulary vocab;
  LoadedModel loaded = load_model_checked(shared.model_path, shared.vocab_path, &vocab);

  std::ifstream qin(questions_path);
  if (!qin) throw DataError("cannot open questions file: " + questions_path);
  std::vector<CompletionQuestion> questions = read_questions(qin, vocab);
  if (!answers_path.empty()) {
    std::ifstream ain(answers_path);
    if (!ain) throw DataError("cannot open answers file: " + answers_path);
    apply_answers(ain, questions);
  }

  const CompletionMode mode = completion_mode_from_string(mode_str);
  double scale = 1.0;
  const DropoutInference inf = inference_from_header(loaded);
  if (inf.kind == DropoutInference::Kind::mean_mask) scale = inf.keep_prob;
  CompletionResult result = score_completions(loaded.params, questions, mode, scale);

  if (out_path.empty()) {
    write_completion_result(std::cout, result);
  } else {
    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open output file: " + out_path);
    write_completion_result(out, result);
    if (result.accuracy && !shared.quiet)
      std::cout << "accuracy\t" << *result.accuracy << "\n";
  }
  return 0;
}

int cmd_analyze(const SharedFlags& shared, const std::string& out_path) {
  LoadedModel loaded = model_from_checkpoint(Checkpoint::load(shared.model_path));

  std::ofstream out_file;
  std::ostream* out = &std::cout;
  if (!out_path.empty()) {
    out_file.open(out_path, std::ios::binary | std::ios::trunc);
    if (!out_file) throw DataError("cannot open output file: " + out_path);
    out = &out_file;
  }

  if (loaded.params.recurrent_kind == RecurrentKind::diagonal) {
    TimescaleReport rep = timescale_report(loaded.params);
    for (size_t i = 0; i < rep.units.size(); ++i) {
      char line[96];
      std::snprintf(line, sizeof(line), "%zu\t%.8f\t%.6f\n", i, rep.units[i].r,
                    rep.units[i].timescale);
      (*out) << line;
    }
  } else {
    SpectralStats stats = spectral_stats(loaded.params);
    (*out) << "spectral_radius\t" << stats.radius << '\n'
           << "converged\t" << (stats.converged ? 1 : 0) << '\n';
    if (stats.fraction_above_090)
      (*out) << "fraction_above_0.9\t" << *stats.fraction_above_090 << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Recurrent and impulse-response language modeling laboratory"};
  app.require_subcommand(1);

  SharedFlags shared;

  auto add_shared = [&](CLI::App* sub) {
    sub->add_option("--vocab", shared.vocab_path, "Vocabulary TSV file");
    sub->add_option("--corpus", shared.corpus_path, "Plain UTF-8 corpus file");
    sub->add_option("--model", shared.model_path, "Model checkpoint file");
    sub->add_option("--config", shared.config_path, "Configuration file (key = value)");
    sub->add_option("--seed", shared.seed, "Random seed override");
    sub->add_flag("--quiet", shared.quiet, "Suppress progress output");
  };

  // build-vocab
  auto* build = app.add_subcommand("build-vocab", "Build a vocabulary from a corpus");
  std::string bv_mode = "word";
  int64_t bv_min_count = 1;
  add_shared(build);
  build->add_option("--mode", bv_mode, "word or character")->capture_default_str();
  build->add_option("--min-count", bv_min_count, "Minimum occurrence count")
      ->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train a model");
  std::string tr_valid, tr_log;
  std::vector<std::string> tr_overrides;
  add_shared(train);
  train->add_option("--valid", tr_valid, "Validation corpus (default: split from --corpus)");
  train->add_option("--log", tr_log, "Write the per-epoch log to this file");
  train->add_option("--set", tr_overrides, "Config override key=value (repeatable)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Report perplexity on a corpus");
  std::optional<double> ev_dynamic;
  std::string ev_inference;
  int ev_mc_samples = 32;
  add_shared(eval_cmd);
  eval_cmd->add_option("--dynamic", ev_dynamic, "Adapt at test time with this learning rate");
  eval_cmd->add_option("--inference", ev_inference, "none, mean_mask or mc");
  eval_cmd->add_option("--mc-samples", ev_mc_samples, "Mask samples for mc inference")
      ->capture_default_str();

  // complete
  auto* complete = app.add_subcommand("complete", "Score sentence-completion questions");
  std::string cp_questions, cp_answers, cp_mode = "full", cp_out;
  add_shared(complete);
  complete->add_option("--questions", cp_questions, "Question TSV file")->required();
  complete->add_option("--answers", cp_answers, "Answer TSV file");
  complete->add_option("--mode", cp_mode, "full or lcu_only")->capture_default_str();
  complete->add_option("--out", cp_out, "Write choices to this file");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Timescale or spectral diagnostics");
  std::string an_out;
  add_shared(analyze);
  analyze->add_option("--out", an_out, "Write the report to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    auto require = [](const std::string& value, const char* flag) {
      if (value.empty()) throw UsageError(std::string("missing required flag ") + flag);
    };
    if (build->parsed()) {
      require(shared.corpus_path, "--corpus");
      return cmd_build_vocab(shared, bv_mode, bv_min_count);
    }
    if (train->parsed()) {
      require(shared.corpus_path, "--corpus");
      require(shared.vocab_path, "--vocab");
      require(shared.model_path, "--model");
      return cmd_train(shared, tr_valid, tr_log, tr_overrides);
    }
    if (eval_cmd->parsed()) {
      require(shared.corpus_path, "--corpus");
      require(shared.vocab_path, "--vocab");
      require(shared.model_path, "--model");
      return cmd_eval(shared, ev_dynamic, ev_inference, ev_mc_samples);
    }
    if (complete->parsed()) {
      require(shared.vocab_path, "--vocab");
      require(shared.model_path, "--model");
      return cmd_complete(shared, cp_questions, cp_answers, cp_mode, cp_out);
    }
    if (analyze->parsed()) {
      require(shared.model_path, "--model");
      return cmd_analyze(shared, an_out);
    }
    throw UsageError("no subcommand given");
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  }
}
