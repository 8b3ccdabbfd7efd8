#pragma once

#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>

#include "irlm/checkpoint.hpp"
#include "irlm/config.hpp"
#include "irlm/corpus.hpp"
#include "irlm/eval.hpp"
#include "irlm/grad.hpp"
#include "irlm/model.hpp"
#include "irlm/regopt.hpp"
#include "irlm/types.hpp"

namespace irlm {

struct TrainOptions {
  std::filesystem::path model_path;
  std::ostream* log = nullptr;  // receives the per-epoch log lines
  // Instrumentation hook, called after every parameter update.
  std::function<void(const ModelParams&, int64_t step)> after_update;
};

struct TrainSummary {
  int64_t epochs_run = 0;
  int64_t updates = 0;
  double best_valid_nll = 0.0;
  double final_train_nll = 0.0;
  ModelParams params;  // final parameters (the checkpoint holds the best)
};

// Epoch loop: truncated BPTT (or NCE) over overlapping segments with
// hidden-state carryover, momentum updates, dropout on the decoding path,
// constraint projection and column normalization after every step,
// validation scoring and learning-rate annealing per epoch. A checkpoint
// is written at initialization and after every epoch that improves the
// validation cost, so the file on disk is always the last good model.
// Log lines are "epoch<TAB>train_nll<TAB>valid_nll<TAB>lr".
inline TrainSummary train_model(const TrainConfig& cfg, const EncodedCorpus& train,
                                const EncodedCorpus& valid, const Vocabulary& vocab,
                                const TrainOptions& opts) {
  cfg.validate();
  if (vocab.mode() != cfg.mode)
    throw UsageError("config mode does not match the vocabulary mode");
  if (train.vocab_size != vocab.size() || valid.vocab_size != vocab.size())
    throw UsageError("corpus was not encoded with the supplied vocabulary");
  if (train.size() < 2) throw DataError("training corpus needs at least 2 tokens");
  if (valid.size() < 2) throw DataError("validation corpus needs at least 2 tokens");

  ModelParams params = init_params(cfg.arch, cfg.hidden, vocab.size(), cfg.seed,
                                   cfg.init_spec());
  OptimizerState opt = OptimizerState::create(params, cfg.base_lr, cfg.momentum);
  opt.lr_scale = cfg.lr_scales;
  opt.anneal = cfg.anneal;
  opt.clip_threshold = cfg.clip_threshold;
  const RegularizerConfig reg = cfg.regularizer();

  std::optional<NceConfig> nce;
  if (cfg.nce_k) nce = make_nce_config(train, *cfg.nce_k);

  const DropoutInference valid_inf =
      cfg.dropout_prob > 0.0 ? DropoutInference::mean_mask(1.0 - cfg.dropout_prob)
                             : DropoutInference::none();

  const std::string vocab_hash = vocab.content_hash_hex();
  auto echo = config_echo(cfg);
  auto save = [&](int64_t step) {
    Checkpoint ckpt = checkpoint_from_model(params, vocab_hash, cfg.mode, step,
                                            cfg.save_velocity ? &opt.velocity : nullptr);
    for (const auto& [k, v] : echo) ckpt.header[k] = v;
    ckpt.save(opts.model_path);
  };
  save(0);

  TrainSummary summary;
  const int64_t seg_len = cfg.segment_length_or_default();
  const Index h = params.hidden();
  std::optional<double> best_valid;
  int64_t step = 0;

  for (int64_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    HiddenState state = HiddenState::zero(h);
    Rng mask_rng(mix_seed(cfg.seed, 0x6d61736bULL + static_cast<uint64_t>(epoch)));
    const uint64_t nce_epoch_seed =
        mix_seed(cfg.seed, 0x6e636500ULL + static_cast<uint64_t>(epoch));
    double loss_sum = 0.0;
    int64_t pred_count = 0;
    const double epoch_lr = opt.base_lr;

    int64_t seg_index = 0;
    for (auto [begin, end] : segment_ranges(train.size(), seg_len)) {
      SegmentView seg = segment_of(train, begin, end);
      const int64_t preds = end - begin - 1;
      double loss;
      if (nce) {
        NceResult res = nce_objective_and_gradients(
            params, seg, state, *nce,
            mix_seed(nce_epoch_seed, static_cast<uint64_t>(seg_index)));
        momentum_update(params, res.grads, opt, reg);
        state = std::move(res.state);
        loss = res.mean_loss;
      } else if (cfg.dropout_prob > 0.0) {
        Matrix masks(h, preds);
        for (int64_t t = 0; t < preds; ++t)
          masks.col(t) = sample_dropout_mask(h, cfg.dropout_prob, mask_rng);
        BpttResult res = bptt_gradients(params, seg, state, &masks);
        momentum_update(params, res.grads, opt, reg);
        state = std::move(res.state);
        loss = res.mean_nll;
      } else {
        BpttResult res = bptt_gradients(params, seg, state);
        momentum_update(params, res.grads, opt, reg);
        state = std::move(res.state);
        loss = res.mean_nll;
      }
      ++step;
      ++seg_index;
      if (opts.after_update) opts.after_update(params, step);
      loss_sum += loss * static_cast<double>(preds);
      pred_count += preds;
    }

    const double train_nll = loss_sum / static_cast<double>(pred_count);
    const EvalReport valid_rep = evaluate(params, valid, valid_inf);

    if (opts.log) {
      char line[160];
      std::snprintf(line, sizeof(line), "%lld\t%.8f\t%.8f\t%.8g\n",
                    static_cast<long long>(epoch), train_nll, valid_rep.mean_nll, epoch_lr);
      (*opts.log) << line;
    }

    if (!best_valid || valid_rep.mean_nll < *best_valid) {
      best_valid = valid_rep.mean_nll;
      save(step);
    }
    anneal_step(opt, valid_rep.mean_nll);

    summary.epochs_run = epoch;
    summary.final_train_nll = train_nll;
  }

  summary.updates = step;
  summary.best_valid_nll = best_valid.value_or(0.0);
  summary.params = std::move(params);
  return summary;
}

}  // namespace irlm
