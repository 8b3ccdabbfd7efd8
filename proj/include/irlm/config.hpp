#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "irlm/checkpoint.hpp"
#include "irlm/corpus.hpp"
#include "irlm/model.hpp"
#include "irlm/regopt.hpp"
#include "irlm/types.hpp"

namespace irlm {

// Training configuration. File format is flat "key = value" UTF-8 text;
// '#' starts a comment; unknown keys are errors so typos cannot silently
// fall back to defaults. Flag overrides use the same "key=value" syntax
// and take precedence over file values.
struct TrainConfig {
  Arch arch = Arch::irlm;
  int64_t hidden = 512;
  Activation nonlinearity = Activation::rectifier;  // non-IRLM word-level default
  double smoothing_a = 1.0;
  VocabMode mode = VocabMode::word;
  std::optional<int64_t> segment_length;  // default 50 (word) / 200 (character)
  int64_t epochs = 10;
  double base_lr = 0.1;
  double momentum = 0.99;
  LrScales lr_scales;
  double dropout_prob = 0.5;
  std::optional<double> column_norm_target;
  AnnealConfig anneal;
  std::optional<double> clip_threshold;
  std::optional<int> nce_k;
  std::optional<LcuConfig> lcu;
  std::optional<BlockMask> block;           // defaults to (3H/4, H/4) for block_rnn
  std::optional<double> block_long_diag;    // block initialization recipe (0.9)
  std::optional<double> l1_penalty;
  uint64_t seed = 1;
  double valid_fraction = 0.05;  // used when no validation corpus is supplied
  bool save_velocity = false;

  int64_t segment_length_or_default() const {
    if (segment_length) return *segment_length;
    return mode == VocabMode::word ? 50 : 200;
  }

  RegularizerConfig regularizer() const {
    RegularizerConfig reg;
    reg.dropout_prob = dropout_prob;
    reg.column_norm_target = column_norm_target;
    if (lcu) reg.lcu_bounds = std::make_pair(lcu->lower, lcu->upper);
    reg.l1_penalty = l1_penalty;
    return reg;
  }

  void validate() const {
    if (hidden < 1) throw UsageError("hidden must be >= 1");
    if (epochs < 0) throw UsageError("epochs must be >= 0");
    if (!(base_lr > 0.0)) throw UsageError("base_lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must be in [0, 1)");
    if (!(dropout_prob >= 0.0 && dropout_prob < 1.0))
      throw UsageError("dropout_prob must be in [0, 1)");
    if (column_norm_target && !(*column_norm_target > 0.0))
      throw UsageError("column_norm_target must be positive");
    if (segment_length && *segment_length < 1) throw UsageError("segment_length must be >= 1");
    if (!(anneal.decay_factor > 0.0 && anneal.decay_factor <= 1.0))
      throw UsageError("anneal_decay must be in (0, 1]");
    if (clip_threshold && !(*clip_threshold > 0.0))
      throw UsageError("clip_threshold must be positive");
    if (arch == Arch::skiprnn && mode != VocabMode::character)
      throw UsageError("skiprnn requires character mode");
    if (nce_k) {
      if (*nce_k < 1) throw UsageError("nce_k must be >= 1");
      if (dropout_prob > 0.0)
        throw UsageError("dropout is not supported with NCE training (set dropout_prob = 0)");
    }
    if (lcu) {
      if (arch != Arch::irlm && arch != Arch::block_rnn)
        throw UsageError("lcu configuration requires arch irlm or block_rnn");
      if (lcu->n_short < 0 || lcu->n_long < 0 || lcu->n_short + lcu->n_long != hidden)
        throw UsageError("lcu_n_short + lcu_n_long must equal hidden");
      if (!(lcu->lower <= lcu->upper)) throw UsageError("lcu_lower must be <= lcu_upper");
    }
    if (arch == Arch::block_rnn && block && block->h1 + block->h2 != hidden)
      throw UsageError("block_h1 + block_h2 must equal hidden");
    if (!(valid_fraction > 0.0 && valid_fraction < 1.0))
      throw UsageError("valid_fraction must be in (0, 1)");
  }

  InitSpec init_spec() const {
    InitSpec spec;
    spec.nonlinearity = Nonlinearity{nonlinearity, smoothing_a};
    spec.lcu = lcu;
    if (arch == Arch::block_rnn) {
      spec.block = block ? *block : BlockMask{hidden - hidden / 4, hidden / 4};
      spec.block_long_diag = block_long_diag;
    }
    return spec;
  }
};

inline void apply_config_pair(TrainConfig& cfg, const std::string& key,
                              const std::string& value) {
  auto as_double = [&](const std::string& v) {
    try {
      size_t used;
      double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw UsageError("bad numeric value for " + key + ": '" + value + "'");
    }
  };
  auto as_int = [&](const std::string& v) {
    try {
      size_t used;
      long long i = std::stoll(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return i;
    } catch (const std::exception&) {
      throw UsageError("bad integer value for " + key + ": '" + value + "'");
    }
  };
  auto as_bool = [&](const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw UsageError("bad boolean value for " + key + ": '" + value + "'");
  };
  auto lcu_ref = [&]() -> LcuConfig& {
    if (!cfg.lcu) cfg.lcu = LcuConfig{};
    return *cfg.lcu;
  };
  auto block_ref = [&]() -> BlockMask& {
    if (!cfg.block) cfg.block = BlockMask{};
    return *cfg.block;
  };

  if (key == "arch") cfg.arch = arch_from_string(value);
  else if (key == "hidden") cfg.hidden = as_int(value);
  else if (key == "nonlinearity") cfg.nonlinearity = activation_from_string(value);
  else if (key == "smoothing_a") cfg.smoothing_a = as_double(value);
  else if (key == "mode") cfg.mode = vocab_mode_from_string(value);
  else if (key == "segment_length") cfg.segment_length = as_int(value);
  else if (key == "epochs") cfg.epochs = as_int(value);
  else if (key == "base_lr") cfg.base_lr = as_double(value);
  else if (key == "momentum") cfg.momentum = as_double(value);
  else if (key == "lr_scale_encoder") cfg.lr_scales.encoder = as_double(value);
  else if (key == "lr_scale_decoder") cfg.lr_scales.decoder = as_double(value);
  else if (key == "lr_scale_recurrent_dense") cfg.lr_scales.recurrent_dense = as_double(value);
  else if (key == "lr_scale_recurrent_diagonal")
    cfg.lr_scales.recurrent_diagonal = as_double(value);
  else if (key == "lr_scale_skip") cfg.lr_scales.skip = as_double(value);
  else if (key == "dropout_prob") cfg.dropout_prob = as_double(value);
  else if (key == "column_norm_target") cfg.column_norm_target = as_double(value);
  else if (key == "anneal_rule") cfg.anneal.rule = anneal_rule_from_string(value);
  else if (key == "anneal_decay") cfg.anneal.decay_factor = as_double(value);
  else if (key == "anneal_improvement_threshold")
    cfg.anneal.improvement_threshold = as_double(value);
  else if (key == "clip_threshold") cfg.clip_threshold = as_double(value);
  else if (key == "nce_k") cfg.nce_k = static_cast<int>(as_int(value));
  else if (key == "lcu_n_short") lcu_ref().n_short = as_int(value);
  else if (key == "lcu_n_long") lcu_ref().n_long = as_int(value);
  else if (key == "lcu_lower") lcu_ref().lower = as_double(value);
  else if (key == "lcu_upper") lcu_ref().upper = as_double(value);
  else if (key == "block_h1") block_ref().h1 = as_int(value);
  else if (key == "block_h2") block_ref().h2 = as_int(value);
  else if (key == "block_long_diag") cfg.block_long_diag = as_double(value);
  else if (key == "l1_penalty") cfg.l1_penalty = as_double(value);
  else if (key == "seed") cfg.seed = static_cast<uint64_t>(as_int(value));
  else if (key == "valid_fraction") cfg.valid_fraction = as_double(value);
  else if (key == "save_velocity") cfg.save_velocity = as_bool(value);
  else throw UsageError("unknown configuration key '" + key + "'");
}

inline std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline TrainConfig parse_config(std::istream& in, TrainConfig cfg = {}) {
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config line " + std::to_string(line_no) + " is not 'key = value'");
    apply_config_pair(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

inline TrainConfig parse_config_file(const std::string& path, TrainConfig cfg = {}) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file: " + path);
  return parse_config(in, cfg);
}

// "key=value" as supplied on the command line.
inline void apply_override(TrainConfig& cfg, const std::string& spec) {
  size_t eq = spec.find('=');
  if (eq == std::string::npos)
    throw UsageError("override '" + spec + "' is not of the form key=value");
  apply_config_pair(cfg, trim(spec.substr(0, eq)), trim(spec.substr(eq + 1)));
}

// Effective configuration, echoed into checkpoint headers under cfg.*.
inline std::map<std::string, std::string> config_echo(const TrainConfig& cfg) {
  std::map<std::string, std::string> echo;
  echo["cfg.arch"] = to_string(cfg.arch);
  echo["cfg.hidden"] = std::to_string(cfg.hidden);
  echo["cfg.nonlinearity"] = to_string(cfg.nonlinearity);
  echo["cfg.smoothing_a"] = format_double(cfg.smoothing_a);
  echo["cfg.mode"] = to_string(cfg.mode);
  echo["cfg.segment_length"] = std::to_string(cfg.segment_length_or_default());
  echo["cfg.epochs"] = std::to_string(cfg.epochs);
  echo["cfg.base_lr"] = format_double(cfg.base_lr);
  echo["cfg.momentum"] = format_double(cfg.momentum);
  echo["cfg.lr_scale_encoder"] = format_double(cfg.lr_scales.encoder);
  echo["cfg.lr_scale_decoder"] = format_double(cfg.lr_scales.decoder);
  echo["cfg.lr_scale_recurrent_dense"] = format_double(cfg.lr_scales.recurrent_dense);
  echo["cfg.lr_scale_recurrent_diagonal"] = format_double(cfg.lr_scales.recurrent_diagonal);
  echo["cfg.lr_scale_skip"] = format_double(cfg.lr_scales.skip);
  echo["cfg.dropout_prob"] = format_double(cfg.dropout_prob);
  if (cfg.column_norm_target)
    echo["cfg.column_norm_target"] = format_double(*cfg.column_norm_target);
  echo["cfg.anneal_rule"] = to_string(cfg.anneal.rule);
  echo["cfg.anneal_decay"] = format_double(cfg.anneal.decay_factor);
  echo["cfg.anneal_improvement_threshold"] = format_double(cfg.anneal.improvement_threshold);
  if (cfg.clip_threshold) echo["cfg.clip_threshold"] = format_double(*cfg.clip_threshold);
  if (cfg.nce_k) echo["cfg.nce_k"] = std::to_string(*cfg.nce_k);
  if (cfg.lcu) {
    echo["cfg.lcu_n_short"] = std::to_string(cfg.lcu->n_short);
    echo["cfg.lcu_n_long"] = std::to_string(cfg.lcu->n_long);
    echo["cfg.lcu_lower"] = format_double(cfg.lcu->lower);
    echo["cfg.lcu_upper"] = format_double(cfg.lcu->upper);
  }
  if (cfg.block) {
    echo["cfg.block_h1"] = std::to_string(cfg.block->h1);
    echo["cfg.block_h2"] = std::to_string(cfg.block->h2);
  }
  if (cfg.block_long_diag) echo["cfg.block_long_diag"] = format_double(*cfg.block_long_diag);
  if (cfg.l1_penalty) echo["cfg.l1_penalty"] = format_double(*cfg.l1_penalty);
  echo["cfg.seed"] = std::to_string(cfg.seed);
  echo["cfg.valid_fraction"] = format_double(cfg.valid_fraction);
  return echo;
}

}  // namespace irlm
