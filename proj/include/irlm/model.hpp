#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>

#include "irlm/rng.hpp"
#include "irlm/types.hpp"

namespace irlm {

// ---------------------------------------------------------------------------
// Nonlinearities

enum class Activation { identity, logistic, rectifier, smoothed_rectifier };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::logistic: return "logistic";
    case Activation::rectifier: return "rectifier";
    case Activation::smoothed_rectifier: return "smoothed_rectifier";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "logistic") return Activation::logistic;
  if (s == "rectifier") return Activation::rectifier;
  if (s == "smoothed_rectifier") return Activation::smoothed_rectifier;
  throw UsageError("unknown nonlinearity '" + s + "'");
}

// The smoothed rectifier is max(0, x - a*tanh(x/a)): exactly 0 for x <= 0,
// asymptotically x - a for large x, differentiable everywhere.
struct Nonlinearity {
  Activation kind = Activation::identity;
  double a = 1.0;  // smoothing scale, used only by smoothed_rectifier

  double value(double x) const {
    switch (kind) {
      case Activation::identity: return x;
      case Activation::logistic: return 1.0 / (1.0 + std::exp(-x));
      case Activation::rectifier: return x > 0.0 ? x : 0.0;
      case Activation::smoothed_rectifier: {
        if (x <= 0.0) return 0.0;
        return x - a * std::tanh(x / a);
      }
    }
    return x;
  }

  // Derivative with respect to the pre-activation.
  double derivative(double x) const {
    switch (kind) {
      case Activation::identity: return 1.0;
      case Activation::logistic: {
        double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 - s);
      }
      case Activation::rectifier: return x > 0.0 ? 1.0 : 0.0;
      case Activation::smoothed_rectifier: {
        if (x <= 0.0) return 0.0;
        double t = std::tanh(x / a);
        return t * t;  // 1 - sech^2(x/a)
      }
    }
    return 1.0;
  }

  Vector apply(const Vector& pre) const {
    if (kind == Activation::identity) return pre;
    Vector out(pre.size());
    for (Index i = 0; i < pre.size(); ++i) out[i] = value(pre[i]);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Parameters

enum class RecurrentKind { dense, diagonal, block };

enum class Arch { irlm, rnn, skiprnn, block_rnn };

inline const char* to_string(Arch a) {
  switch (a) {
    case Arch::irlm: return "irlm";
    case Arch::rnn: return "rnn";
    case Arch::skiprnn: return "skiprnn";
    case Arch::block_rnn: return "block_rnn";
  }
  return "?";
}

inline Arch arch_from_string(const std::string& s) {
  if (s == "irlm") return Arch::irlm;
  if (s == "rnn") return Arch::rnn;
  if (s == "skiprnn") return Arch::skiprnn;
  if (s == "block_rnn") return Arch::block_rnn;
  throw UsageError("unknown arch '" + s + "'");
}

// Two diagonal blocks of sizes (h1, h2); entries connecting the blocks are
// structurally zero. The first block is the long-context block.
struct BlockMask {
  Index h1 = 0;
  Index h2 = 0;

  bool masked(Index row, Index col) const {
    bool row_first = row < h1;
    bool col_first = col < h1;
    return row_first != col_first;
  }
};

// Long-context unit designation for diagonal models. LCUs occupy the
// leading n_long indices; short-context units the trailing n_short.
struct LcuConfig {
  Index n_short = 0;
  Index n_long = 0;
  double lower = 0.7;
  double upper = 1.0;
};

struct ModelParams {
  Matrix W;  // H x V encoder
  Matrix Z;  // V x H decoder
  RecurrentKind recurrent_kind = RecurrentKind::diagonal;
  Matrix R;                       // H x H, dense and block variants
  Vector r;                       // H, diagonal variant
  std::optional<BlockMask> block; // present iff recurrent_kind == block
  std::optional<Matrix> R_skip;   // H x H, character-level skipping models
  Nonlinearity nonlinearity;
  std::optional<LcuConfig> lcu;

  Index hidden() const { return W.rows(); }
  Index vocab_size() const { return W.cols(); }

  bool is_irlm() const {
    return recurrent_kind == RecurrentKind::diagonal &&
           nonlinearity.kind == Activation::identity;
  }

  Arch arch() const {
    if (recurrent_kind == RecurrentKind::diagonal) return Arch::irlm;
    if (recurrent_kind == RecurrentKind::block) return Arch::block_rnn;
    return R_skip ? Arch::skiprnn : Arch::rnn;
  }
};

inline void apply_block_mask(Matrix& m, const BlockMask& b) {
  m.block(0, b.h1, b.h1, b.h2).setZero();
  m.block(b.h1, 0, b.h2, b.h1).setZero();
}

// ---------------------------------------------------------------------------
// Hidden state

struct HiddenState {
  Vector x;                // current representation
  Vector last_word_start;  // state computed at the most recent word-start
                           // position; zero before the first word

  static HiddenState zero(Index h) {
    HiddenState s;
    s.x = Vector::Zero(h);
    s.last_word_start = Vector::Zero(h);
    return s;
  }
};

// ---------------------------------------------------------------------------
// Forward pass

inline Vector recurrent_apply(const ModelParams& p, const Vector& x) {
  if (p.recurrent_kind == RecurrentKind::diagonal) return p.r.cwiseProduct(x);
  return p.R * x;
}

inline Vector recurrent_transpose_apply(const ModelParams& p, const Vector& e) {
  if (p.recurrent_kind == RecurrentKind::diagonal) return p.r.cwiseProduct(e);
  return p.R.transpose() * e;
}

// Pre-activation for one step: W y_t + R x_{t-1}, plus the skip term
// R_skip x_ws at word-start positions when the model has one. The skip
// source is the state computed at the previous word-start position.
inline Vector step_preactivation(const ModelParams& p, const HiddenState& state,
                                 int32_t token_id, bool is_word_start) {
  if (token_id < 0 || token_id >= p.vocab_size())
    throw UsageError("token id " + std::to_string(token_id) + " out of range");
  Vector pre = p.W.col(token_id) + recurrent_apply(p, state.x);
  if (p.R_skip && is_word_start) pre += (*p.R_skip) * state.last_word_start;
  return pre;
}

inline HiddenState forward_step(const ModelParams& p, const HiddenState& state,
                                int32_t token_id, bool is_word_start) {
  Vector pre = step_preactivation(p, state, token_id, is_word_start);
  HiddenState out;
  out.x = p.nonlinearity.apply(pre);
  require_finite(out.x, "forward_step");
  out.last_word_start = is_word_start ? out.x : state.last_word_start;
  return out;
}

// ---------------------------------------------------------------------------
// Prediction

// Numerically stable log(sum(exp(logits))).
inline double log_sum_exp(const Vector& logits) {
  double m = logits.maxCoeff();
  double s = 0.0;
  for (Index i = 0; i < logits.size(); ++i) s += std::exp(logits[i] - m);
  return m + std::log(s);
}

// Softmax over Z x. With a dropout mask the representation is x .* mask;
// with an inference scale (mean-mask dropout inference) it is scale * x.
inline Vector predict_distribution(const ModelParams& p, const HiddenState& state,
                                   const Vector* dropout_mask = nullptr,
                                   std::optional<double> inference_scale = std::nullopt) {
  Vector xdec;
  if (dropout_mask != nullptr) {
    if (dropout_mask->size() != state.x.size())
      throw UsageError("dropout mask size does not match hidden dimension");
    xdec = state.x.cwiseProduct(*dropout_mask);
  } else if (inference_scale) {
    xdec = (*inference_scale) * state.x;
  } else {
    xdec = state.x;
  }
  Vector logits = p.Z * xdec;
  require_finite(logits, "predict_distribution");
  double m = logits.maxCoeff();
  Vector probs = (logits.array() - m).exp();
  probs /= probs.sum();
  return probs;
}

// ---------------------------------------------------------------------------
// Direct impulse-response logits (brute-force route)

// Pre-softmax logit for next_id after token_history, computed by the
// explicit sum over lags: sum_tau z_next . (r^tau .* W y_{t-tau}).
// Serves as the independent oracle for the recursive forward pass.
inline double direct_irlm_logits(const ModelParams& p, std::span<const int32_t> token_history,
                                 int32_t next_id) {
  if (!p.is_irlm()) throw UsageError("direct_irlm_logits requires an IRLM");
  if (next_id < 0 || next_id >= p.vocab_size()) throw UsageError("next_id out of range");
  Vector decay = Vector::Ones(p.hidden());
  double logit = 0.0;
  for (size_t tau = 0; tau < token_history.size(); ++tau) {
    int32_t tok = token_history[token_history.size() - 1 - tau];
    if (tok < 0 || tok >= p.vocab_size()) throw UsageError("history token out of range");
    logit += p.Z.row(next_id).dot(decay.cwiseProduct(p.W.col(tok)));
    decay = decay.cwiseProduct(p.r);
  }
  return logit;
}

// ---------------------------------------------------------------------------
// Initialization

struct InitSpec {
  double encoder_scale = 0.1;      // W, Z ~ U[-s, s]
  double recurrent_stddev = 0.01;  // dense/block entries ~ N(0, sd^2)
  double diag_low = 0.0;           // diagonal entries ~ U[low, high]
  double diag_high = 0.5;
  std::optional<LcuConfig> lcu;    // diagonal: long units at lcu_init, short at 0
  double lcu_init = 0.9;
  std::optional<BlockMask> block;  // required for block_rnn
  // When set: first-block diagonal gets this value and the second block is
  // zeroed, biasing the first block toward long contexts.
  std::optional<double> block_long_diag;
  Nonlinearity nonlinearity{};     // ignored for irlm (identity is forced)
};

inline ModelParams init_params(Arch arch, Index hidden, Index vocab, uint64_t seed,
                               const InitSpec& spec = {}) {
  if (hidden < 1 || vocab < 1) throw UsageError("hidden and vocab dimensions must be >= 1");
  Rng rng(seed);
  ModelParams p;
  p.W = Matrix(hidden, vocab);
  for (Index j = 0; j < vocab; ++j)
    for (Index i = 0; i < hidden; ++i)
      p.W(i, j) = rng.uniform(-spec.encoder_scale, spec.encoder_scale);
  p.Z = Matrix(vocab, hidden);
  for (Index j = 0; j < hidden; ++j)
    for (Index i = 0; i < vocab; ++i)
      p.Z(i, j) = rng.uniform(-spec.encoder_scale, spec.encoder_scale);
  p.nonlinearity = spec.nonlinearity;

  switch (arch) {
    case Arch::irlm: {
      p.recurrent_kind = RecurrentKind::diagonal;
      p.nonlinearity = Nonlinearity{Activation::identity, 1.0};
      p.r = Vector(hidden);
      if (spec.lcu) {
        if (spec.lcu->n_short + spec.lcu->n_long != hidden)
          throw UsageError("lcu n_short + n_long must equal the hidden dimension");
        p.lcu = spec.lcu;
        for (Index i = 0; i < hidden; ++i)
          p.r[i] = i < spec.lcu->n_long ? spec.lcu_init : 0.0;
      } else {
        for (Index i = 0; i < hidden; ++i) p.r[i] = rng.uniform(spec.diag_low, spec.diag_high);
      }
      break;
    }
    case Arch::rnn:
    case Arch::skiprnn: {
      p.recurrent_kind = RecurrentKind::dense;
      p.R = Matrix(hidden, hidden);
      for (Index j = 0; j < hidden; ++j)
        for (Index i = 0; i < hidden; ++i) p.R(i, j) = rng.normal(spec.recurrent_stddev);
      if (arch == Arch::skiprnn) {
        Matrix rs(hidden, hidden);
        for (Index j = 0; j < hidden; ++j)
          for (Index i = 0; i < hidden; ++i) rs(i, j) = rng.normal(spec.recurrent_stddev);
        p.R_skip = std::move(rs);
      }
      break;
    }
    case Arch::block_rnn: {
      if (!spec.block) throw UsageError("block_rnn requires block sizes");
      if (spec.block->h1 + spec.block->h2 != hidden)
        throw UsageError("block sizes must sum to the hidden dimension");
      p.recurrent_kind = RecurrentKind::block;
      p.block = spec.block;
      p.R = Matrix(hidden, hidden);
      for (Index j = 0; j < hidden; ++j)
        for (Index i = 0; i < hidden; ++i) p.R(i, j) = rng.normal(spec.recurrent_stddev);
      if (spec.block_long_diag) {
        for (Index i = 0; i < spec.block->h1; ++i) p.R(i, i) = *spec.block_long_diag;
        p.R.block(spec.block->h1, spec.block->h1, spec.block->h2, spec.block->h2).setZero();
      }
      apply_block_mask(p.R, *p.block);
      if (spec.lcu) {
        if (spec.lcu->n_long != spec.block->h1 || spec.lcu->n_short != spec.block->h2)
          throw UsageError("lcu sizes must match the block sizes for block_rnn");
        p.lcu = spec.lcu;
      }
      break;
    }
  }
  return p;
}

}  // namespace irlm
