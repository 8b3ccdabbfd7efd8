#pragma once

#include <cmath>
#include <iostream>
#include <optional>

#include "irlm/grad.hpp"
#include "irlm/model.hpp"
#include "irlm/rng.hpp"
#include "irlm/types.hpp"

namespace irlm {

// ---------------------------------------------------------------------------
// Configuration

struct LrScales {
  double encoder = 1.0;
  double decoder = 1.0;
  double recurrent_dense = 1.0;
  // The gradient on the self-recurrent connections is updated on every
  // position while encoder/decoder columns are only touched when their
  // word occurs, hence the much smaller default.
  double recurrent_diagonal = 1e-3;
  double skip = 1.0;

  double of(ParamGroup g) const {
    switch (g) {
      case ParamGroup::encoder: return encoder;
      case ParamGroup::decoder: return decoder;
      case ParamGroup::recurrent_dense: return recurrent_dense;
      case ParamGroup::recurrent_diagonal: return recurrent_diagonal;
      case ParamGroup::skip: return skip;
    }
    return 1.0;
  }
};

enum class AnnealRule { plateau, paper_literal };

inline const char* to_string(AnnealRule r) {
  return r == AnnealRule::plateau ? "plateau" : "paper_literal";
}

inline AnnealRule anneal_rule_from_string(const std::string& s) {
  if (s == "plateau") return AnnealRule::plateau;
  if (s == "paper_literal") return AnnealRule::paper_literal;
  throw UsageError("unknown anneal rule '" + s + "'");
}

struct AnnealConfig {
  AnnealRule rule = AnnealRule::plateau;
  double decay_factor = 0.5;            // lr multiplier when the rule fires
  double improvement_threshold = 0.01;  // plateau rule: relative improvement below this decays
};

struct OptimizerState {
  Gradients velocity;
  double base_lr = 0.1;
  LrScales lr_scale;
  double momentum = 0.99;
  AnnealConfig anneal;
  std::optional<double> best_valid_cost;
  std::optional<double> clip_threshold;

  static OptimizerState create(const ModelParams& p, double base_lr, double momentum) {
    OptimizerState opt;
    opt.velocity = Gradients::zeros_like(p);
    opt.base_lr = base_lr;
    opt.momentum = momentum;
    if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must be in [0, 1)");
    return opt;
  }
};

struct RegularizerConfig {
  double dropout_prob = 0.5;  // probability of dropping a unit on the decoding path
  std::optional<double> column_norm_target;  // 15 is the cross-validated value when enabled
  std::optional<std::pair<double, double>> lcu_bounds;  // overrides the model's own bounds
  double diagonal_epsilon = 1e-4;  // keep-away margin from |r| = 1
  std::optional<double> l1_penalty;
};

// Tokens averaged over by the momentum filter: segment_tokens / (1 - mu).
inline double effective_average_horizon(int64_t segment_tokens, double momentum) {
  return static_cast<double>(segment_tokens) / (1.0 - momentum);
}

// ---------------------------------------------------------------------------
// Dropout masks

// Bernoulli 0/1 vector; each unit is dropped (0) independently with
// probability prob.
inline Vector sample_dropout_mask(Index h, double prob, Rng& rng) {
  if (!(prob >= 0.0 && prob < 1.0)) throw UsageError("dropout probability must be in [0, 1)");
  Vector mask(h);
  for (Index i = 0; i < h; ++i) mask[i] = rng.uniform() < prob ? 0.0 : 1.0;
  return mask;
}

// ---------------------------------------------------------------------------
// Constraint projection

// Clamps the diagonal recurrence into the open stability interval, holds
// LCU entries inside their configured band, and restores structural zeros
// of the block variant. Applied after every parameter update.
inline void project_constraints(ModelParams& p, const RegularizerConfig& cfg) {
  if (p.recurrent_kind == RecurrentKind::diagonal) {
    const double limit = 1.0 - cfg.diagonal_epsilon;
    double lcu_lower = 0.0, lcu_upper = 0.0;
    Index n_long = 0;
    if (p.lcu) {
      n_long = p.lcu->n_long;
      lcu_lower = p.lcu->lower;
      lcu_upper = p.lcu->upper;
      if (cfg.lcu_bounds) {
        lcu_lower = cfg.lcu_bounds->first;
        lcu_upper = cfg.lcu_bounds->second;
      }
      lcu_upper = std::min(lcu_upper, limit);
    }
    for (Index i = 0; i < p.r.size(); ++i) {
      if (i < n_long)
        p.r[i] = std::clamp(p.r[i], lcu_lower, lcu_upper);
      else
        p.r[i] = std::clamp(p.r[i], -limit, limit);
    }
  } else if (p.block) {
    apply_block_mask(p.R, *p.block);
  }
}

// ---------------------------------------------------------------------------
// Column normalization

// Rescales every nonzero column to the target L2 norm; all-zero columns
// are left unchanged with a warning.
inline void column_normalize(Matrix& m, double target) {
  if (!(target > 0.0)) throw UsageError("column norm target must be positive");
  bool warned = false;
  for (Index j = 0; j < m.cols(); ++j) {
    double n = m.col(j).norm();
    if (n == 0.0) {
      if (!warned) {
        std::cerr << "warning: column_normalize skipped an all-zero column\n";
        warned = true;
      }
      continue;
    }
    m.col(j) *= target / n;
  }
}

// CN is per hidden unit: the incoming weights of unit i are row i of the
// H x V encoder, its outgoing weights are column i of the V x H decoder.
inline void normalize_hidden_unit_weights(ModelParams& p, double target) {
  if (!(target > 0.0)) throw UsageError("column norm target must be positive");
  for (Index i = 0; i < p.W.rows(); ++i) {
    double n = p.W.row(i).norm();
    if (n > 0.0) p.W.row(i) *= target / n;
  }
  column_normalize(p.Z, target);
}

// ---------------------------------------------------------------------------
// Momentum SGD

inline double global_grad_norm(const Gradients& g, const ModelParams& p) {
  double sq = 0.0;
  for (const auto& ref : tensor_refs(g, p))
    for (Index i = 0; i < ref.size; ++i) sq += ref.data[i] * ref.data[i];
  return std::sqrt(sq);
}

// One heavy-ball step: optional global-norm clipping, v <- mu v - lr_g grad,
// theta <- theta + v, then constraint projection and column normalization.
// The optional L1 penalty enters as lambda * sign(theta) alongside the data
// gradient (it is not part of the checked likelihood objective).
inline void momentum_update(ModelParams& p, const Gradients& grads, OptimizerState& opt,
                            const RegularizerConfig& cfg) {
  double scale = 1.0;
  if (opt.clip_threshold) {
    double gn = global_grad_norm(grads, p);
    if (gn > *opt.clip_threshold) scale = *opt.clip_threshold / gn;
  }

  auto p_refs = tensor_refs(p);
  auto g_refs = tensor_refs(grads, p);
  auto v_refs = tensor_refs(opt.velocity, p);
  if (p_refs.size() != g_refs.size() || p_refs.size() != v_refs.size())
    throw UsageError("optimizer state does not match parameter tensors");

  const double l1 = cfg.l1_penalty.value_or(0.0);
  for (size_t ti = 0; ti < p_refs.size(); ++ti) {
    const double lr = opt.base_lr * opt.lr_scale.of(p_refs[ti].group);
    double* theta = p_refs[ti].data;
    const double* grad = g_refs[ti].data;
    double* vel = v_refs[ti].data;
    for (Index i = 0; i < p_refs[ti].size; ++i) {
      double g = scale * grad[i];
      if (l1 != 0.0 && theta[i] != 0.0) g += l1 * (theta[i] > 0.0 ? 1.0 : -1.0);
      vel[i] = opt.momentum * vel[i] - lr * g;
      theta[i] += vel[i];
      if (!std::isfinite(theta[i]))
        throw NumericError(std::string("non-finite parameter in ") + p_refs[ti].name +
                           " after update");
    }
  }

  project_constraints(p, cfg);
  if (cfg.column_norm_target) normalize_hidden_unit_weights(p, *cfg.column_norm_target);
}

// ---------------------------------------------------------------------------
// Learning-rate annealing

// plateau (default): decay when the relative improvement over the best
// validation cost falls below the threshold. paper_literal: decay on every
// epoch whose validation cost decreased.
inline void anneal_step(OptimizerState& opt, double valid_cost) {
  if (!opt.best_valid_cost) {
    opt.best_valid_cost = valid_cost;
    return;
  }
  const double best = *opt.best_valid_cost;
  bool decay = false;
  if (opt.anneal.rule == AnnealRule::paper_literal) {
    decay = valid_cost < best;
  } else {
    decay = (best - valid_cost) / best < opt.anneal.improvement_threshold;
  }
  if (decay) opt.base_lr *= opt.anneal.decay_factor;
  opt.best_valid_cost = std::min(best, valid_cost);
}

}  // namespace irlm
