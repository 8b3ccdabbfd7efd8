#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "irlm/corpus.hpp"
#include "irlm/model.hpp"
#include "irlm/rng.hpp"
#include "irlm/types.hpp"

namespace irlm {

// ---------------------------------------------------------------------------
// Gradient container

enum class ParamGroup { encoder, decoder, recurrent_dense, recurrent_diagonal, skip };

struct Gradients {
  Matrix dW;
  Matrix dZ;
  Matrix dR;                      // dense and block variants
  Vector dr;                      // diagonal variant
  std::optional<Matrix> dR_skip;

  static Gradients zeros_like(const ModelParams& p) {
    Gradients g;
    g.dW = Matrix::Zero(p.W.rows(), p.W.cols());
    g.dZ = Matrix::Zero(p.Z.rows(), p.Z.cols());
    if (p.recurrent_kind == RecurrentKind::diagonal) {
      g.dr = Vector::Zero(p.r.size());
    } else {
      g.dR = Matrix::Zero(p.R.rows(), p.R.cols());
    }
    if (p.R_skip) g.dR_skip = Matrix::Zero(p.R_skip->rows(), p.R_skip->cols());
    return g;
  }
};

// Flat view over the tensors of a parameter set or gradient bundle, in a
// fixed order shared by both so they can be iterated in lockstep
// (optimizer updates, clipping, finite differences).
struct TensorRef {
  const char* name;
  ParamGroup group;
  double* data;
  Index size;
};

inline std::vector<TensorRef> tensor_refs(ModelParams& p) {
  std::vector<TensorRef> refs;
  refs.push_back({"W", ParamGroup::encoder, p.W.data(), p.W.size()});
  refs.push_back({"Z", ParamGroup::decoder, p.Z.data(), p.Z.size()});
  if (p.recurrent_kind == RecurrentKind::diagonal)
    refs.push_back({"r", ParamGroup::recurrent_diagonal, p.r.data(), p.r.size()});
  else
    refs.push_back({"R", ParamGroup::recurrent_dense, p.R.data(), p.R.size()});
  if (p.R_skip) refs.push_back({"R_skip", ParamGroup::skip, p.R_skip->data(), p.R_skip->size()});
  return refs;
}

inline std::vector<TensorRef> tensor_refs(Gradients& g, const ModelParams& p) {
  std::vector<TensorRef> refs;
  refs.push_back({"W", ParamGroup::encoder, g.dW.data(), g.dW.size()});
  refs.push_back({"Z", ParamGroup::decoder, g.dZ.data(), g.dZ.size()});
  if (p.recurrent_kind == RecurrentKind::diagonal)
    refs.push_back({"r", ParamGroup::recurrent_diagonal, g.dr.data(), g.dr.size()});
  else
    refs.push_back({"R", ParamGroup::recurrent_dense, g.dR.data(), g.dR.size()});
  if (g.dR_skip)
    refs.push_back({"R_skip", ParamGroup::skip, g.dR_skip->data(), g.dR_skip->size()});
  return refs;
}

struct ConstTensorRef {
  const char* name;
  ParamGroup group;
  const double* data;
  Index size;
};

inline std::vector<ConstTensorRef> tensor_refs(const Gradients& g, const ModelParams& p) {
  std::vector<ConstTensorRef> refs;
  refs.push_back({"W", ParamGroup::encoder, g.dW.data(), g.dW.size()});
  refs.push_back({"Z", ParamGroup::decoder, g.dZ.data(), g.dZ.size()});
  if (p.recurrent_kind == RecurrentKind::diagonal)
    refs.push_back({"r", ParamGroup::recurrent_diagonal, g.dr.data(), g.dr.size()});
  else
    refs.push_back({"R", ParamGroup::recurrent_dense, g.dR.data(), g.dR.size()});
  if (g.dR_skip)
    refs.push_back({"R_skip", ParamGroup::skip, g.dR_skip->data(), g.dR_skip->size()});
  return refs;
}

// ---------------------------------------------------------------------------
// Segments

// A contiguous slice of a token stream. A segment of n ids yields n-1
// predictions: consuming ids[t] predicts ids[t+1]. The final id is never
// consumed here; it is the first id of the next segment (segments overlap
// by one token), so state carried across segments covers every prediction
// in the stream exactly once.
struct SegmentView {
  std::span<const int32_t> ids;
  std::span<const uint8_t> word_start;
};

// [begin, end) index pairs covering a stream of n tokens with
// predictions_per_segment predictions each; consecutive ranges share one
// token per the SegmentView contract.
inline std::vector<std::pair<int64_t, int64_t>> segment_ranges(int64_t n,
                                                               int64_t predictions_per_segment) {
  if (predictions_per_segment < 1) throw UsageError("segment length must be >= 1");
  std::vector<std::pair<int64_t, int64_t>> out;
  for (int64_t begin = 0; begin + 1 < n; begin += predictions_per_segment)
    out.emplace_back(begin, std::min<int64_t>(begin + predictions_per_segment + 1, n));
  return out;
}

inline SegmentView segment_of(const EncodedCorpus& corpus, int64_t begin, int64_t end) {
  return SegmentView{
      std::span<const int32_t>(corpus.ids.data() + begin, static_cast<size_t>(end - begin)),
      std::span<const uint8_t>(corpus.word_start.data() + begin,
                               static_cast<size_t>(end - begin))};
}

inline SegmentView whole_stream(const EncodedCorpus& corpus) {
  return segment_of(corpus, 0, corpus.size());
}

// ---------------------------------------------------------------------------
// Shared forward trace

namespace detail {

struct ForwardTrace {
  Matrix states;   // H x P, states[.,t] = x after consuming ids[t]
  Matrix pre;      // H x P pre-activations
  Matrix prev;     // H x P, prev[.,t] = x before consuming ids[t]
  std::vector<int64_t> skip_src;  // per position: -2 none, -1 initial, else index
  Vector init_last_ws;
  HiddenState final_state;
};

inline ForwardTrace forward_segment(const ModelParams& p, const SegmentView& seg,
                                    const HiddenState& init) {
  const int64_t n = static_cast<int64_t>(seg.ids.size());
  if (n < 2) throw UsageError("segment must contain at least 2 ids");
  if (seg.word_start.size() != seg.ids.size())
    throw UsageError("segment ids and word_start lengths differ");
  const Index h = p.hidden();
  if (init.x.size() != h) throw UsageError("initial state does not match hidden dimension");
  const int64_t steps = n - 1;

  ForwardTrace tr;
  tr.states.resize(h, steps);
  tr.pre.resize(h, steps);
  tr.prev.resize(h, steps);
  tr.skip_src.assign(static_cast<size_t>(steps), -2);
  tr.init_last_ws = init.last_word_start;

  HiddenState state = init;
  int64_t last_ws_index = -1;  // -1: the carried-in last_word_start
  for (int64_t t = 0; t < steps; ++t) {
    const bool ws = seg.word_start[static_cast<size_t>(t)] != 0;
    tr.prev.col(t) = state.x;
    Vector pre = step_preactivation(p, state, seg.ids[static_cast<size_t>(t)], ws);
    if (p.R_skip && ws) tr.skip_src[static_cast<size_t>(t)] = last_ws_index;
    state.x = p.nonlinearity.apply(pre);
    tr.pre.col(t) = pre;
    tr.states.col(t) = state.x;
    if (ws) {
      state.last_word_start = state.x;
      last_ws_index = t;
    }
  }
  require_finite(tr.states, "forward_segment");
  tr.final_state = std::move(state);
  return tr;
}

inline Vector activation_derivative_column(const ModelParams& p, const ForwardTrace& tr,
                                           int64_t t) {
  const Index h = p.hidden();
  Vector d(h);
  switch (p.nonlinearity.kind) {
    case Activation::identity:
      d.setOnes();
      break;
    case Activation::logistic:
      // f' = x (1 - x) from the stored output
      d = tr.states.col(t).cwiseProduct(Vector::Ones(h) - tr.states.col(t));
      break;
    default:
      for (Index i = 0; i < h; ++i) d[i] = p.nonlinearity.derivative(tr.pre(i, t));
      break;
  }
  return d;
}

// Backpropagates decoder-path gradients dec (H x P, d loss / d x_t along
// the decoding path only) through the recurrence, accumulating into g.
// Truncation happens at the segment boundary: messages headed for the
// carried-in state or its word-start snapshot are dropped.
inline void backward_through_recurrence(const ModelParams& p, const SegmentView& seg,
                                        const ForwardTrace& tr, const Matrix& dec,
                                        Gradients& g) {
  const int64_t steps = tr.states.cols();
  const Index h = p.hidden();
  Matrix E(h, steps);
  Vector e_next = Vector::Zero(h);
  Vector pending;
  int64_t pending_target = -2;

  for (int64_t t = steps - 1; t >= 0; --t) {
    Vector grad_x = dec.col(t);
    if (t < steps - 1) grad_x += recurrent_transpose_apply(p, e_next);
    if (t == pending_target) {
      grad_x += pending;
      pending_target = -2;
    }
    Vector e = activation_derivative_column(p, tr, t).cwiseProduct(grad_x);
    const bool ws = seg.word_start[static_cast<size_t>(t)] != 0;
    if (p.R_skip && ws) {
      const int64_t src = tr.skip_src[static_cast<size_t>(t)];
      if (src == -1) {
        g.dR_skip->noalias() += e * tr.init_last_ws.transpose();
      } else if (src >= 0) {
        g.dR_skip->noalias() += e * tr.states.col(src).transpose();
        pending = p.R_skip->transpose() * e;
        pending_target = src;
      }
      // src == -2 cannot happen at a word start when R_skip is present
    }
    E.col(t) = e;
    g.dW.col(seg.ids[static_cast<size_t>(t)]) += e;
    e_next = std::move(e);
  }

  if (p.recurrent_kind == RecurrentKind::diagonal) {
    g.dr += E.cwiseProduct(tr.prev).rowwise().sum();
  } else {
    g.dR.noalias() += E * tr.prev.transpose();
    if (p.block) apply_block_mask(g.dR, *p.block);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// BPTT with the full softmax

struct BpttResult {
  Gradients grads;
  double mean_nll = 0.0;
  HiddenState state;
};

// Exact gradients of the mean per-token negative log-likelihood over the
// segment's predictions, backpropagated through time. The reverse-time
// message at step t is f'(pre_t) .* (decoder term + R^T message_{t+1}),
// with additional messages along R_skip edges between word-start
// positions. dropout_masks, when given, is H x (n-1): the decoding path
// sees x .* mask per predicted position and gradients are masked
// accordingly; masks never enter the recurrence.
inline BpttResult bptt_gradients(const ModelParams& p, const SegmentView& seg,
                                 const HiddenState& init,
                                 const Matrix* dropout_masks = nullptr) {
  detail::ForwardTrace tr = detail::forward_segment(p, seg, init);
  const int64_t steps = tr.states.cols();

  if (dropout_masks &&
      (dropout_masks->rows() != tr.states.rows() || dropout_masks->cols() != steps))
    throw UsageError("dropout mask block has wrong shape");
  Matrix xdec = dropout_masks ? tr.states.cwiseProduct(*dropout_masks).eval() : tr.states;

  // Batched decoder: logits, softmax, loss and the (p - y)/P residual.
  Matrix logits = p.Z * xdec;  // V x P
  require_finite(logits, "bptt_gradients");
  double nll = 0.0;
  for (int64_t t = 0; t < steps; ++t) {
    auto col = logits.col(t);
    double m = col.maxCoeff();
    double sum = (col.array() - m).exp().sum();
    double lse = m + std::log(sum);
    nll += lse - col[seg.ids[static_cast<size_t>(t + 1)]];
    col = ((col.array() - m).exp() / sum).matrix();  // now probabilities
  }
  nll /= static_cast<double>(steps);

  Matrix& resid = logits;  // reuse storage: residual (p - y) / P
  for (int64_t t = 0; t < steps; ++t)
    resid(seg.ids[static_cast<size_t>(t + 1)], t) -= 1.0;
  resid /= static_cast<double>(steps);

  BpttResult out;
  out.grads = Gradients::zeros_like(p);
  out.mean_nll = nll;
  out.state = tr.final_state;

  out.grads.dZ.noalias() = resid * xdec.transpose();
  Matrix dec = p.Z.transpose() * resid;  // H x P
  if (dropout_masks) dec = dec.cwiseProduct(*dropout_masks);
  detail::backward_through_recurrence(p, seg, tr, dec, out.grads);
  return out;
}

// ---------------------------------------------------------------------------
// Noise-contrastive estimation

// Noise distribution and sample count for NCE. The model's normalization
// constant is fixed to 1 per context, so raw decoder scores stand in for
// log-probabilities.
struct NceConfig {
  int k = 25;
  Vector noise;  // probability over V; every entry > 0, sums to 1

  std::vector<double> cdf;  // inclusive prefix sums, built by finalize()

  void finalize() {
    if (k < 1) throw UsageError("nce k must be >= 1");
    if (noise.size() == 0) throw UsageError("nce noise distribution is empty");
    // Kahan summation: the normalization check must be more accurate than
    // the 1e-12 tolerance it enforces.
    double total = 0.0, comp = 0.0;
    cdf.resize(static_cast<size_t>(noise.size()));
    for (Index i = 0; i < noise.size(); ++i) {
      if (!(noise[i] > 0.0)) throw UsageError("nce noise probabilities must all be positive");
      double y = noise[i] - comp;
      double t = total + y;
      comp = (t - total) - y;
      total = t;
      cdf[static_cast<size_t>(i)] = total;
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw UsageError("nce noise distribution must sum to 1");
    cdf.back() = 1.0;
  }

  int32_t sample(Rng& rng) const {
    double u = rng.uniform();
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    if (it == cdf.end()) --it;
    return static_cast<int32_t>(it - cdf.begin());
  }
};

// Unigram noise from an encoded training stream, unknown-token mass
// included. Ids that never occur get a count floor of one so that every
// noise probability is positive.
inline NceConfig make_nce_config(const EncodedCorpus& train, int k) {
  NceConfig cfg;
  cfg.k = k;
  std::vector<double> counts(static_cast<size_t>(train.vocab_size), 0.0);
  for (int32_t id : train.ids) counts[static_cast<size_t>(id)] += 1.0;
  double total = 0.0;
  for (double& c : counts) {
    if (c == 0.0) c = 1.0;
    total += c;
  }
  cfg.noise = Vector(train.vocab_size);
  for (Index i = 0; i < cfg.noise.size(); ++i)
    cfg.noise[i] = counts[static_cast<size_t>(i)] / total;
  cfg.finalize();
  return cfg;
}

inline double logistic_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

inline double log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

struct NceResult {
  Gradients grads;
  double mean_loss = 0.0;
  HiddenState state;
};

// Mean NCE loss over the segment's predictions and its exact gradients.
// Per position with true word w and noise draws w'_i, the loss is
// -[log sigma(delta(w)) + sum_i log(1 - sigma(delta(w'_i)))] with
// delta(v) = z_v . x_t - log(k * noise(v)). Only the sampled rows of Z
// receive decoder gradient; W and the recurrence are reached through the
// state as in BPTT. Noise draws are per position and deterministic given
// the seed.
inline NceResult nce_objective_and_gradients(const ModelParams& p, const SegmentView& seg,
                                             const HiddenState& init, const NceConfig& cfg,
                                             uint64_t seed) {
  if (cfg.cdf.empty()) throw UsageError("NceConfig::finalize() was not called");
  if (cfg.noise.size() != p.vocab_size())
    throw UsageError("nce noise distribution does not match vocabulary size");
  detail::ForwardTrace tr = detail::forward_segment(p, seg, init);
  const int64_t steps = tr.states.cols();
  const double inv_p = 1.0 / static_cast<double>(steps);

  NceResult out;
  out.grads = Gradients::zeros_like(p);
  out.state = tr.final_state;

  Rng rng(seed);
  Matrix dec = Matrix::Zero(p.hidden(), steps);
  const double log_k = std::log(static_cast<double>(cfg.k));
  double loss = 0.0;

  auto contribute = [&](int32_t v, int64_t t, bool is_data) {
    const auto x = tr.states.col(t);
    double score = p.Z.row(v).dot(x);
    double delta = score - (log_k + std::log(cfg.noise[v]));
    double sig = logistic_sigmoid(delta);
    double coeff;
    if (is_data) {
      loss += -log_sigmoid(delta);
      coeff = (sig - 1.0) * inv_p;
    } else {
      loss += -log_sigmoid(-delta);  // log(1 - sigma(delta))
      coeff = sig * inv_p;
    }
    out.grads.dZ.row(v) += coeff * x.transpose();
    dec.col(t) += coeff * p.Z.row(v).transpose();
  };

  for (int64_t t = 0; t < steps; ++t) {
    contribute(seg.ids[static_cast<size_t>(t + 1)], t, true);
    for (int i = 0; i < cfg.k; ++i) contribute(cfg.sample(rng), t, false);
  }
  if (!std::isfinite(loss)) throw NumericError("nce loss is non-finite");

  detail::backward_through_recurrence(p, seg, tr, dec, out.grads);
  out.mean_loss = loss * inv_p;
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference checking

struct FiniteDiffReport {
  struct TensorErr {
    std::string tensor;
    double worst_rel_err = 0.0;
    Index worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
  };
  std::vector<TensorErr> tensors;

  double worst() const {
    double w = 0.0;
    for (const auto& t : tensors) w = std::max(w, t.worst_rel_err);
    return w;
  }
};

// Central differences (f(t+e) - f(t-e)) / 2e per coordinate against the
// supplied analytic gradients. The objective must be deterministic: fix
// all masks and noise seeds before calling (violations are detected and
// reported as invalid usage). Structurally-zero block coordinates are
// excluded (they are not free parameters).
//
// Relative error is |a-b| / max(|a|, |b|, floor). The floor absorbs
// near-dead coordinates: differencing a magnitude-|f| objective in 64-bit
// at step e carries a few |f| eps / e of absolute noise (several 1e-10
// for log-likelihoods at step 1e-5), so coordinates below the floor are
// effectively checked against an absolute tolerance of tol * floor.
template <class Objective>
FiniteDiffReport finite_diff_check(Objective&& objective, ModelParams params,
                                   const Gradients& analytic, double step,
                                   double denominator_floor = 2e-5) {
  if (objective(std::as_const(params)) != objective(std::as_const(params)))
    throw UsageError("finite_diff_check requires a deterministic objective "
                     "(freeze dropout masks and noise seeds)");
  auto p_refs = tensor_refs(params);
  auto g_refs = tensor_refs(analytic, params);
  if (p_refs.size() != g_refs.size())
    throw UsageError("gradient bundle does not match parameter tensors");

  FiniteDiffReport report;
  const Index h = params.hidden();
  for (size_t ti = 0; ti < p_refs.size(); ++ti) {
    FiniteDiffReport::TensorErr err;
    err.tensor = p_refs[ti].name;
    const bool is_block_recurrent =
        params.block && std::string(p_refs[ti].name) == "R";
    for (Index i = 0; i < p_refs[ti].size; ++i) {
      if (is_block_recurrent) {
        // column-major storage
        Index row = i % h;
        Index col = i / h;
        if (params.block->masked(row, col)) continue;
      }
      double* coord = p_refs[ti].data + i;
      const double original = *coord;
      *coord = original + step;
      double f_plus = objective(std::as_const(params));
      *coord = original - step;
      double f_minus = objective(std::as_const(params));
      *coord = original;
      double numeric = (f_plus - f_minus) / (2.0 * step);
      double a = g_refs[ti].data[i];
      double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), denominator_floor});
      if (rel > err.worst_rel_err) {
        err.worst_rel_err = rel;
        err.worst_index = i;
        err.analytic = a;
        err.numeric = numeric;
      }
    }
    report.tensors.push_back(std::move(err));
  }
  return report;
}

}  // namespace irlm
