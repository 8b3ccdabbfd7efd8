#pragma once

#include <Eigen/Eigenvalues>
#include <array>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "irlm/grad.hpp"
#include "irlm/model.hpp"
#include "irlm/regopt.hpp"
#include "irlm/types.hpp"

namespace irlm {

// ---------------------------------------------------------------------------
// Perplexity evaluation

struct EvalReport {
  int64_t token_count = 0;   // predicted positions
  double mean_nll = 0.0;     // nats per token
  double perplexity = 1.0;   // exp(mean_nll)
  double bits_per_token = 0.0;
};

struct DropoutInference {
  enum class Kind { none, mean_mask, monte_carlo };
  Kind kind = Kind::none;
  double keep_prob = 0.5;  // mean-mask scale; E[x .* mask] = keep_prob * x
  int samples = 32;        // monte_carlo only
  uint64_t seed = 0;

  static DropoutInference none() { return {}; }
  static DropoutInference mean_mask(double keep) {
    return {Kind::mean_mask, keep, 32, 0};
  }
  static DropoutInference monte_carlo(int samples, uint64_t seed, double keep) {
    return {Kind::monte_carlo, keep, samples, seed};
  }
};

inline DropoutInference::Kind inference_kind_from_string(const std::string& s) {
  if (s == "none") return DropoutInference::Kind::none;
  if (s == "mean_mask") return DropoutInference::Kind::mean_mask;
  if (s == "mc") return DropoutInference::Kind::monte_carlo;
  throw UsageError("unknown inference mode '" + s + "' (expected none|mean_mask|mc)");
}

namespace detail {

inline double position_nll(const ModelParams& p, const Vector& x, int32_t target,
                           const DropoutInference& inf, Rng* mc_rng) {
  switch (inf.kind) {
    case DropoutInference::Kind::none: {
      Vector logits = p.Z * x;
      require_finite(logits, "evaluate");
      return log_sum_exp(logits) - logits[target];
    }
    case DropoutInference::Kind::mean_mask: {
      Vector logits = p.Z * (inf.keep_prob * x).eval();
      require_finite(logits, "evaluate");
      return log_sum_exp(logits) - logits[target];
    }
    case DropoutInference::Kind::monte_carlo: {
      // Average the normalized probabilities over sampled masks; the noisy
      // model is defined as this expectation.
      double p_avg = 0.0;
      for (int s = 0; s < inf.samples; ++s) {
        Vector mask(x.size());
        for (Index i = 0; i < x.size(); ++i)
          mask[i] = mc_rng->uniform() < inf.keep_prob ? 1.0 : 0.0;
        Vector logits = p.Z * x.cwiseProduct(mask).eval();
        require_finite(logits, "evaluate");
        p_avg += std::exp(logits[target] - log_sum_exp(logits));
      }
      return -std::log(p_avg / inf.samples);
    }
  }
  return 0.0;
}

}  // namespace detail

// Scores a segment per the SegmentView contract (consume ids[0..n-2],
// predict ids[1..n-1]), advancing state and accumulating into the running
// totals so that chunked and whole-stream evaluation agree.
inline void score_segment(const ModelParams& p, const SegmentView& seg, HiddenState& state,
                          const DropoutInference& inf, double& nll_sum, int64_t& count,
                          Rng* mc_rng = nullptr) {
  if (inf.kind == DropoutInference::Kind::monte_carlo && mc_rng == nullptr)
    throw UsageError("monte-carlo inference needs an rng stream");
  const int64_t n = static_cast<int64_t>(seg.ids.size());
  for (int64_t t = 0; t + 1 < n; ++t) {
    state = forward_step(p, state, seg.ids[static_cast<size_t>(t)],
                         seg.word_start[static_cast<size_t>(t)] != 0);
    nll_sum += detail::position_nll(p, state.x, seg.ids[static_cast<size_t>(t + 1)], inf, mc_rng);
    ++count;
  }
}

// Full-stream perplexity: state starts at zero and every position after
// the first is predicted.
inline EvalReport evaluate(const ModelParams& p, const EncodedCorpus& corpus,
                           const DropoutInference& inf = {}) {
  if (corpus.vocab_size != p.vocab_size())
    throw UsageError("corpus vocabulary size does not match the model");
  if (corpus.size() < 2) throw DataError("evaluation corpus needs at least 2 tokens");
  HiddenState state = HiddenState::zero(p.hidden());
  Rng mc_rng(inf.seed);
  double nll_sum = 0.0;
  int64_t count = 0;
  score_segment(p, whole_stream(corpus), state, inf, nll_sum, count,
                inf.kind == DropoutInference::Kind::monte_carlo ? &mc_rng : nullptr);
  EvalReport rep;
  rep.token_count = count;
  rep.mean_nll = nll_sum / static_cast<double>(count);
  rep.perplexity = std::exp(rep.mean_nll);
  rep.bits_per_token = rep.mean_nll / std::log(2.0);
  return rep;
}

// Test-time adaptation: after each segment is scored, one plain gradient
// step on that segment's likelihood updates a working copy of the
// parameters. Predictions are always made before the update; the caller's
// parameters are untouched. adapt_lr = 0 reproduces evaluate bit for bit.
inline EvalReport dynamic_evaluate(const ModelParams& params, const EncodedCorpus& corpus,
                                   double adapt_lr, int64_t segment_length = 50,
                                   const DropoutInference& inf = {}) {
  if (adapt_lr < 0.0) throw UsageError("adapt_lr must be >= 0");
  if (inf.kind == DropoutInference::Kind::monte_carlo)
    throw UsageError("dynamic evaluation does not support monte-carlo inference");
  if (corpus.vocab_size != params.vocab_size())
    throw UsageError("corpus vocabulary size does not match the model");
  if (corpus.size() < 2) throw DataError("evaluation corpus needs at least 2 tokens");

  ModelParams work = params;
  RegularizerConfig projection;  // stability clamp only
  projection.dropout_prob = 0.0;
  HiddenState state = HiddenState::zero(work.hidden());
  double nll_sum = 0.0;
  int64_t count = 0;

  for (auto [begin, end] : segment_ranges(corpus.size(), segment_length)) {
    SegmentView seg = segment_of(corpus, begin, end);
    HiddenState seg_start = state;
    score_segment(work, seg, state, inf, nll_sum, count);
    if (adapt_lr > 0.0) {
      BpttResult res;
      if (inf.kind == DropoutInference::Kind::mean_mask) {
        Matrix mask = Matrix::Constant(work.hidden(), static_cast<int64_t>(seg.ids.size()) - 1,
                                       inf.keep_prob);
        res = bptt_gradients(work, seg, seg_start, &mask);
      } else {
        res = bptt_gradients(work, seg, seg_start);
      }
      auto p_refs = tensor_refs(work);
      auto g_refs = tensor_refs(res.grads, work);
      for (size_t ti = 0; ti < p_refs.size(); ++ti)
        for (Index i = 0; i < p_refs[ti].size; ++i) {
          p_refs[ti].data[i] -= adapt_lr * g_refs[ti].data[i];
          if (!std::isfinite(p_refs[ti].data[i]))
            throw NumericError("dynamic evaluation diverged");
        }
      project_constraints(work, projection);
    }
  }

  EvalReport rep;
  rep.token_count = count;
  rep.mean_nll = nll_sum / static_cast<double>(count);
  rep.perplexity = std::exp(rep.mean_nll);
  rep.bits_per_token = rep.mean_nll / std::log(2.0);
  return rep;
}

// ---------------------------------------------------------------------------
// Timescale diagnostics (diagonal models)

struct TimescaleReport {
  struct Unit {
    double r = 0.0;
    double timescale = 0.0;  // -1 / log|r| in tokens
    bool oscillatory = false;  // r < 0
    bool saturated = false;    // |r| at or beyond the cap
  };
  std::vector<Unit> units;
  double max_timescale = 0.0;
  // Counts of units with timescale in [edge_i, edge_{i+1}); the last bin is
  // unbounded above.
  static constexpr std::array<double, 6> kHistogramEdges = {0.0, 1.0, 2.0, 5.0, 10.0, 50.0};
  std::array<int64_t, 6> histogram = {};
};

inline constexpr double kTimescaleCap = 1e6;

inline double unit_timescale(double r) {
  double a = std::abs(r);
  if (a == 0.0) return 0.0;  // continuity limit
  if (a >= 1.0) return kTimescaleCap;
  double t = -1.0 / std::log(a);
  return t > kTimescaleCap ? kTimescaleCap : t;
}

inline TimescaleReport timescale_report(const ModelParams& p) {
  if (p.recurrent_kind != RecurrentKind::diagonal)
    throw UsageError("timescale_report requires a diagonal model (use spectral_stats)");
  TimescaleReport rep;
  rep.units.reserve(static_cast<size_t>(p.r.size()));
  for (Index i = 0; i < p.r.size(); ++i) {
    TimescaleReport::Unit u;
    u.r = p.r[i];
    u.timescale = unit_timescale(u.r);
    u.oscillatory = u.r < 0.0;
    u.saturated = u.timescale >= kTimescaleCap;
    rep.max_timescale = std::max(rep.max_timescale, u.timescale);
    size_t bin = 0;
    for (size_t b = 0; b < rep.kHistogramEdges.size(); ++b)
      if (u.timescale >= rep.kHistogramEdges[b]) bin = b;
    ++rep.histogram[bin];
    rep.units.push_back(u);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Spectral diagnostics (dense models)

struct SpectralStats {
  double radius = 0.0;
  bool converged = false;
  int iterations = 0;
  // Exact spectrum is only computed when H <= 64.
  std::optional<double> fraction_above_090;
};

inline SpectralStats spectral_stats(const ModelParams& p, double tolerance = 1e-8,
                                    int max_iterations = 10000) {
  if (p.recurrent_kind == RecurrentKind::diagonal)
    throw UsageError("spectral_stats requires a dense model (use timescale_report)");
  SpectralStats stats;
  const Index h = p.R.rows();

  Rng rng(12345);
  Vector v(h);
  for (Index i = 0; i < h; ++i) v[i] = rng.uniform(-1.0, 1.0);
  v.normalize();
  double prev_est = 0.0;
  for (int it = 0; it < max_iterations; ++it) {
    Vector w = p.R * v;
    double est = w.norm();
    stats.iterations = it + 1;
    if (est == 0.0) {  // nilpotent directions collapsed
      stats.radius = 0.0;
      stats.converged = true;
      break;
    }
    v = w / est;
    if (it > 0 && std::abs(est - prev_est) <= tolerance * std::max(1.0, est)) {
      stats.radius = est;
      stats.converged = true;
      break;
    }
    prev_est = est;
    stats.radius = est;
  }

  if (h <= 64) {
    Eigen::EigenSolver<Matrix> solver(p.R, /*computeEigenvectors=*/false);
    const auto& eig = solver.eigenvalues();
    double max_abs = 0.0;
    int64_t above = 0;
    for (Index i = 0; i < eig.size(); ++i) {
      double a = std::abs(eig[i]);
      max_abs = std::max(max_abs, a);
      if (a > 0.9) ++above;
    }
    stats.fraction_above_090 = static_cast<double>(above) / static_cast<double>(h);
    if (!stats.converged) stats.radius = max_abs;  // exact value available anyway
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Sentence completion

struct CompletionQuestion {
  std::string qid;
  std::array<std::vector<int32_t>, 5> candidates;  // MRSC format: exactly five
  std::optional<int> answer;                       // 0..4
};

enum class CompletionMode { full, lcu_only };

inline CompletionMode completion_mode_from_string(const std::string& s) {
  if (s == "full") return CompletionMode::full;
  if (s == "lcu_only" || s == "lcu-only") return CompletionMode::lcu_only;
  throw UsageError("unknown completion mode '" + s + "' (expected full|lcu_only)");
}

struct CompletionResult {
  struct Item {
    std::string qid;
    int chosen = 0;
    std::array<double, 5> scores{};
  };
  std::vector<Item> items;
  std::optional<double> accuracy;  // present when any question carries an answer
};

// full: total log-likelihood of each candidate sentence, state reset to
// zero per candidate. lcu_only: short-context coordinates of the state are
// zeroed before decoding and the raw (unnormalized) logits are summed.
// Ties pick the lowest candidate index. inference_scale multiplies the
// representation before decoding in full mode (mean-mask inference for
// dropout-trained models); it does not affect lcu_only rankings and is
// ignored there.
inline CompletionResult score_completions(const ModelParams& p,
                                          const std::vector<CompletionQuestion>& questions,
                                          CompletionMode mode, double inference_scale = 1.0) {
  if (mode == CompletionMode::lcu_only && !p.lcu)
    throw UsageError("lcu_only scoring requires a model with long-context units");

  CompletionResult result;
  int64_t answered = 0, correct = 0;
  for (const auto& q : questions) {
    CompletionResult::Item item;
    item.qid = q.qid;
    for (int c = 0; c < 5; ++c) {
      const auto& toks = q.candidates[static_cast<size_t>(c)];
      if (toks.empty()) throw DataError("empty candidate in question " + q.qid);
      HiddenState state = HiddenState::zero(p.hidden());
      double score = 0.0;
      for (size_t t = 0; t + 1 < toks.size(); ++t) {
        state = forward_step(p, state, toks[t], true);
        const int32_t next = toks[t + 1];
        if (next < 0 || next >= p.vocab_size())
          throw DataError("candidate token id out of range in question " + q.qid);
        if (mode == CompletionMode::full) {
          Vector logits = p.Z * (inference_scale * state.x).eval();
          require_finite(logits, "score_completions");
          score += logits[next] - log_sum_exp(logits);
        } else {
          Vector masked = state.x;
          masked.tail(p.lcu->n_short).setZero();
          score += p.Z.row(next).dot(masked);
        }
      }
      item.scores[static_cast<size_t>(c)] = score;
      if (score > item.scores[static_cast<size_t>(item.chosen)]) item.chosen = c;
    }
    if (q.answer) {
      ++answered;
      if (*q.answer == item.chosen) ++correct;
    }
    result.items.push_back(std::move(item));
  }
  if (answered > 0)
    result.accuracy = static_cast<double>(correct) / static_cast<double>(answered);
  return result;
}

// ---------------------------------------------------------------------------
// Question / answer file formats

// Questions: lines "qid<TAB>candidate_index<TAB>space-separated tokens",
// five candidates per qid. Tokens outside the vocabulary map to <unk>.
inline std::vector<CompletionQuestion> read_questions(std::istream& in,
                                                      const Vocabulary& vocab) {
  std::map<std::string, std::array<std::optional<std::vector<int32_t>>, 5>> partial;
  std::vector<std::string> order;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    size_t t1 = line.find('\t');
    size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw DataError("malformed question line " + std::to_string(line_no));
    std::string qid = line.substr(0, t1);
    int idx;
    try {
      idx = std::stoi(line.substr(t1 + 1, t2 - t1 - 1));
    } catch (const std::exception&) {
      throw DataError("bad candidate index on question line " + std::to_string(line_no));
    }
    if (idx < 0 || idx > 4)
      throw DataError("candidate index out of range on line " + std::to_string(line_no));
    std::vector<int32_t> ids;
    detail::for_each_word(std::string_view(line).substr(t2 + 1),
                          [&](std::string_view tok) { ids.push_back(vocab.lookup(tok)); });
    if (ids.empty()) throw DataError("empty candidate on line " + std::to_string(line_no));
    if (partial.find(qid) == partial.end()) order.push_back(qid);
    auto& slots = partial[qid];
    if (slots[static_cast<size_t>(idx)])
      throw DataError("duplicate candidate " + std::to_string(idx) + " for question " + qid);
    slots[static_cast<size_t>(idx)] = std::move(ids);
  }

  std::vector<CompletionQuestion> questions;
  for (const auto& qid : order) {
    CompletionQuestion q;
    q.qid = qid;
    const auto& slots = partial[qid];
    for (int c = 0; c < 5; ++c) {
      if (!slots[static_cast<size_t>(c)])
        throw DataError("question " + qid + " does not have exactly 5 candidates");
      q.candidates[static_cast<size_t>(c)] = *slots[static_cast<size_t>(c)];
    }
    questions.push_back(std::move(q));
  }
  if (questions.empty()) throw DataError("no questions found");
  return questions;
}

// Answers: lines "qid<TAB>correct_index".
inline void apply_answers(std::istream& in, std::vector<CompletionQuestion>& questions) {
  std::map<std::string, int> answers;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    size_t tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("malformed answer line: '" + line + "'");
    int idx;
    try {
      idx = std::stoi(line.substr(tab + 1));
    } catch (const std::exception&) {
      throw DataError("bad answer index: '" + line + "'");
    }
    if (idx < 0 || idx > 4) throw DataError("answer index out of range: '" + line + "'");
    answers[line.substr(0, tab)] = idx;
  }
  for (auto& q : questions) {
    auto it = answers.find(q.qid);
    if (it != answers.end()) q.answer = it->second;
  }
}

inline void write_completion_result(std::ostream& out, const CompletionResult& result) {
  for (const auto& item : result.items) {
    out << item.qid << '\t' << item.chosen;
    for (double s : item.scores) out << '\t' << s;
    out << '\n';
  }
  if (result.accuracy) out << "accuracy\t" << *result.accuracy << '\n';
}

}  // namespace irlm
