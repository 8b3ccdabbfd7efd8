#pragma once

// Shared test fixtures: deterministic synthetic corpora and small file
// utilities. The English-like generator produces Zipfian content words,
// high-frequency function words, sentence punctuation and slowly-switching
// topics, which is enough structure for overfitting/regularization and
// timescale experiments at desk scale.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "irlm/rng.hpp"

namespace testutil {

struct SyntheticTextSpec {
  int64_t tokens = 100000;
  uint64_t seed = 1;
  int content_words = 1500;
  int topics = 4;
  double function_prob = 0.35;
  double period_prob = 0.085;
  double topic_switch_prob = 0.004;
  double topic_boost = 6.0;
  double zipf_exponent = 1.05;
};

inline std::string make_synthetic_text(const SyntheticTextSpec& spec) {
  static const char* kFunctionWords[] = {
      "the", "of",  "and", "a",  "to",   "in",   "is",  "was", "he",   "she",
      "it",  "that", "for", "on", "with", "as",  "at",  "by",  "from", "this"};
  const int n_fn = 20;
  std::vector<double> fn_cdf(n_fn);
  double total = 0.0;
  for (int i = 0; i < n_fn; ++i) {
    total += 1.0 / (i + 1.5);
    fn_cdf[i] = total;
  }
  for (double& c : fn_cdf) c /= total;

  // per-topic cumulative weights over content words
  std::vector<std::vector<double>> topic_cdf(spec.topics);
  for (int t = 0; t < spec.topics; ++t) {
    topic_cdf[t].resize(spec.content_words);
    double sum = 0.0;
    for (int w = 0; w < spec.content_words; ++w) {
      double weight = 1.0 / std::pow(w + 2.0, spec.zipf_exponent);
      if (w % spec.topics == t) weight *= spec.topic_boost;
      sum += weight;
      topic_cdf[t][w] = sum;
    }
    for (double& c : topic_cdf[t]) c /= sum;
  }

  auto pick = [](const std::vector<double>& cdf, double u) {
    return static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
  };

  irlm::Rng rng(spec.seed);
  std::ostringstream out;
  int topic = 0;
  char buf[16];
  for (int64_t i = 0; i < spec.tokens; ++i) {
    if (rng.uniform() < spec.topic_switch_prob)
      topic = static_cast<int>(rng.uniform() * spec.topics);
    double u = rng.uniform();
    if (i > 0) out << ' ';
    if (u < spec.period_prob) {
      out << '.';
    } else if (u < spec.period_prob + spec.function_prob) {
      out << kFunctionWords[pick(fn_cdf, rng.uniform())];
    } else {
      std::snprintf(buf, sizeof(buf), "w%04d", pick(topic_cdf[topic], rng.uniform()));
      out << buf;
    }
  }
  return out.str();
}

// Long-context corpus: a sentence-initial topic token determines the
// marker token nine positions later; everything between is shared filler.
struct LcuCorpusSpec {
  int sentences = 4000;
  uint64_t seed = 21;
  int fillers = 12;
};

inline std::string make_lcu_sentence(irlm::Rng& rng, int topic, int fillers) {
  std::ostringstream s;
  s << (topic == 0 ? "topicA" : "topicB");
  char buf[8];
  for (int i = 0; i < 8; ++i) {
    std::snprintf(buf, sizeof(buf), "f%02d", static_cast<int>(rng.uniform() * fillers));
    s << ' ' << buf;
  }
  s << (topic == 0 ? " markA" : " markB") << " .";
  return s.str();
}

inline std::string make_lcu_text(const LcuCorpusSpec& spec) {
  irlm::Rng rng(spec.seed);
  std::ostringstream out;
  for (int i = 0; i < spec.sentences; ++i) {
    if (i > 0) out << ' ';
    out << make_lcu_sentence(rng, rng.uniform() < 0.5 ? 0 : 1, spec.fillers);
  }
  return out.str();
}

// Two-way questions in the five-candidate MRSC layout: one candidate
// carries the marker matching its topic, the other four are identical
// copies of the mismatched sentence (so chance performance is 50%).
struct LcuQuestionSet {
  std::string questions_tsv;
  std::string answers_tsv;
};

inline LcuQuestionSet make_lcu_questions(int count, uint64_t seed, int fillers) {
  irlm::Rng rng(seed);
  std::ostringstream q, a;
  char buf[8];
  for (int i = 0; i < count; ++i) {
    int topic = rng.uniform() < 0.5 ? 0 : 1;
    std::ostringstream fill;
    for (int t = 0; t < 8; ++t) {
      std::snprintf(buf, sizeof(buf), "f%02d", static_cast<int>(rng.uniform() * fillers));
      fill << ' ' << buf;
    }
    std::string topic_tok = topic == 0 ? "topicA" : "topicB";
    std::string right = topic == 0 ? "markA" : "markB";
    std::string wrong = topic == 0 ? "markB" : "markA";
    int correct_slot = static_cast<int>(rng.uniform() * 5);
    for (int c = 0; c < 5; ++c) {
      q << 'q' << i << '\t' << c << '\t' << topic_tok << fill.str() << ' '
        << (c == correct_slot ? right : wrong) << " .\n";
    }
    a << 'q' << i << '\t' << correct_slot << '\n';
  }
  return {q.str(), a.str()};
}

inline std::string make_cyclic_text(int64_t tokens) {
  static const char* syms[] = {"aa", "bb", "cc"};
  std::ostringstream out;
  for (int64_t i = 0; i < tokens; ++i) {
    if (i > 0) out << ' ';
    out << syms[i % 3];
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Files

inline std::filesystem::path make_temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("irlm_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
}

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace testutil
