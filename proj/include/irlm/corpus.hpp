#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "irlm/types.hpp"

namespace irlm {

enum class VocabMode { word, character };

inline const char* to_string(VocabMode m) {
  return m == VocabMode::word ? "word" : "character";
}

inline VocabMode vocab_mode_from_string(const std::string& s) {
  if (s == "word") return VocabMode::word;
  if (s == "character" || s == "char") return VocabMode::character;
  throw UsageError("unknown mode '" + s + "' (expected word|character)");
}

// ---------------------------------------------------------------------------
// UTF-8 handling

inline bool utf8_is_continuation(unsigned char c) { return (c & 0xC0) == 0x80; }

// Decodes the code point starting at text[pos]; advances pos past it.
// Rejects overlong forms, surrogates and out-of-range scalars.
inline bool utf8_next(std::string_view text, size_t& pos, uint32_t& cp, size_t& len) {
  unsigned char c0 = static_cast<unsigned char>(text[pos]);
  if (c0 < 0x80) {
    cp = c0;
    len = 1;
  } else if ((c0 & 0xE0) == 0xC0) {
    if (pos + 1 >= text.size()) return false;
    unsigned char c1 = static_cast<unsigned char>(text[pos + 1]);
    if (!utf8_is_continuation(c1)) return false;
    cp = (uint32_t(c0 & 0x1F) << 6) | (c1 & 0x3F);
    if (cp < 0x80) return false;
    len = 2;
  } else if ((c0 & 0xF0) == 0xE0) {
    if (pos + 2 >= text.size()) return false;
    unsigned char c1 = static_cast<unsigned char>(text[pos + 1]);
    unsigned char c2 = static_cast<unsigned char>(text[pos + 2]);
    if (!utf8_is_continuation(c1) || !utf8_is_continuation(c2)) return false;
    cp = (uint32_t(c0 & 0x0F) << 12) | (uint32_t(c1 & 0x3F) << 6) | (c2 & 0x3F);
    if (cp < 0x800 || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    len = 3;
  } else if ((c0 & 0xF8) == 0xF0) {
    if (pos + 3 >= text.size()) return false;
    unsigned char c1 = static_cast<unsigned char>(text[pos + 1]);
    unsigned char c2 = static_cast<unsigned char>(text[pos + 2]);
    unsigned char c3 = static_cast<unsigned char>(text[pos + 3]);
    if (!utf8_is_continuation(c1) || !utf8_is_continuation(c2) || !utf8_is_continuation(c3))
      return false;
    cp = (uint32_t(c0 & 0x07) << 18) | (uint32_t(c1 & 0x3F) << 12) |
         (uint32_t(c2 & 0x3F) << 6) | (c3 & 0x3F);
    if (cp < 0x10000 || cp > 0x10FFFF) return false;
    len = 4;
  } else {
    return false;
  }
  pos += len;
  return true;
}

inline void require_valid_utf8(std::string_view text) {
  size_t pos = 0;
  uint32_t cp;
  size_t len;
  while (pos < text.size()) {
    if (!utf8_next(text, pos, cp, len))
      throw DataError("invalid UTF-8 at byte offset " + std::to_string(pos));
  }
}

inline bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

// ---------------------------------------------------------------------------
// Vocabulary

struct VocabEntry {
  std::string token;
  uint64_t count = 0;
};

// token <-> id bijection. Id 0 is always the reserved unknown token; the
// remaining entries are sorted by descending count, ties broken by token.
class Vocabulary {
 public:
  static constexpr int32_t kUnkId = 0;
  static constexpr const char* kUnkToken = "<unk>";

  Vocabulary() = default;
  Vocabulary(std::vector<VocabEntry> entries, VocabMode mode)
      : entries_(std::move(entries)), mode_(mode) {
    index_.reserve(entries_.size());
    for (size_t i = 0; i < entries_.size(); ++i) {
      auto [it, inserted] = index_.emplace(entries_[i].token, static_cast<int32_t>(i));
      if (!inserted) throw DataError("duplicate vocabulary token '" + entries_[i].token + "'");
    }
  }

  int32_t size() const { return static_cast<int32_t>(entries_.size()); }
  VocabMode mode() const { return mode_; }
  const VocabEntry& entry(int32_t id) const { return entries_[static_cast<size_t>(id)]; }
  const std::string& token(int32_t id) const { return entry(id).token; }

  int32_t lookup(std::string_view tok) const {
    auto it = index_.find(std::string(tok));
    return it == index_.end() ? kUnkId : it->second;
  }

  bool contains(std::string_view tok) const { return index_.count(std::string(tok)) > 0; }

  // TSV serialization: one "token<TAB>count" line per entry, line index = id.
  void save(std::ostream& out) const {
    for (const auto& e : entries_) out << e.token << '\t' << e.count << '\n';
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open vocabulary file for writing: " + path);
    save(out);
    if (!out) throw DataError("failed writing vocabulary file: " + path);
  }

  static Vocabulary load(std::istream& in, VocabMode mode) {
    std::vector<VocabEntry> entries;
    std::string line;
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      size_t tab = line.rfind('\t');
      if (tab == std::string::npos) throw DataError("vocabulary line without TAB: '" + line + "'");
      VocabEntry e;
      e.token = line.substr(0, tab);
      try {
        e.count = std::stoull(line.substr(tab + 1));
      } catch (const std::exception&) {
        throw DataError("bad count in vocabulary line: '" + line + "'");
      }
      entries.push_back(std::move(e));
    }
    if (entries.empty()) throw DataError("empty vocabulary file");
    if (entries[0].token != kUnkToken)
      throw DataError("vocabulary does not start with the reserved unknown token");
    return Vocabulary(std::move(entries), mode);
  }

  static Vocabulary load_file(const std::string& path, VocabMode mode) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocabulary file: " + path);
    return load(in, mode);
  }

  // FNV-1a over the TSV serialization; used to bind checkpoints to the
  // vocabulary they were trained with.
  uint64_t content_hash() const {
    std::ostringstream os;
    save(os);
    const std::string s = os.str();
    uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    return h;
  }

  std::string content_hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(content_hash()));
    return std::string(buf);
  }

 private:
  std::vector<VocabEntry> entries_;
  std::unordered_map<std::string, int32_t> index_;
  VocabMode mode_ = VocabMode::word;
};

// ---------------------------------------------------------------------------
// Tokenization

namespace detail {

// Word mode: maximal runs of non-whitespace bytes.
template <class F>
void for_each_word(std::string_view text, F&& fn) {
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_ascii_space(text[i])) ++i;
    size_t start = i;
    while (i < text.size() && !is_ascii_space(text[i])) ++i;
    if (i > start) fn(text.substr(start, i - start));
  }
}

// Character mode: every code point is a token; ASCII whitespace is
// normalized to a single-space token. fn(token, is_word_start).
template <class F>
void for_each_character(std::string_view text, F&& fn) {
  size_t pos = 0;
  bool prev_was_space = true;  // stream start counts as a boundary
  while (pos < text.size()) {
    size_t start = pos;
    uint32_t cp;
    size_t len;
    if (!utf8_next(text, pos, cp, len))
      throw DataError("invalid UTF-8 at byte offset " + std::to_string(start));
    bool is_space = cp < 0x80 && is_ascii_space(static_cast<char>(cp));
    if (is_space) {
      fn(std::string_view(" "), false);
      prev_was_space = true;
    } else {
      fn(text.substr(start, len), prev_was_space);
      prev_was_space = false;
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Building and encoding

// Counts tokens, drops those occurring fewer than min_count times (their
// occurrences map to the unknown token at encode time) and assigns ids by
// descending count with lexicographic tie break. Counts stored are the
// pre-threshold occurrence counts; the unknown token stores count 0.
inline Vocabulary build_vocab(std::string_view text, VocabMode mode, uint64_t min_count) {
  if (min_count < 1) throw UsageError("min_count must be >= 1");
  require_valid_utf8(text);

  std::unordered_map<std::string, uint64_t> counts;
  if (mode == VocabMode::word) {
    detail::for_each_word(text, [&](std::string_view tok) { ++counts[std::string(tok)]; });
  } else {
    detail::for_each_character(text,
                               [&](std::string_view tok, bool) { ++counts[std::string(tok)]; });
  }
  if (counts.empty()) throw DataError("corpus contains no tokens");

  std::vector<VocabEntry> entries;
  entries.reserve(counts.size() + 1);
  for (auto& [tok, n] : counts) {
    if (n >= min_count) entries.push_back({tok, n});
  }
  std::sort(entries.begin(), entries.end(), [](const VocabEntry& a, const VocabEntry& b) {
    if (a.count != b.count) return a.count > b.count;
    return a.token < b.token;
  });
  entries.insert(entries.begin(), VocabEntry{Vocabulary::kUnkToken, 0});
  return Vocabulary(std::move(entries), mode);
}

// A token stream ready for modeling. word_start flags mark the first
// character of each whitespace-delimited word in character mode; in word
// mode every position is a word start.
struct EncodedCorpus {
  std::vector<int32_t> ids;
  std::vector<uint8_t> word_start;
  int32_t vocab_size = 0;

  int64_t size() const { return static_cast<int64_t>(ids.size()); }
};

inline EncodedCorpus encode(std::string_view text, const Vocabulary& vocab) {
  require_valid_utf8(text);
  EncodedCorpus out;
  out.vocab_size = vocab.size();
  if (vocab.mode() == VocabMode::word) {
    detail::for_each_word(text, [&](std::string_view tok) {
      out.ids.push_back(vocab.lookup(tok));
      out.word_start.push_back(1);
    });
  } else {
    detail::for_each_character(text, [&](std::string_view tok, bool ws) {
      out.ids.push_back(vocab.lookup(tok));
      out.word_start.push_back(ws ? 1 : 0);
    });
  }
  return out;
}

inline std::vector<std::string> decode(const EncodedCorpus& corpus, const Vocabulary& vocab) {
  std::vector<std::string> out;
  out.reserve(corpus.ids.size());
  for (int32_t id : corpus.ids) out.push_back(vocab.token(id));
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitFractions {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

// Contiguous splits in stream order. Rounding rule: floor for train and
// valid, remainder to test.
inline std::array<EncodedCorpus, 3> split_corpus(const EncodedCorpus& corpus,
                                                 SplitFractions f) {
  if (f.train <= 0 || f.valid <= 0 || f.test <= 0)
    throw UsageError("split fractions must be positive");
  if (std::abs(f.train + f.valid + f.test - 1.0) > 1e-9)
    throw UsageError("split fractions must sum to 1");

  const int64_t n = corpus.size();
  const int64_t n_train = static_cast<int64_t>(std::floor(static_cast<double>(n) * f.train));
  const int64_t n_valid = static_cast<int64_t>(std::floor(static_cast<double>(n) * f.valid));
  const int64_t n_test = n - n_train - n_valid;
  if (n_train == 0 || n_valid == 0 || n_test == 0)
    throw DataError("corpus too small for requested split (a split would be empty)");

  auto slice = [&](int64_t begin, int64_t len) {
    EncodedCorpus c;
    c.vocab_size = corpus.vocab_size;
    c.ids.assign(corpus.ids.begin() + begin, corpus.ids.begin() + begin + len);
    c.word_start.assign(corpus.word_start.begin() + begin,
                        corpus.word_start.begin() + begin + len);
    return c;
  };
  return {slice(0, n_train), slice(n_train, n_valid), slice(n_train + n_valid, n_test)};
}

// ---------------------------------------------------------------------------
// File helpers

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace irlm
