#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "irlm/grad.hpp"
#include "irlm/model.hpp"
#include "irlm/types.hpp"

namespace irlm {

// Checkpoint container: magic "IRLM01\n", UTF-8 header of "key=value"
// lines terminated by a blank line, then per-tensor records
// (u64le name length + name bytes, u64le rank, u64le dims, raw f32le data
// in row-major order). Training arithmetic is 64-bit; storage is 32-bit.

inline constexpr char kCheckpointMagic[] = "IRLM01\n";

namespace detail {

inline void write_u64le(std::ostream& out, uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(buf), 8);
}

inline uint64_t read_u64le(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  if (!in) throw DataError("truncated checkpoint (while reading u64)");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void write_f32le(std::ostream& out, float f) {
  uint32_t bits;
  std::memcpy(&bits, &f, 4);
  unsigned char buf[4];
  for (int i = 0; i < 4; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(buf), 4);
}

inline float read_f32le(std::istream& in) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw DataError("truncated checkpoint (while reading f32)");
  uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(buf[i]) << (8 * i);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

}  // namespace detail

struct CheckpointTensor {
  std::string name;
  std::vector<uint64_t> dims;
  std::vector<float> data;  // row-major
};

struct Checkpoint {
  std::map<std::string, std::string> header;  // sorted, hence deterministic
  std::vector<CheckpointTensor> tensors;

  void add_matrix(const std::string& name, const Matrix& m) {
    CheckpointTensor t;
    t.name = name;
    t.dims = {static_cast<uint64_t>(m.rows()), static_cast<uint64_t>(m.cols())};
    t.data.reserve(static_cast<size_t>(m.size()));
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) t.data.push_back(static_cast<float>(m(i, j)));
    tensors.push_back(std::move(t));
  }

  void add_vector(const std::string& name, const Vector& v) {
    CheckpointTensor t;
    t.name = name;
    t.dims = {static_cast<uint64_t>(v.size())};
    t.data.reserve(static_cast<size_t>(v.size()));
    for (Index i = 0; i < v.size(); ++i) t.data.push_back(static_cast<float>(v[i]));
    tensors.push_back(std::move(t));
  }

  const CheckpointTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  Matrix matrix(const std::string& name) const {
    const CheckpointTensor* t = find(name);
    if (!t) throw DataError("checkpoint is missing tensor '" + name + "'");
    if (t->dims.size() != 2) throw DataError("tensor '" + name + "' is not a matrix");
    Matrix m(static_cast<Index>(t->dims[0]), static_cast<Index>(t->dims[1]));
    size_t k = 0;
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) m(i, j) = static_cast<double>(t->data[k++]);
    return m;
  }

  Vector vector(const std::string& name) const {
    const CheckpointTensor* t = find(name);
    if (!t) throw DataError("checkpoint is missing tensor '" + name + "'");
    if (t->dims.size() != 1) throw DataError("tensor '" + name + "' is not a vector");
    Vector v(static_cast<Index>(t->dims[0]));
    for (Index i = 0; i < v.size(); ++i) v[i] = static_cast<double>(t->data[static_cast<size_t>(i)]);
    return v;
  }

  void save(std::ostream& out) const {
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
    for (const auto& [k, v] : header) {
      if (k.find('=') != std::string::npos || k.find('\n') != std::string::npos)
        throw UsageError("invalid checkpoint header key: " + k);
      if (v.find('\n') != std::string::npos)
        throw UsageError("invalid checkpoint header value for key " + k);
      out << k << '=' << v << '\n';
    }
    out << '\n';
    for (const auto& t : tensors) {
      detail::write_u64le(out, t.name.size());
      out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
      detail::write_u64le(out, t.dims.size());
      uint64_t total = 1;
      for (uint64_t d : t.dims) {
        detail::write_u64le(out, d);
        total *= d;
      }
      if (total != t.data.size()) throw UsageError("tensor size mismatch in checkpoint");
      for (float f : t.data) detail::write_f32le(out, f);
    }
  }

  void save(const std::filesystem::path& path) const {
    // write + rename so a failed save never clobbers the last good file
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw DataError("cannot open checkpoint for writing: " + tmp.string());
      save(out);
      if (!out) throw DataError("failed writing checkpoint: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

  static Checkpoint load(std::istream& in) {
    char magic[sizeof(kCheckpointMagic) - 1];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
      throw DataError("not a checkpoint file (bad magic)");
    Checkpoint ckpt;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) break;
      size_t eq = line.find('=');
      if (eq == std::string::npos) throw DataError("malformed checkpoint header line: " + line);
      ckpt.header[line.substr(0, eq)] = line.substr(eq + 1);
    }
    while (in.peek() != std::char_traits<char>::eof()) {
      CheckpointTensor t;
      uint64_t name_len = detail::read_u64le(in);
      if (name_len > 1024) throw DataError("implausible tensor name length in checkpoint");
      t.name.resize(name_len);
      in.read(t.name.data(), static_cast<std::streamsize>(name_len));
      if (!in) throw DataError("truncated checkpoint (tensor name)");
      uint64_t rank = detail::read_u64le(in);
      if (rank > 8) throw DataError("implausible tensor rank in checkpoint");
      uint64_t total = 1;
      for (uint64_t d = 0; d < rank; ++d) {
        t.dims.push_back(detail::read_u64le(in));
        total *= t.dims.back();
      }
      t.data.resize(total);
      for (uint64_t i = 0; i < total; ++i) t.data[i] = detail::read_f32le(in);
      ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    return load(in);
  }
};

// ---------------------------------------------------------------------------
// Model <-> checkpoint

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

inline Checkpoint checkpoint_from_model(const ModelParams& p, const std::string& vocab_hash,
                                        VocabMode mode, int64_t step,
                                        const Gradients* velocity = nullptr) {
  Checkpoint ckpt;
  ckpt.header["format"] = "1";
  ckpt.header["arch"] = to_string(p.arch());
  ckpt.header["hidden"] = std::to_string(p.hidden());
  ckpt.header["vocab_size"] = std::to_string(p.vocab_size());
  ckpt.header["nonlinearity"] = to_string(p.nonlinearity.kind);
  ckpt.header["smoothing_a"] = format_double(p.nonlinearity.a);
  ckpt.header["mode"] = to_string(mode);
  ckpt.header["vocab_hash"] = vocab_hash;
  ckpt.header["step"] = std::to_string(step);
  if (p.block) {
    ckpt.header["block_h1"] = std::to_string(p.block->h1);
    ckpt.header["block_h2"] = std::to_string(p.block->h2);
  }
  if (p.lcu) {
    ckpt.header["lcu_n_short"] = std::to_string(p.lcu->n_short);
    ckpt.header["lcu_n_long"] = std::to_string(p.lcu->n_long);
    ckpt.header["lcu_lower"] = format_double(p.lcu->lower);
    ckpt.header["lcu_upper"] = format_double(p.lcu->upper);
  }

  ckpt.add_matrix("W", p.W);
  ckpt.add_matrix("Z", p.Z);
  if (p.recurrent_kind == RecurrentKind::diagonal)
    ckpt.add_vector("r", p.r);
  else
    ckpt.add_matrix("R", p.R);
  if (p.R_skip) ckpt.add_matrix("R_skip", *p.R_skip);
  if (velocity) {
    ckpt.add_matrix("vW", velocity->dW);
    ckpt.add_matrix("vZ", velocity->dZ);
    if (p.recurrent_kind == RecurrentKind::diagonal)
      ckpt.add_vector("vr", velocity->dr);
    else
      ckpt.add_matrix("vR", velocity->dR);
    if (velocity->dR_skip) ckpt.add_matrix("vR_skip", *velocity->dR_skip);
  }
  return ckpt;
}

struct LoadedModel {
  ModelParams params;
  VocabMode mode = VocabMode::word;
  std::string vocab_hash;
  int64_t step = 0;
  std::map<std::string, std::string> header;
  std::optional<Gradients> velocity;
};

inline const std::string& header_get(const std::map<std::string, std::string>& h,
                                     const std::string& key) {
  auto it = h.find(key);
  if (it == h.end()) throw DataError("checkpoint header is missing key '" + key + "'");
  return it->second;
}

inline LoadedModel model_from_checkpoint(const Checkpoint& ckpt) {
  LoadedModel out;
  out.header = ckpt.header;
  const Arch arch = arch_from_string(header_get(ckpt.header, "arch"));
  const Index hidden = std::stoll(header_get(ckpt.header, "hidden"));
  const Index vocab = std::stoll(header_get(ckpt.header, "vocab_size"));
  out.mode = vocab_mode_from_string(header_get(ckpt.header, "mode"));
  out.vocab_hash = header_get(ckpt.header, "vocab_hash");
  out.step = std::stoll(header_get(ckpt.header, "step"));

  ModelParams p;
  p.nonlinearity.kind = activation_from_string(header_get(ckpt.header, "nonlinearity"));
  p.nonlinearity.a = std::stod(header_get(ckpt.header, "smoothing_a"));
  p.W = ckpt.matrix("W");
  p.Z = ckpt.matrix("Z");
  if (p.W.rows() != hidden || p.W.cols() != vocab || p.Z.rows() != vocab ||
      p.Z.cols() != hidden)
    throw DataError("checkpoint tensor shapes do not match its header");

  switch (arch) {
    case Arch::irlm:
      p.recurrent_kind = RecurrentKind::diagonal;
      p.r = ckpt.vector("r");
      if (p.r.size() != hidden) throw DataError("checkpoint r has wrong size");
      break;
    case Arch::rnn:
    case Arch::skiprnn:
      p.recurrent_kind = RecurrentKind::dense;
      p.R = ckpt.matrix("R");
      if (p.R.rows() != hidden || p.R.cols() != hidden)
        throw DataError("checkpoint R has wrong shape");
      if (arch == Arch::skiprnn) {
        p.R_skip = ckpt.matrix("R_skip");
        if (p.R_skip->rows() != hidden || p.R_skip->cols() != hidden)
          throw DataError("checkpoint R_skip has wrong shape");
      }
      break;
    case Arch::block_rnn: {
      p.recurrent_kind = RecurrentKind::block;
      BlockMask b;
      b.h1 = std::stoll(header_get(ckpt.header, "block_h1"));
      b.h2 = std::stoll(header_get(ckpt.header, "block_h2"));
      if (b.h1 + b.h2 != hidden) throw DataError("checkpoint block sizes do not sum to hidden");
      p.block = b;
      p.R = ckpt.matrix("R");
      if (p.R.rows() != hidden || p.R.cols() != hidden)
        throw DataError("checkpoint R has wrong shape");
      break;
    }
  }

  if (ckpt.header.count("lcu_n_short")) {
    LcuConfig lcu;
    lcu.n_short = std::stoll(header_get(ckpt.header, "lcu_n_short"));
    lcu.n_long = std::stoll(header_get(ckpt.header, "lcu_n_long"));
    lcu.lower = std::stod(header_get(ckpt.header, "lcu_lower"));
    lcu.upper = std::stod(header_get(ckpt.header, "lcu_upper"));
    if (lcu.n_short + lcu.n_long != hidden)
      throw DataError("checkpoint lcu sizes do not sum to hidden");
    p.lcu = lcu;
  }

  if (ckpt.find("vW")) {
    Gradients vel = Gradients::zeros_like(p);
    vel.dW = ckpt.matrix("vW");
    vel.dZ = ckpt.matrix("vZ");
    if (p.recurrent_kind == RecurrentKind::diagonal)
      vel.dr = ckpt.vector("vr");
    else
      vel.dR = ckpt.matrix("vR");
    if (p.R_skip) vel.dR_skip = ckpt.matrix("vR_skip");
    out.velocity = std::move(vel);
  }

  out.params = std::move(p);
  return out;
}

}  // namespace irlm
