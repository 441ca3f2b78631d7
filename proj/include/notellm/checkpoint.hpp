#pragma once

// Versioned binary checkpoint.
//
//   bytes 0..7    "NLLMCKPT"
//   u32           format version (1)
//   u32           header length L
//   L bytes       header text: "key=value" config lines, then one
//                 "tensor <name> <rows> <cols>" line per tensor
//   payload       float32 little-endian, tensors in header order, row-major
//
// The fingerprint of a checkpoint is FNV-1a over its full byte image.

#include <bit>
#include <cstdint>
#include <cstring>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "notellm/common.hpp"
#include "notellm/model.hpp"

namespace notellm {

inline constexpr char kCheckpointMagic[8] = {'N', 'L', 'L', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class Reader {
 public:
  Reader(std::string_view bytes, std::string what) : b_(bytes), what_(std::move(what)) {}
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw Error(what_ + ": truncated file");
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = b_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() {
    auto s = take(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
    return v;
  }
  std::uint64_t u64() {
    auto s = take(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[static_cast<std::size_t>(i)]);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::string_view b_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string model_config_text(const ModelConfig& c) {
  std::string s;
  s += "vocab_size=" + std::to_string(c.vocab_size) + "\n";
  s += "hidden_dim=" + std::to_string(c.hidden_dim) + "\n";
  s += "n_layers=" + std::to_string(c.n_layers) + "\n";
  s += "n_heads=" + std::to_string(c.n_heads) + "\n";
  s += "max_seq_len=" + std::to_string(c.max_seq_len) + "\n";
  s += "embed_dim=" + std::to_string(c.embed_dim) + "\n";
  s += "ffn_dim=" + std::to_string(c.ffn()) + "\n";
  return s;
}

template <typename T>
std::string serialize_checkpoint(const ModelParams<T>& p) {
  std::string header = model_config_text(p.config);
  p.for_each([&](const std::string& name, const Mat<T>& m) {
    header += "tensor " + name + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
  });
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  p.for_each([&](const std::string&, const Mat<T>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) detail::put_f32(out, static_cast<float>(m.data()[i]));
  });
  return out;
}

inline ModelParams<float> parse_checkpoint(std::string_view bytes) {
  detail::Reader r(bytes, "checkpoint");
  if (r.take(8) != std::string_view(kCheckpointMagic, 8)) throw Error("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw Error("checkpoint: unsupported version " + std::to_string(version));
  const auto header = std::string(r.take(r.u32()));

  std::map<std::string, int> fields;
  std::vector<std::string> tensor_lines;
  for (const auto& line : split(header, '\n')) {
    if (line.empty()) continue;
    if (line.rfind("tensor ", 0) == 0) {
      tensor_lines.push_back(line);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("checkpoint: bad header line '" + line + "'");
    fields[line.substr(0, eq)] = std::stoi(line.substr(eq + 1));
  }
  auto get = [&](const char* k) {
    auto it = fields.find(k);
    if (it == fields.end()) throw Error(std::string("checkpoint: header missing '") + k + "'");
    return it->second;
  };
  ModelConfig c;
  c.vocab_size = get("vocab_size");
  c.hidden_dim = get("hidden_dim");
  c.n_layers = get("n_layers");
  c.n_heads = get("n_heads");
  c.max_seq_len = get("max_seq_len");
  c.embed_dim = get("embed_dim");
  c.ffn_dim = get("ffn_dim");

  auto p = ModelParams<float>::zeros(c);
  std::size_t k = 0;
  p.for_each([&](const std::string& name, Mat<float>& m) {
    if (k >= tensor_lines.size()) throw Error("checkpoint: missing tensor " + name);
    const auto cols = split_whitespace(tensor_lines[k++]);
    if (cols.size() != 4 || cols[1] != name || std::stol(cols[2]) != m.rows() || std::stol(cols[3]) != m.cols())
      throw Error("checkpoint: tensor table does not match config at " + name);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = r.f32();
  });
  if (k != tensor_lines.size()) throw Error("checkpoint: unexpected extra tensors");
  if (r.remaining() != 0) throw Error("checkpoint: trailing bytes");
  return p;
}

template <typename T>
void save_checkpoint(const std::string& path, const ModelParams<T>& p) {
  write_file(path, serialize_checkpoint(p));
}

struct LoadedCheckpoint {
  ModelParams<float> params;
  std::uint64_t fingerprint = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  const auto bytes = read_file(path);
  return {parse_checkpoint(bytes), fnv1a64(bytes)};
}

}  // namespace notellm
