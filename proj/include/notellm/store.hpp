#pragma once

// Precomputed embedding store.
//
//   bytes 0..7    "NLLMSTOR"
//   u32           format version (1)
//   u32           d
//   u64           count
//   u64           fingerprint of the producing checkpoint
//   count x       u32 id length + id bytes
//   count*d       float32 little-endian, one row per note in id-table order

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "notellm/checkpoint.hpp"
#include "notellm/corpus.hpp"
#include "notellm/eval.hpp"

namespace notellm {

inline constexpr char kStoreMagic[8] = {'N', 'L', 'L', 'M', 'S', 'T', 'O', 'R'};
inline constexpr std::uint32_t kStoreVersion = 1;

struct EmbeddingStore {
  std::uint64_t fingerprint = 0;
  std::vector<std::string> ids;
  Mat<float> vectors;  // count x d

  std::size_t size() const { return ids.size(); }
  int dim() const { return static_cast<int>(vectors.cols()); }
};

inline std::string serialize_store(const EmbeddingStore& s) {
  if (static_cast<Eigen::Index>(s.ids.size()) != s.vectors.rows()) throw Error("store: id/row count mismatch");
  std::string out(kStoreMagic, sizeof kStoreMagic);
  detail::put_u32(out, kStoreVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(s.vectors.cols()));
  detail::put_u64(out, s.ids.size());
  detail::put_u64(out, s.fingerprint);
  for (const auto& id : s.ids) {
    detail::put_u32(out, static_cast<std::uint32_t>(id.size()));
    out += id;
  }
  for (Eigen::Index i = 0; i < s.vectors.size(); ++i) detail::put_f32(out, s.vectors.data()[i]);
  return out;
}

inline EmbeddingStore parse_store(std::string_view bytes) {
  detail::Reader r(bytes, "store");
  if (r.take(8) != std::string_view(kStoreMagic, 8)) throw Error("store: bad magic");
  const auto version = r.u32();
  if (version != kStoreVersion) throw Error("store: unsupported version " + std::to_string(version));
  const auto d = r.u32();
  const auto count = r.u64();
  EmbeddingStore s;
  s.fingerprint = r.u64();
  if (d == 0) throw Error("store: zero dimension");
  std::set<std::string> seen;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string id(r.take(r.u32()));
    if (!seen.insert(id).second) throw Error("store: duplicate id " + id);
    s.ids.push_back(std::move(id));
  }
  r.need(count * d * 4);
  s.vectors.resize(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(d));
  for (Eigen::Index i = 0; i < s.vectors.size(); ++i) s.vectors.data()[i] = r.f32();
  if (r.remaining() != 0) throw Error("store: trailing bytes");
  return s;
}

inline EmbeddingStore build_store(const ModelParams<float>& p, std::uint64_t fingerprint, const Corpus& corpus,
                                  const TruncationConfig& trunc = {}) {
  EmbeddingStore s;
  s.fingerprint = fingerprint;
  s.ids = note_ids(corpus.notes());
  s.vectors = embed_pool(p, corpus.notes(), trunc);
  return s;
}

inline void write_store(const std::string& path, const EmbeddingStore& s) { write_file(path, serialize_store(s)); }
inline EmbeddingStore load_store(const std::string& path) { return parse_store(read_file(path)); }

}  // namespace notellm
