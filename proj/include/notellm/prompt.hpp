#pragma once

// Byte-level tokenizer and the two note compression prompt templates
// (category generation and hashtag generation).

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "notellm/common.hpp"
#include "notellm/corpus.hpp"

namespace notellm {

using TokenId = std::int32_t;

struct SpecialTokens {
  static constexpr TokenId kBos = 256;
  static constexpr TokenId kEos = 257;
  static constexpr TokenId kEmb = 258;
  static constexpr TokenId kPad = 259;
  static constexpr TokenId kVocabSize = 260;
};

inline bool is_special(TokenId t) { return t >= SpecialTokens::kBos; }

inline std::vector<TokenId> tokenize(std::string_view text) {
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<TokenId>(c));
  return ids;
}

// Special tokens are rendered as "[BOS]", "[EOS]", "[EMB]", "[PAD]".
inline std::string decode(std::span<const TokenId> ids) {
  std::string out;
  for (TokenId t : ids) {
    if (t >= 0 && t < 256) {
      out += static_cast<char>(static_cast<unsigned char>(t));
    } else {
      switch (t) {
        case SpecialTokens::kBos: out += "[BOS]"; break;
        case SpecialTokens::kEos: out += "[EOS]"; break;
        case SpecialTokens::kEmb: out += "[EMB]"; break;
        case SpecialTokens::kPad: out += "[PAD]"; break;
        default: throw Error("token id out of range: " + std::to_string(t));
      }
    }
  }
  return out;
}

enum class TaskKind { kCategory, kHashtag };

inline const char* task_name(TaskKind k) { return k == TaskKind::kCategory ? "category" : "hashtag"; }

struct TruncationConfig {
  std::size_t max_title_tokens = 20;
  std::size_t max_content_tokens = 80;

  void validate() const {
    if (max_title_tokens < 1 || max_content_tokens < 1) throw Error("truncation limits must be >= 1");
  }
};

// A rendered, tokenized prompt.
//   tokens[0] == BOS, tokens.back() == EOS (for generation prompts)
//   tokens[compression_pos + 1] == EMB
//   [output_begin, output_end) covers the output text plus the closing EOS
struct PromptSample {
  std::vector<TokenId> tokens;
  std::size_t compression_pos = 0;
  std::size_t output_begin = 0;
  std::size_t output_end = 0;
  TaskKind task = TaskKind::kCategory;
  std::size_t hashtag_count = 0;
  std::string target;  // untokenized output text

  std::size_t emb_pos() const { return compression_pos + 1; }
  std::size_t output_size() const { return output_end - output_begin; }
  std::span<const TokenId> prefix() const { return {tokens.data(), output_begin}; }
};

inline std::size_t locate_compression_pos(std::span<const TokenId> ids) {
  std::size_t found = 0, count = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == SpecialTokens::kEmb) {
      found = i;
      ++count;
    }
  }
  if (count == 0) throw Error("sequence has no [EMB] token");
  if (count > 1) throw Error("sequence has " + std::to_string(count) + " [EMB] tokens");
  if (found == 0) throw Error("[EMB] token has no predecessor");
  return found - 1;
}

namespace detail {

inline std::string truncate_bytes(std::string_view s, std::size_t max_tokens) {
  return std::string(s.substr(0, std::min(s.size(), max_tokens)));
}

inline std::string join(std::span<const std::string> parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

inline constexpr std::string_view kInstructionHead =
    "Extract the note information in json format, compress it into one word for recommendation, and generate ";
inline constexpr std::string_view kCompression = " The compression word is:\"";

// [BOS] head [EMB] tail output [EOS]; with_output=false
// stops right after [EMB].
inline PromptSample assemble(std::string_view head, std::string_view tail, std::string_view output,
                             bool with_output) {
  PromptSample s;
  s.tokens.push_back(SpecialTokens::kBos);
  auto h = tokenize(head);
  s.tokens.insert(s.tokens.end(), h.begin(), h.end());
  s.compression_pos = s.tokens.size() - 1;
  s.tokens.push_back(SpecialTokens::kEmb);
  if (!with_output) {
    s.output_begin = s.output_end = s.tokens.size();
    return s;
  }
  auto t = tokenize(tail);
  s.tokens.insert(s.tokens.end(), t.begin(), t.end());
  s.output_begin = s.tokens.size();
  auto o = tokenize(output);
  s.tokens.insert(s.tokens.end(), o.begin(), o.end());
  s.tokens.push_back(SpecialTokens::kEos);
  s.output_end = s.tokens.size();
  s.target = std::string(output);
  return s;
}

inline std::string category_head(const Note& note, const TruncationConfig& trunc) {
  std::string head(kInstructionHead);
  head += "the category of the note. {'title': ";
  head += truncate_bytes(note.title, trunc.max_title_tokens);
  head += ", 'topic': ";
  head += join(note.hashtags, ", ");
  head += ", 'content': ";
  head += truncate_bytes(note.content, trunc.max_content_tokens);
  head += "}.";
  head += kCompression;
  return head;
}

inline constexpr std::string_view kCategoryTail = "\". The category is: ";

}  // namespace detail

inline PromptSample build_category_prompt(const Note& note, const TruncationConfig& trunc = {}) {
  auto s = detail::assemble(detail::category_head(note, trunc), detail::kCategoryTail, note.category, true);
  s.task = TaskKind::kCategory;
  return s;
}

// Category prompt cut right after [EMB]: everything the note embedding can see.
inline PromptSample build_embedding_prompt(const Note& note, const TruncationConfig& trunc = {}) {
  auto s = detail::assemble(detail::category_head(note, trunc), {}, {}, false);
  s.task = TaskKind::kCategory;
  return s;
}

// `selection` lists hashtag indices in output order; its size is j.
inline PromptSample build_hashtag_prompt_with(const Note& note, const TruncationConfig& trunc,
                                              std::span<const std::size_t> selection) {
  if (note.hashtags.empty()) throw Error("note " + note.id + " has no hashtags; use the category task");
  if (selection.empty() || selection.size() > note.hashtags.size())
    throw Error("hashtag selection size must be in 1..#hashtags");
  std::vector<std::string> picked;
  for (std::size_t idx : selection) {
    if (idx >= note.hashtags.size()) throw Error("hashtag index out of range");
    picked.push_back(note.hashtags[idx]);
  }
  const std::string j = std::to_string(selection.size());
  std::string head(detail::kInstructionHead);
  head += j + " topics of the note. {'title': ";
  head += detail::truncate_bytes(note.title, trunc.max_title_tokens);
  head += ", 'content': ";
  head += detail::truncate_bytes(note.content, trunc.max_content_tokens);
  head += "}.";
  head += detail::kCompression;
  const std::string tail = "\". The " + j + " topics are: ";
  auto s = detail::assemble(head, tail, detail::join(picked, ", "), true);
  s.task = TaskKind::kHashtag;
  s.hashtag_count = selection.size();
  return s;
}

// j ~ Uniform{1..#hashtags}; j distinct hashtags without replacement, sampled order kept.
template <class Rng>
PromptSample build_hashtag_prompt(const Note& note, const TruncationConfig& trunc, Rng& rng) {
  if (note.hashtags.empty()) throw Error("note " + note.id + " has no hashtags; use the category task");
  const std::size_t n = note.hashtags.size();
  const std::size_t j = std::uniform_int_distribution<std::size_t>(1, n)(rng);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(j);
  return build_hashtag_prompt_with(note, trunc, order);
}

template <class Rng>
PromptSample build_prompt(const Note& note, TaskKind task, const TruncationConfig& trunc, Rng& rng) {
  if (task == TaskKind::kHashtag && !note.hashtags.empty()) return build_hashtag_prompt(note, trunc, rng);
  return build_category_prompt(note, trunc);
}

}  // namespace notellm
