#include <map>
#include <random>

#include <gtest/gtest.h>

#include "notellm/prompt.hpp"
#include "support/fixtures.hpp"

namespace notellm {
namespace {

using testing::make_note;

void check_invariants(const PromptSample& s) {
  ASSERT_FALSE(s.tokens.empty());
  EXPECT_EQ(s.tokens.front(), SpecialTokens::kBos);
  EXPECT_EQ(s.tokens.back(), SpecialTokens::kEos);
  EXPECT_EQ(s.tokens[s.compression_pos + 1], SpecialTokens::kEmb);
  EXPECT_EQ(locate_compression_pos(s.tokens), s.compression_pos);
  EXPECT_GT(s.output_end, s.output_begin);
  EXPECT_GT(s.output_begin, s.emb_pos());
  EXPECT_EQ(s.output_end, s.tokens.size());
}

TEST(Tokenizer, Basics) {
  EXPECT_EQ(tokenize("ab"), (std::vector<TokenId>{97, 98}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(decode(std::vector<TokenId>{SpecialTokens::kBos, 'x', SpecialTokens::kEmb}), "[BOS]x[EMB]");
  EXPECT_THROW(decode(std::vector<TokenId>{999}), Error);
}

TEST(Tokenizer, RoundTripRandomStrings) {
  std::mt19937 rng(1);
  for (int i = 0; i < 1000; ++i) {
    std::string s(rng() % 40, '\0');
    for (auto& c : s) c = static_cast<char>(rng() % 256);
    auto ids = tokenize(s);
    for (auto t : ids) EXPECT_FALSE(is_special(t));
    EXPECT_EQ(decode(ids), s);
  }
}

TEST(CategoryPrompt, RendersTemplate) {
  auto s = build_category_prompt(make_note("1", "T", {"h"}, "Food", "C"));
  check_invariants(s);
  EXPECT_EQ(decode(s.tokens),
            "[BOS]Extract the note information in json format, compress it into one word for recommendation, and "
            "generate the category of the note. {'title': T, 'topic': h, 'content': C}. The compression word is:\""
            "[EMB]\". The category is: Food[EOS]");
  std::span<const TokenId> out(s.tokens.data() + s.output_begin, s.output_size());
  EXPECT_EQ(decode(out), "Food[EOS]");
  EXPECT_EQ(s.tokens[s.compression_pos], '"');
  EXPECT_EQ(s.task, TaskKind::kCategory);
}

TEST(CategoryPrompt, TruncatesTitleAndContent) {
  std::string title(100, 't'), content(300, 'c');
  auto s = build_category_prompt(make_note("1", title, {}, "Food", content));
  const std::string text = decode(s.tokens);
  EXPECT_NE(text.find("'title': " + std::string(20, 't') + ", 'topic'"), std::string::npos);
  EXPECT_NE(text.find("'content': " + std::string(80, 'c') + "}"), std::string::npos);
  EXPECT_NE(text.find("'topic': , "), std::string::npos);  // empty hashtag list
  TruncationConfig tc{5, 7};
  auto t = build_category_prompt(make_note("1", title, {}, "Food", content), tc);
  EXPECT_NE(decode(t.tokens).find("'title': ttttt, "), std::string::npos);
}

TEST(EmbeddingPrompt, IsCategoryPromptPrefix) {
  auto n = make_note("1", "T", {"a", "b"}, "Food", "C");
  auto full = build_category_prompt(n);
  auto e = build_embedding_prompt(n);
  EXPECT_EQ(e.compression_pos, full.compression_pos);
  ASSERT_EQ(e.tokens.size(), full.compression_pos + 2);
  EXPECT_TRUE(std::equal(e.tokens.begin(), e.tokens.end(), full.tokens.begin()));
}

TEST(HashtagPrompt, ForcedSelection) {
  auto n = make_note("1", "T", {"a", "b", "c"}, "Food", "C");
  std::vector<std::size_t> sel{0, 2};
  auto s = build_hashtag_prompt_with(n, {}, sel);
  check_invariants(s);
  EXPECT_EQ(s.hashtag_count, 2u);
  EXPECT_EQ(s.target, "a, c");
  EXPECT_EQ(decode(s.tokens),
            "[BOS]Extract the note information in json format, compress it into one word for recommendation, and "
            "generate 2 topics of the note. {'title': T, 'content': C}. The compression word is:\"[EMB]\". The 2 "
            "topics are: a, c[EOS]");
  std::vector<std::size_t> rev{2, 0};
  EXPECT_EQ(build_hashtag_prompt_with(n, {}, rev).target, "c, a");
}

TEST(HashtagPrompt, SingleHashtagAlwaysJOne) {
  auto n = make_note("1", "T", {"solo"}, "Food", "C");
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    auto s = build_hashtag_prompt(n, {}, rng);
    EXPECT_EQ(s.hashtag_count, 1u);
    EXPECT_EQ(s.target, "solo");
  }
}

TEST(HashtagPrompt, JIsUniform) {
  auto n = make_note("1", "T", {"a", "b", "c"}, "Food", "C");
  std::mt19937_64 rng(4);
  std::map<std::size_t, int> freq;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    auto s = build_hashtag_prompt(n, {}, rng);
    ++freq[s.hashtag_count];
    auto picked = split(s.target, ',');
    EXPECT_EQ(picked.size(), s.hashtag_count);
  }
  for (std::size_t j = 1; j <= 3; ++j) EXPECT_NEAR(freq[j] / double(trials), 1.0 / 3.0, 0.02) << j;
}

TEST(HashtagPrompt, RejectsHashtaglessNote) {
  auto n = make_note("1", "T", {}, "Food", "C");
  std::mt19937_64 rng(5);
  EXPECT_THROW(build_hashtag_prompt(n, {}, rng), Error);
  auto s = build_prompt(n, TaskKind::kHashtag, {}, rng);
  EXPECT_EQ(s.task, TaskKind::kCategory);
}

TEST(HashtagPrompt, SameSeedSameBytes) {
  auto n = make_note("1", "T", {"a", "b", "c", "d"}, "Food", "C");
  std::mt19937_64 r1(6), r2(6);
  for (int i = 0; i < 20; ++i) EXPECT_EQ(build_hashtag_prompt(n, {}, r1).tokens, build_hashtag_prompt(n, {}, r2).tokens);
}

TEST(LocateCompression, Cases) {
  const auto B = SpecialTokens::kBos, E = SpecialTokens::kEmb, Z = SpecialTokens::kEos;
  EXPECT_EQ(locate_compression_pos(std::vector<TokenId>{B, 97, E, 98, Z}), 1u);
  EXPECT_THROW(locate_compression_pos(std::vector<TokenId>{B, 97, 98, Z}), Error);
  EXPECT_THROW(locate_compression_pos(std::vector<TokenId>{B, E, 97, E, Z}), Error);
}

}  // namespace
}  // namespace notellm
