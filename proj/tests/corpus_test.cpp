#include <filesystem>
#include <set>

#include <gtest/gtest.h>

#include "notellm/corpus.hpp"

namespace notellm {
namespace {

const char* kThree =
    R"({"id":"a","title":"Noodle night","hashtags":["ramen","spicy"],"category":"Food","content":"Best bowls in town","exposure":1200})"
    "\n"
    R"({"id":"b","title":"Ridge walk","hashtags":[],"category":"Travel","content":"Six hours up","exposure":90000})"
    "\n"
    R"({"id":"c","title":"Dumplings","hashtags":["steam"],"category":"Food","content":"Fold twelve times","exposure":5})"
    "\n";

TEST(ParseCorpus, ThreeLines) {
  auto c = parse_corpus(kThree);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c.categories().names(), (std::vector<std::string>{"Food", "Travel"}));
  EXPECT_EQ(c[0].hashtags, (std::vector<std::string>{"ramen", "spicy"}));
  EXPECT_TRUE(c[1].hashtags.empty());
  EXPECT_EQ(c.at("c").exposure, 5u);
  EXPECT_FALSE(c.find("zzz"));
}

TEST(ParseCorpus, DuplicateIdNamesBothLines) {
  std::string text =
      R"({"id":"x","title":"t","hashtags":[],"category":"A","content":"c","exposure":0})"
      "\n"
      R"({"id":"y","title":"t","hashtags":[],"category":"A","content":"c","exposure":0})"
      "\n"
      R"({"id":"z","title":"t","hashtags":[],"category":"A","content":"c","exposure":0})"
      "\n"
      R"({"id":"w","title":"t","hashtags":[],"category":"A","content":"c","exposure":0})"
      "\n"
      R"({"id":"y","title":"t","hashtags":[],"category":"A","content":"c","exposure":0})"
      "\n";
  try {
    parse_corpus(text);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("lines 2 and 5"), std::string::npos) << msg;
  }
}

TEST(ParseCorpus, EmptyFile) {
  try {
    parse_corpus("");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("empty corpus"), std::string::npos);
  }
  EXPECT_THROW(parse_corpus("\n\n"), Error);
}

TEST(ParseCorpus, MalformedLineReportsLineNumber) {
  std::string text = std::string(kThree) + "{not json\n";
  try {
    parse_corpus(text);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_corpus(R"({"id":"a","title":"t","hashtags":[""],"category":"A","content":"c","exposure":0})"),
               Error);
  EXPECT_THROW(parse_corpus(R"({"id":"a","title":"t","hashtags":[],"category":"A","content":"c","exposure":-3})"),
               Error);
  EXPECT_THROW(parse_corpus(R"({"id":"a","title":"t","hashtags":[],"content":"c","exposure":1})"), Error);
}

TEST(CorpusFile, RoundTripPreservesRecordsAndOrder) {
  auto c = parse_corpus(kThree);
  auto path = std::filesystem::temp_directory_path() / "notellm_corpus_rt.jsonl";
  write_corpus(path.string(), c.notes());
  auto back = load_corpus(path.string());
  EXPECT_EQ(back.notes(), c.notes());
  EXPECT_EQ(serialize_corpus(back.notes()), kThree);
  std::filesystem::remove(path);
}

TEST(Log, RoundTripAndValidation) {
  auto c = parse_corpus(kThree);
  BehaviorLog log{{{"u1", "a", "b"}, {"u2", "c", "a"}}, "week"};
  auto back = parse_log(serialize_log(log));
  EXPECT_EQ(back.events, log.events);
  EXPECT_NO_THROW(validate_log(back, c));
  BehaviorLog bad{{{"u1", "a", "q"}}, ""};
  EXPECT_THROW(validate_log(bad, c), Error);
  BehaviorLog self{{{"u1", "a", "a"}}, ""};
  EXPECT_THROW(validate_log(self, c), Error);
}

CorpusGenConfig gen(std::uint64_t seed, std::size_t n, std::size_t c) {
  CorpusGenConfig g;
  g.seed = seed;
  g.n_notes = n;
  g.n_categories = c;
  return g;
}

TEST(SyntheticCorpus, Deterministic) {
  const auto vocab = default_vocabulary();
  auto a = generate_synthetic_corpus(gen(1, 10, 2), vocab);
  auto b = generate_synthetic_corpus(gen(1, 10, 2), vocab);
  EXPECT_EQ(serialize_corpus(a.notes()), serialize_corpus(b.notes()));
  auto d = generate_synthetic_corpus(gen(2, 10, 2), vocab);
  EXPECT_NE(serialize_corpus(a.notes()), serialize_corpus(d.notes()));
}

TEST(SyntheticCorpus, EveryCategoryPopulated) {
  auto c = generate_synthetic_corpus(gen(3, 100, 4), default_vocabulary());
  std::map<std::string, int> count;
  for (const auto& n : c.notes()) count[n.category]++;
  EXPECT_EQ(count.size(), 4u);
  for (const auto& [cat, k] : count) {
    EXPECT_GT(k, 0) << cat;
    EXPECT_TRUE(c.categories().contains(cat));
  }
}

TEST(SyntheticCorpus, ExposureStrataPopulated) {
  auto c = generate_synthetic_corpus(gen(4, 1000, 4), default_vocabulary());
  int low = 0, high = 0;
  for (const auto& n : c.notes()) {
    low += n.exposure < 1500;
    high += n.exposure > 75000;
  }
  EXPECT_GT(low, 0);
  EXPECT_GT(high, 0);
}

TEST(SyntheticCorpus, RejectsBadSizes) {
  const auto vocab = default_vocabulary();
  EXPECT_THROW(generate_synthetic_corpus(gen(1, 3, 4), vocab), Error);
  EXPECT_THROW(generate_synthetic_corpus(gen(1, 1, 2), vocab), Error);
  EXPECT_THROW(generate_synthetic_corpus(gen(1, 10, 1), vocab), Error);
}

TEST(SyntheticLog, DeterministicAndValid) {
  auto c = generate_synthetic_corpus(gen(1, 40, 4), default_vocabulary());
  LogGenConfig lc;
  lc.n_events = 500;
  auto a = generate_synthetic_log(lc, c);
  auto b = generate_synthetic_log(lc, c);
  EXPECT_EQ(a.events, b.events);
  EXPECT_EQ(a.events.size(), 500u);
  EXPECT_NO_THROW(validate_log(a, c));
}

TEST(SyntheticLog, SingleEvent) {
  auto c = generate_synthetic_corpus(gen(1, 10, 2), default_vocabulary());
  LogGenConfig lc;
  lc.n_events = 1;
  auto log = generate_synthetic_log(lc, c);
  ASSERT_EQ(log.events.size(), 1u);
  EXPECT_NE(log.events[0].viewed, log.events[0].clicked);
}

TEST(SyntheticLog, SameCategoryShare) {
  auto c = generate_synthetic_corpus(gen(5, 64, 4), default_vocabulary());
  LogGenConfig lc;
  lc.n_events = 1000;
  lc.same_category_bias = 0.8;
  auto log = generate_synthetic_log(lc, c);
  int same = 0;
  for (const auto& e : log.events) same += c.at(e.viewed).category == c.at(e.clicked).category;
  EXPECT_GE(same, 600);
}

TEST(SyntheticLog, EmptyCorpusRejected) {
  EXPECT_THROW(generate_synthetic_log(LogGenConfig{}, Corpus{}), Error);
}

TEST(DesignatedPartners, SameCategoryAndSymmetric) {
  auto c = generate_synthetic_corpus(gen(1, 64, 4), default_vocabulary());
  auto p = designated_partners(c);
  for (std::size_t i = 0; i < c.size(); ++i) {
    ASSERT_TRUE(p[i]);
    EXPECT_EQ(*p[*p[i]], i);
    EXPECT_EQ(c[*p[i]].category, c[i].category);
  }
}

}  // namespace
}  // namespace notellm
