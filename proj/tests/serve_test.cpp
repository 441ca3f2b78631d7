#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "notellm/serve.hpp"
#include "support/fixtures.hpp"

namespace notellm {
namespace {

using testing::make_note;

struct Fixture {
  Corpus corpus;
  ModelParams<float> params;
  EmbeddingStore store;

  explicit Fixture(std::size_t n, std::uint64_t seed = 1)
      : corpus(make_corpus(n)), params(testing::random_params<float>(testing::tiny_config(16, 1, 2, 512, 8), seed)) {
    store = build_store(params, 42, corpus);
  }

  static Corpus make_corpus(std::size_t n) {
    std::vector<Note> notes;
    for (std::size_t i = 0; i < n; ++i)
      notes.push_back(make_note("n" + std::to_string(i), "title " + std::to_string(i * 7 % 13),
                                {"t" + std::to_string(i % 4)}, i % 2 ? "Food" : "Pets", "body " + std::to_string(i)));
    return Corpus(std::move(notes), CategorySet({"Pets", "Food"}));
  }

  RetrievalService service() const { return RetrievalService(store, params, 42); }
};

nlohmann::json parse(const std::string& s) { return nlohmann::json::parse(s); }

TEST(Service, IdQueryOnThreeNotes) {
  Fixture f(3);
  auto svc = f.service();
  auto r = parse(svc.handle(R"({"id":"n0","k":1})"));
  ASSERT_TRUE(r["ok"].get<bool>());
  ASSERT_EQ(r["results"].size(), 1u);
  const auto best = svc.index().rank(0, 1)[0];
  EXPECT_EQ(r["results"][0]["id"], f.corpus[best.index].id);
  EXPECT_EQ(r["results"][0]["sim"].get<double>(), best.sim);
  EXPECT_NE(r["results"][0]["id"], "n0");

  auto all = parse(svc.handle(R"({"id":"n0","k":50})"));
  EXPECT_EQ(all["results"].size(), 2u);
}

TEST(Service, ResultsAreRankedAndMatchRankIndex) {
  Fixture f(20);
  auto svc = f.service();
  for (std::size_t t = 0; t < 20; ++t) {
    auto got = svc.by_id(f.corpus[t].id, 7);
    auto want = svc.index().rank(t, 7);
    ASSERT_EQ(got.size(), 7u);
    for (std::size_t j = 0; j < 7; ++j) {
      EXPECT_EQ(got[j].id, f.corpus[want[j].index].id);
      EXPECT_EQ(got[j].sim, want[j].sim);
      if (j) {
        EXPECT_LE(got[j].sim, got[j - 1].sim);
      }
    }
  }
}

TEST(Service, RawNoteMatchesIdQuery) {
  Fixture f(10);
  auto svc = f.service();
  const auto& n = f.corpus[4];
  nlohmann::json req;
  req["note"] = {{"id", n.id}, {"title", n.title}, {"content", n.content}, {"hashtags", n.hashtags},
                 {"category", n.category}};
  req["k"] = 5;
  EXPECT_EQ(svc.handle(req.dump()), svc.handle(R"({"id":"n4","k":5})"));

  req["note"].erase("id");  // no exclusion: the note itself comes back first
  auto r = parse(svc.handle(req.dump()));
  EXPECT_EQ(r["results"][0]["id"], "n4");
  EXPECT_EQ(r["results"].size(), 5u);
}

TEST(Service, ErrorsAreStructured) {
  Fixture f(3);
  auto svc = f.service();
  auto code = [&](const std::string& line) {
    auto r = parse(svc.handle(line));
    EXPECT_FALSE(r["ok"].get<bool>()) << line;
    EXPECT_TRUE(r["message"].is_string());
    return r["code"].get<std::string>();
  };
  EXPECT_EQ(code(R"({"id":"nope"})"), "unknown_id");
  EXPECT_EQ(code("not json"), "bad_request");
  EXPECT_EQ(code("[1,2]"), "bad_request");
  EXPECT_EQ(code(R"({"id":"n0","k":0})"), "bad_request");
  EXPECT_EQ(code(R"({"id":"n0","k":"3"})"), "bad_request");
  EXPECT_EQ(code(R"({"id":7})"), "bad_request");
  EXPECT_EQ(code(R"({"k":3})"), "bad_request");
  EXPECT_EQ(code(R"({"id":"n0","note":{}})"), "bad_request");
  EXPECT_EQ(code(R"({"note":{"hashtags":"x"}})"), "bad_request");
}

TEST(Service, RejectsMismatchedCheckpoint) {
  Fixture f(3);
  EXPECT_THROW(RetrievalService(f.store, f.params, 43), Error);
  auto other = testing::random_params<float>(testing::tiny_config(16, 1, 2, 512, 6), 2);
  EXPECT_THROW(RetrievalService(f.store, other, 42), Error);
}

TEST(Server, ConnectionSurvivesErrors) {
  Fixture f(5);
  auto svc = f.service();
  Server server(svc);
  server.start("127.0.0.1:0");
  Client c("127.0.0.1", server.port());
  EXPECT_EQ(parse(c.request("garbage"))["code"], "bad_request");
  EXPECT_EQ(parse(c.request(R"({"id":"zz"})"))["code"], "unknown_id");
  EXPECT_EQ(c.request(R"({"id":"n1","k":3})"), svc.handle(R"({"id":"n1","k":3})"));
  server.stop();
}

TEST(Server, OverlongLineIsRejected) {
  Fixture f(3);
  auto svc = f.service();
  Server server(svc);
  server.start("127.0.0.1:0");
  Client c("127.0.0.1", server.port());
  EXPECT_EQ(parse(c.request(std::string(kMaxRequestBytes + 10, 'x')))["code"], "bad_request");
}

TEST(Server, ConcurrentClientsGetExactResponses) {
  Fixture f(30);
  auto svc = f.service();
  Server server(svc);
  server.start("127.0.0.1:0");
  std::atomic<int> mismatches{0}, done{0};
  std::vector<std::thread> clients;
  for (int c = 0; c < 100; ++c) {
    clients.emplace_back([&, c] {
      Client cl("127.0.0.1", server.port());
      std::mt19937 rng(static_cast<unsigned>(c));
      for (int q = 0; q < 10; ++q) {
        const std::string req =
            R"({"id":"n)" + std::to_string(rng() % 30) + R"(","k":)" + std::to_string(1 + rng() % 40) + "}";
        if (cl.request(req) != svc.handle(req)) ++mismatches;
        ++done;
      }
    });
  }
  for (auto& t : clients) t.join();
  server.stop();
  EXPECT_EQ(done.load(), 1000);
  EXPECT_EQ(mismatches.load(), 0);
}

}  // namespace
}  // namespace notellm
