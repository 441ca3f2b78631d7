#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>

#include <gtest/gtest.h>

#include "notellm/pipeline.hpp"
#include "notellm/serve.hpp"
#include "support/tree.hpp"

namespace notellm {
namespace {

namespace fs = std::filesystem;

struct RunResult {
  int code = -1;
  std::string out, err;
};

// Runs the command-line tool with stdout/stderr captured to files.
RunResult cli(const std::string& args) {
  static int counter = 0;
  const auto base = fs::temp_directory_path() / ("notellm_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  const std::string cmd = std::string(NOTELLM_CLI) + " " + args + " > " + base.string() + ".out 2> " + base.string() + ".err";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(base.string() + ".out");
  r.err = read_file(base.string() + ".err");
  fs::remove(base.string() + ".out");
  fs::remove(base.string() + ".err");
  return r;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("notellm_cli_test_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

  // Data + pairs for the tiny preset.
  void make_tiny_inputs() {
    ASSERT_EQ(cli("gen-data --preset tiny --seed 3 --out " + path("data")).code, 0);
    ASSERT_EQ(cli("mine-pairs --preset tiny --log " + path("data/log.jsonl") + " --out " + path("pairs.tsv")).code, 0);
  }

  fs::path dir_;
};

TEST(Config, TextRoundTrip) {
  auto c = smoke_preset();
  c.eval.recall_ks = {5, 50};
  c.train.optimizer = OptimizerKind::kMomentum;
  c.train.learning_rate = 0.1 + 0.2;
  ExperimentConfig back;
  apply_config_text(back, config_text(c));
  EXPECT_EQ(config_text(back), config_text(c));
  EXPECT_EQ(back.train.learning_rate, c.train.learning_rate);
  EXPECT_EQ(back.eval.recall_ks, c.eval.recall_ks);
}

TEST(Config, ErrorsNameTheField) {
  ExperimentConfig c;
  auto message = [&](const std::string& text) {
    try {
      apply_config_text(c, text);
    } catch (const Error& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  EXPECT_NE(message("train.alpha=abc").find("train.alpha"), std::string::npos);
  EXPECT_NE(message("train.steps=-3").find("train.steps"), std::string::npos);
  EXPECT_NE(message("train.use_gcl=maybe").find("train.use_gcl"), std::string::npos);
  EXPECT_NE(message("train.optimizer=lbfgs").find("train.optimizer"), std::string::npos);
  EXPECT_NE(message("no.such=1").find("no.such"), std::string::npos);
  EXPECT_NE(message("just text").find("line 1"), std::string::npos);
  c = ExperimentConfig{};
  apply_config_text(c, "# comment\n\ntrain.alpha = 0.5\n");
  EXPECT_EQ(c.train.alpha, 0.5);
}

TEST(Config, PresetsResolveToConcreteConfigs) {
  auto no_csft = resolve_presets(desk_preset(), "no-csft");
  ASSERT_EQ(no_csft.size(), 1u);
  EXPECT_EQ(no_csft[0].train.alpha, 0.0);
  EXPECT_EQ(no_csft[0].name, "desk+no-csft");

  auto no_gcl = resolve_presets(desk_preset(), "tiny,no-gcl");
  EXPECT_FALSE(no_gcl[0].train.use_gcl);
  EXPECT_EQ(no_gcl[0].model.hidden_dim, 16);

  auto r = resolve_presets(desk_preset(), "r-sweep");
  ASSERT_EQ(r.size(), 6u);
  const double rs[] = {0, 0.2, 0.4, 0.6, 0.8, 1.0};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(r[i].train.hashtag_ratio, rs[i]);

  auto a = resolve_presets(desk_preset(), "alpha-sweep");
  ASSERT_EQ(a.size(), 6u);
  const double as[] = {0, 0.001, 0.01, 0.1, 1, 10};
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(a[i].train.alpha, as[i]);

  std::set<std::string> dirs;
  for (const auto& c : a) {
    c.validate();
    dirs.insert(experiment_dir_name(c));
  }
  EXPECT_EQ(dirs.size(), 6u);
  EXPECT_EQ(resolve_presets(desk_preset(), "r-sweep,alpha-sweep").size(), 36u);
  EXPECT_THROW(resolve_presets(desk_preset(), "bogus"), Error);
}

TEST(Config, TrainConfigDefaults) {
  TrainConfig t;
  EXPECT_EQ(t.batch_pairs, 64u);
  EXPECT_EQ(t.alpha, 0.01);
  EXPECT_EQ(t.hashtag_ratio, 0.4);
  EXPECT_EQ(t.tau_init, 3.0);
}

TEST_F(CliTest, GenDataIsDeterministic) {
  ASSERT_EQ(cli("gen-data --preset tiny --seed 1 --out " + path("a")).code, 0);
  ASSERT_EQ(cli("gen-data --preset tiny --seed 1 --out " + path("b")).code, 0);
  EXPECT_EQ(testing::tree_contents(path("a")), testing::tree_contents(path("b")));
  ASSERT_EQ(cli("gen-data --preset tiny --seed 2 --out " + path("c")).code, 0);
  EXPECT_NE(read_file(path("a/notes.jsonl")), read_file(path("c/notes.jsonl")));
  EXPECT_NE(read_file(path("a/config.txt")).find("corpus.seed=1"), std::string::npos);
}

TEST_F(CliTest, TrainNoCsftPresetShowsAlphaZero) {
  make_tiny_inputs();
  auto r = cli("train --preset tiny,no-csft --notes " + path("data/notes.jsonl") + " --pairs " + path("pairs.tsv") +
               " --out " + path("run") + " --print-config");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\ntrain.alpha=0\n"), std::string::npos) << r.out;

  r = cli("train --preset tiny,no-csft --notes " + path("data/notes.jsonl") + " --pairs " + path("pairs.tsv") +
          " --out " + path("run") + " --log-every 0");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(read_file(path("run/config.txt")).find("\ntrain.alpha=0\n"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("run/checkpoint.bin")));
  EXPECT_EQ(split(read_file(path("run/metrics.jsonl")), '\n').size(), 7u);  // 6 steps + trailing newline
}

TEST_F(CliTest, EvalUsesRequestedKs) {
  make_tiny_inputs();
  ASSERT_EQ(cli("train --preset tiny --notes " + path("data/notes.jsonl") + " --pairs " + path("pairs.tsv") +
                " --out " + path("run") + " --log-every 0")
                .code,
            0);
  auto r = cli("eval --preset tiny --checkpoint " + path("run/checkpoint.bin") + " --notes " +
               path("data/notes.jsonl") + " --pairs " + path("pairs.tsv") + " --recall-ks 10,100 --no-generation --out " +
               path("eval"));
  ASSERT_EQ(r.code, 0) << r.err;
  std::vector<int> ks;
  for (const auto& line : split(read_file(path("eval/report.jsonl")), '\n')) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    if (j["method"] == "notellm") ks.push_back(j["k"].get<int>());
  }
  EXPECT_EQ(ks, (std::vector<int>{10, 100}));
}

TEST_F(CliTest, ErrorsExitNonzeroWithDiagnostics) {
  auto r = cli("gen-data --out " + path("x") + " --bogus-flag 1");
  EXPECT_NE(r.code, 0);
  r = cli("mine-pairs --log " + path("missing.tsv") + " --out " + path("p.tsv"));
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("missing.tsv"), std::string::npos);
  r = cli("gen-data --preset tiny --set train.alpha=-1 --out " + path("x"));
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("alpha"), std::string::npos);
  r = cli("gen-data --set model.hidden_dim=abc --out " + path("x"));
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("model.hidden_dim"), std::string::npos);
  r = cli("frobnicate");
  EXPECT_NE(r.code, 0);
  r = cli("pipeline --preset tiny --set train.batch_pairs=0 --out " + path("p"));
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("batch_pairs"), std::string::npos);
}

TEST_F(CliTest, ConfigFileOverridesFlags) {
  write_file(path("over.cfg"), "corpus.n_notes=30\n");
  auto r = cli("gen-data --preset tiny --notes 12 --config " + path("over.cfg") + " --out " + path("d"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_corpus(path("d/notes.jsonl")).size(), 30u);
}

TEST_F(CliTest, DumpPromptShowsSlots) {
  make_tiny_inputs();
  const auto corpus = load_corpus(path("data/notes.jsonl"));
  const auto& n = corpus[0];
  auto r = cli("dump-prompt --preset tiny --notes " + path("data/notes.jsonl") + " --id " + n.id + " --task category");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, decode(build_category_prompt(n, tiny_preset().trunc).tokens) + "\n");
  EXPECT_EQ(r.out.rfind("[BOS]", 0), 0u);
  EXPECT_NE(r.out.find("[EMB]"), std::string::npos);
  r = cli("dump-prompt --preset tiny --notes " + path("data/notes.jsonl") + " --id nope");
  EXPECT_NE(r.code, 0);
}

TEST_F(CliTest, PipelineTreeIsReproducible) {
  auto a = cli("pipeline --preset tiny --seed 5 --log-every 0 --out " + path("a"));
  auto b = cli("pipeline --preset tiny --seed 5 --log-every 0 --out " + path("b"));
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  const auto ta = testing::tree_contents(path("a")), tb = testing::tree_contents(path("b"));
  EXPECT_EQ(ta, tb);
  for (const char* f : {"config.txt", "data/notes.jsonl", "pairs/mined.tsv", "train/checkpoint.bin",
                        "train/metrics.jsonl", "eval/report.jsonl", "eval/report.txt", "store.bin"}) {
    bool found = false;
    for (const auto& [rel, bytes] : ta) found |= rel.ends_with(f);
    EXPECT_TRUE(found) << f;
  }
  // Re-running from the recorded configuration reproduces the tree.
  const auto dir = fs::path(trim(a.out));
  auto c = cli("pipeline --preset tiny --config " + (dir / "config.txt").string() + " --log-every 0 --out " + path("c"));
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_EQ(testing::tree_contents(path("c")), ta);
}

TEST_F(CliTest, ServeAnswersQueries) {
  ASSERT_EQ(cli("pipeline --preset tiny --log-every 0 --out " + path("p")).code, 0);
  fs::path run;
  for (const auto& e : fs::directory_iterator(path("p"))) run = e.path();
  int out_pipe[2];
  ASSERT_EQ(::pipe(out_pipe), 0);
  const pid_t pid = ::fork();
  if (pid == 0) {
    ::dup2(out_pipe[1], 1);
    ::close(out_pipe[0]);
    const std::string store = (run / "store.bin").string(), ckpt = (run / "train/checkpoint.bin").string();
    ::execl(NOTELLM_CLI, NOTELLM_CLI, "serve", "--preset", "tiny", "--store", store.c_str(), "--checkpoint",
            ckpt.c_str(), "--address", "127.0.0.1:0", static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(out_pipe[1]);
  std::string banner;
  char ch;
  while (::read(out_pipe[0], &ch, 1) == 1 && ch != '\n') banner += ch;
  ASSERT_EQ(banner.rfind("listening on 127.0.0.1:", 0), 0u) << banner;
  const auto port = static_cast<std::uint16_t>(std::stoi(banner.substr(banner.rfind(':') + 1)));

  const auto ckpt = load_checkpoint((run / "train/checkpoint.bin").string());
  RetrievalService local(load_store((run / "store.bin").string()), ckpt.params, ckpt.fingerprint, tiny_preset().trunc);
  {
    Client c("127.0.0.1", port);
    for (const char* q : {R"({"id":"n0003","k":5})", R"({"id":"missing"})", "nonsense", R"({"id":"n0000","k":100})"})
      EXPECT_EQ(c.request(q), local.handle(q)) << q;
  }
  ::kill(pid, SIGTERM);
  int status = 0;
  ::waitpid(pid, &status, 0);
  EXPECT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
  ::close(out_pipe[0]);
}

}  // namespace
}  // namespace notellm
