// notellm: command-line entry point for the note recommendation pipeline.

#include <csignal>
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "notellm/pipeline.hpp"
#include "notellm/serve.hpp"

namespace {

using namespace notellm;

// Options every configurable subcommand shares. Precedence, lowest first:
// presets, --seed, --set, subcommand flags, --config file.
struct ConfigOptions {
  std::string presets = "desk";
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  std::string config_file;
  bool print_config = false;

  void add_to(CLI::App* app) {
    app->add_option("--preset", presets, "comma-separated presets (desk, smoke, tiny, no-csft, no-gcl, r-sweep, alpha-sweep)")
        ->capture_default_str();
    app->add_option("--seed", seed, "seed for data generation and training");
    app->add_option("--set", sets, "override a config field, key=value (repeatable)");
    app->add_option("--config", config_file, "key=value config file applied last");
    app->add_flag("--print-config", print_config, "print the resolved configuration and exit");
  }

  std::vector<ExperimentConfig> resolve(const std::function<void(ExperimentConfig&)>& flags = {}) const {
    auto configs = resolve_presets(desk_preset(), presets);
    for (auto& c : configs) {
      if (seed) c.corpus.seed = c.log.seed = c.train.seed = *seed;
      for (const auto& kv : sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
        set_field(c, kv.substr(0, eq), kv.substr(eq + 1));
      }
      if (flags) flags(c);
      if (!config_file.empty()) apply_config_text(c, read_file(config_file));
      c.validate();
    }
    return configs;
  }

  // The single configuration a non-sweeping subcommand runs with.
  ExperimentConfig resolve_one(const std::function<void(ExperimentConfig&)>& flags = {}) const {
    auto all = resolve(flags);
    if (all.size() != 1) throw Error("preset list '" + presets + "' expands to several configurations; use pipeline");
    return all.front();
  }
};

void log_line(const std::string& s) {
  std::cerr << s << "\n";
  std::cerr.flush();
}

StepCallback progress_every(std::size_t every, std::size_t total) {
  return [every, total](const StepStats& s) {
    if (every && (s.step % every == 0 || s.step == total)) log_line(metrics_line(s));
  };
}

std::string metrics_text(const std::vector<StepStats>& m) {
  std::string out;
  for (const auto& s : m) out += metrics_line(s) + "\n";
  return out;
}

template <typename Opt>
void require_file(Opt* o) {
  o->required()->check(CLI::ExistingFile);
}

int run(int argc, char** argv) {
  CLI::App app{"NoteLLM-style note embedding, retrieval and generation pipeline"};
  app.require_subcommand(1);

  // gen-data ---------------------------------------------------------------
  ConfigOptions gen_cfg;
  std::string gen_out;
  std::optional<std::size_t> gen_notes, gen_events;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic corpus and behavior log");
  gen_cfg.add_to(gen);
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--notes", gen_notes, "number of notes");
  gen->add_option("--events", gen_events, "number of click events");

  // mine-pairs -------------------------------------------------------------
  ConfigOptions mine_cfg;
  std::string mine_log, mine_out;
  std::optional<std::size_t> mine_top_t;
  std::optional<double> mine_lower, mine_upper;
  auto* mine = app.add_subcommand("mine-pairs", "score co-occurrences and mine related note pairs");
  mine_cfg.add_to(mine);
  require_file(mine->add_option("--log", mine_log, "behavior log (JSON lines)"));
  mine->add_option("--out", mine_out, "output pairs file (TSV)")->required();
  mine->add_option("--top-t", mine_top_t, "pairs kept per source note");
  mine->add_option("--lower", mine_lower, "lower score bound (inclusive)");
  mine->add_option("--upper", mine_upper, "upper score bound (inclusive)");

  // train ------------------------------------------------------------------
  ConfigOptions train_cfg;
  std::string train_notes, train_pairs, train_out;
  std::optional<std::size_t> train_steps, train_batch;
  std::optional<double> train_alpha, train_ratio, train_lr;
  std::size_t train_log_every = 50;
  auto* tr = app.add_subcommand("train", "train the model on related pairs");
  train_cfg.add_to(tr);
  require_file(tr->add_option("--notes", train_notes, "corpus (JSON lines)"));
  require_file(tr->add_option("--pairs", train_pairs, "training pairs (TSV)"));
  tr->add_option("--out", train_out, "output directory")->required();
  tr->add_option("--steps", train_steps, "optimization steps");
  tr->add_option("--batch-pairs", train_batch, "related pairs per batch (B)");
  tr->add_option("--alpha", train_alpha, "generation loss weight");
  tr->add_option("--ratio", train_ratio, "share of notes on the hashtag task (r)");
  tr->add_option("--lr", train_lr, "learning rate");
  tr->add_option("--log-every", train_log_every, "print metrics every N steps (0: never)")->capture_default_str();

  // eval -------------------------------------------------------------------
  ConfigOptions eval_cfg;
  std::string eval_ckpt, eval_notes, eval_pairs, eval_train_pairs, eval_out, eval_ks;
  bool eval_no_gen = false;
  auto* ev = app.add_subcommand("eval", "retrieval recall and generation metrics");
  eval_cfg.add_to(ev);
  require_file(ev->add_option("--checkpoint", eval_ckpt, "model checkpoint"));
  require_file(ev->add_option("--notes", eval_notes, "note pool (JSON lines)"));
  require_file(ev->add_option("--pairs", eval_pairs, "evaluation pairs (TSV)"));
  ev->add_option("--train-pairs", eval_train_pairs, "training pairs; splits generation metrics into train/held-out")
      ->check(CLI::ExistingFile);
  ev->add_option("--recall-ks", eval_ks, "comma-separated K values (default 10,100,1000,pool)");
  ev->add_option("--out", eval_out, "output directory")->required();
  ev->add_flag("--no-generation", eval_no_gen, "skip generation metrics");

  // build-store ------------------------------------------------------------
  ConfigOptions store_cfg;
  std::string store_ckpt, store_notes, store_out;
  auto* bs = app.add_subcommand("build-store", "embed every note into a binary store");
  store_cfg.add_to(bs);
  require_file(bs->add_option("--checkpoint", store_ckpt, "model checkpoint"));
  require_file(bs->add_option("--notes", store_notes, "corpus (JSON lines)"));
  bs->add_option("--out", store_out, "output store file")->required();

  // serve ------------------------------------------------------------------
  ConfigOptions serve_cfg;
  std::string serve_store, serve_ckpt, serve_addr = "127.0.0.1:7070";
  auto* sv = app.add_subcommand("serve", "answer related-note queries over TCP");
  serve_cfg.add_to(sv);
  require_file(sv->add_option("--store", serve_store, "embedding store"));
  require_file(sv->add_option("--checkpoint", serve_ckpt, "model checkpoint the store was built from"));
  sv->add_option("--address", serve_addr, "host:port to listen on (port 0 picks one)")->capture_default_str();

  // dump-prompt ------------------------------------------------------------
  ConfigOptions dump_cfg;
  std::string dump_notes, dump_id, dump_task = "category";
  bool dump_tokens = false;
  auto* dp = app.add_subcommand("dump-prompt", "print the rendered prompt for one note");
  dump_cfg.add_to(dp);
  require_file(dp->add_option("--notes", dump_notes, "corpus (JSON lines)"));
  dp->add_option("--id", dump_id, "note id")->required();
  dp->add_option("--task", dump_task, "category, hashtag or embedding")
      ->check(CLI::IsMember({"category", "hashtag", "embedding"}))
      ->capture_default_str();
  dp->add_flag("--tokens", dump_tokens, "print token ids instead of text");

  // pipeline ---------------------------------------------------------------
  ConfigOptions pipe_cfg;
  std::string pipe_out;
  std::size_t pipe_log_every = 100;
  auto* pl = app.add_subcommand("pipeline", "run gen-data, mine-pairs, train, eval and build-store");
  pipe_cfg.add_to(pl);
  pl->add_option("--out", pipe_out, "root directory; each configuration gets <name>-<config hash>/")->required();
  pl->add_option("--log-every", pipe_log_every, "print metrics every N steps (0: never)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  auto print_configs = [](const std::vector<ExperimentConfig>& cs) {
    for (std::size_t i = 0; i < cs.size(); ++i) std::cout << (i ? "\n" : "") << config_text(cs[i]);
    return 0;
  };

  if (*gen) {
    auto cfg = gen_cfg.resolve_one([&](ExperimentConfig& c) {
      if (gen_notes) c.corpus.n_notes = *gen_notes;
      if (gen_events) c.log.n_events = *gen_events;
    });
    if (gen_cfg.print_config) return print_configs({cfg});
    const fs::path dir(gen_out);
    auto data = generate_data(cfg);
    write_text(dir / "notes.jsonl", serialize_corpus(data.corpus.notes()));
    write_text(dir / "log.jsonl", serialize_log(data.log));
    write_text(dir / "config.txt", config_text(cfg));
    std::cout << "wrote " << data.corpus.size() << " notes and " << data.log.events.size() << " events to " << gen_out
              << "\n";
    return 0;
  }

  if (*mine) {
    auto cfg = mine_cfg.resolve_one([&](ExperimentConfig& c) {
      if (mine_top_t) c.mining.top_t = *mine_top_t;
      if (mine_lower) c.mining.lower_bound = *mine_lower;
      if (mine_upper) c.mining.upper_bound = *mine_upper;
    });
    if (mine_cfg.print_config) return print_configs({cfg});
    const auto pairs = mine_pairs(cfg, load_log(mine_log));
    write_text(mine_out, serialize_pairs(pairs));
    write_text(mine_out + ".config.txt", config_text(cfg));
    std::cout << "wrote " << pairs.pairs.size() << " pairs to " << mine_out << "\n";
    return 0;
  }

  if (*tr) {
    auto cfg = train_cfg.resolve_one([&](ExperimentConfig& c) {
      if (train_steps) c.train.steps = *train_steps;
      if (train_batch) c.train.batch_pairs = *train_batch;
      if (train_alpha) c.train.alpha = *train_alpha;
      if (train_ratio) c.train.hashtag_ratio = *train_ratio;
      if (train_lr) c.train.learning_rate = *train_lr;
    });
    if (train_cfg.print_config) return print_configs({cfg});
    const auto corpus = load_corpus(train_notes);
    const auto pairs = load_pairs(train_pairs);
    const fs::path dir(train_out);
    write_text(dir / "config.txt", config_text(cfg));
    auto r = train_model<float>(cfg, corpus, pairs, progress_every(train_log_every, cfg.train.steps));
    write_text(dir / "metrics.jsonl", metrics_text(r.metrics));
    const auto bytes = serialize_checkpoint(r.params);
    write_text(dir / "checkpoint.bin", bytes);
    if (r.skipped_pairs) log_line("note: " + std::to_string(r.skipped_pairs) + " pair draws skipped by batch dedup");
    std::cout << "checkpoint " << (dir / "checkpoint.bin").string() << " fingerprint " << hex64(fnv1a64(bytes)) << "\n";
    return 0;
  }

  if (*ev) {
    auto cfg = eval_cfg.resolve_one([&](ExperimentConfig& c) {
      if (!eval_ks.empty()) set_field(c, "eval.recall_ks", eval_ks);
    });
    if (eval_cfg.print_config) return print_configs({cfg});
    const auto ckpt = load_checkpoint(eval_ckpt);
    const auto corpus = load_corpus(eval_notes);
    const auto pairs = load_pairs(eval_pairs);
    const auto train_set = eval_train_pairs.empty() ? RelatedPairSet{} : load_pairs(eval_train_pairs);
    const auto out = evaluate(cfg, ckpt.params, corpus, pairs, train_set, !eval_no_gen);
    for (const auto& r : out.retrieval)
      if (!recall_is_monotone(r)) throw Error("recall is not monotone in K for " + r.method);
    const fs::path dir(eval_out);
    write_text(dir / "report.jsonl", out.jsonl());
    write_text(dir / "report.txt", out.table());
    write_text(dir / "config.txt", config_text(cfg));
    std::cout << out.table();
    return 0;
  }

  if (*bs) {
    auto cfg = store_cfg.resolve_one();
    if (store_cfg.print_config) return print_configs({cfg});
    const auto ckpt = load_checkpoint(store_ckpt);
    const auto corpus = load_corpus(store_notes);
    const auto store = build_store(ckpt.params, ckpt.fingerprint, corpus, cfg.trunc);
    write_text(store_out, serialize_store(store));
    write_text(store_out + ".config.txt", config_text(cfg));
    std::cout << "wrote " << store.size() << " x " << store.dim() << " store to " << store_out << "\n";
    return 0;
  }

  if (*sv) {
    auto cfg = serve_cfg.resolve_one();
    if (serve_cfg.print_config) return print_configs({cfg});
    auto ckpt = load_checkpoint(serve_ckpt);
    RetrievalService service(load_store(serve_store), std::move(ckpt.params), ckpt.fingerprint, cfg.trunc);
    // Block the shutdown signals before any thread starts so only sigwait sees them.
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);
    Server server(service);
    server.start(serve_addr);
    const auto host = detail::split_address(serve_addr).first;
    std::cout << "listening on " << host << ":" << server.port() << "\n" << std::flush;
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
    return 0;
  }

  if (*dp) {
    auto cfg = dump_cfg.resolve_one();
    if (dump_cfg.print_config) return print_configs({cfg});
    const auto corpus = load_corpus(dump_notes);
    const auto& note = corpus.at(dump_id);
    const PromptSample s = dump_task == "category"  ? build_category_prompt(note, cfg.trunc)
                           : dump_task == "hashtag" ? full_hashtag_prompt(note, cfg.trunc)
                                                    : build_embedding_prompt(note, cfg.trunc);
    if (dump_tokens) {
      for (std::size_t i = 0; i < s.tokens.size(); ++i) std::cout << (i ? " " : "") << s.tokens[i];
      std::cout << "\n";
    } else {
      std::cout << decode(s.tokens) << "\n";
    }
    return 0;
  }

  if (*pl) {
    const auto configs = pipe_cfg.resolve();
    if (pipe_cfg.print_config) return print_configs(configs);
    for (const auto& cfg : configs) {
      log_line("== " + cfg.name);
      const auto paths = run_pipeline(
          cfg, pipe_out, [](const std::string& stage) { log_line("-- " + stage); },
          progress_every(pipe_log_every, cfg.train.steps));
      std::cout << paths.root.string() << "\n";
    }
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
