#pragma once

// End-to-end stages shared by the command-line tool and the tests:
// gen-data -> mine-pairs -> train -> eval -> build-store.

#include <filesystem>
#include <optional>
#include <random>
#include <set>

#include "notellm/checkpoint.hpp"
#include "notellm/config.hpp"
#include "notellm/eval.hpp"
#include "notellm/store.hpp"

namespace notellm {

namespace fs = std::filesystem;

struct GeneratedData {
  Corpus corpus;
  BehaviorLog log;
};

inline GeneratedData generate_data(const ExperimentConfig& cfg) {
  const auto vocab = default_vocabulary(cfg.vocabulary_words);
  auto corpus = generate_synthetic_corpus(cfg.corpus, vocab);
  auto log = generate_synthetic_log(cfg.log, corpus);
  return {std::move(corpus), std::move(log)};
}

inline RelatedPairSet mine_pairs(const ExperimentConfig& cfg, const BehaviorLog& log) {
  return mine_related_pairs(cooccurrence_scores(log), cfg.mining);
}

struct PairSplit {
  RelatedPairSet train;
  RelatedPairSet test;
};

// Collapses reciprocal pairs, then holds out floor(test_fraction * n) of them,
// chosen by a seeded shuffle. Both halves keep mined order.
inline PairSplit split_pairs(const RelatedPairSet& mined, double test_fraction, std::uint64_t seed) {
  const auto collapsed = collapse_reciprocal(mined);
  const std::size_t n = collapsed.pairs.size();
  const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), std::mt19937_64(seed));
  std::vector<char> is_test(n, 0);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = 1;
  PairSplit s;
  for (std::size_t i = 0; i < n; ++i) (is_test[i] ? s.test : s.train).pairs.push_back(collapsed.pairs[i]);
  return s;
}

// Notes that appear in a pair set / the rest of the corpus, in corpus order.
inline std::pair<std::vector<Note>, std::vector<Note>> partition_notes(const Corpus& corpus, const RelatedPairSet& seen) {
  std::set<std::string> ids;
  for (const auto& p : seen.pairs) {
    ids.insert(p.src);
    ids.insert(p.dst);
  }
  std::vector<Note> in, out;
  for (const auto& n : corpus.notes()) (ids.contains(n.id) ? in : out).push_back(n);
  return {std::move(in), std::move(out)};
}

template <typename T>
TrainResult<T> train_model(const ExperimentConfig& cfg, const Corpus& corpus, const RelatedPairSet& train_pairs,
                           const StepCallback& on_step = {}) {
  const auto pairs = pairs_to_training_examples(train_pairs, corpus);
  return train<T>(corpus, pairs, cfg.model, cfg.train, cfg.trunc, on_step);
}

struct EvalOutput {
  std::vector<RetrievalReport> retrieval;
  std::vector<std::pair<std::string, GenerationReport>> generation;

  std::string jsonl() const {
    std::string s;
    for (const auto& r : retrieval) s += report_jsonl(r);
    for (const auto& [split, g] : generation) s += report_jsonl(g, split);
    return s;
  }
  std::string table() const {
    std::string s;
    for (const auto& r : retrieval) s += report_table(r);
    for (const auto& [split, g] : generation) s += report_table(g, split);
    return s;
  }
};

// Retrieval over the whole corpus for `eval_pairs` (model and word-overlap
// baseline), then generation metrics on notes seen in `train_pairs` and on
// the remaining (held-out) notes, each capped at max_generation_notes.
inline EvalOutput evaluate(const ExperimentConfig& cfg, const ModelParams<float>& params, const Corpus& corpus,
                           const RelatedPairSet& eval_pairs, const RelatedPairSet& train_pairs,
                           bool with_generation = true) {
  EvalOutput out;
  const auto pairs = make_eval_pairs(eval_pairs, corpus);
  std::vector<std::uint64_t> exposures;
  for (const auto& p : pairs) exposures.push_back(corpus[p.ground_truth].exposure);
  const auto ks = resolve_recall_ks(cfg.eval, corpus.size());

  if (corpus.size() >= 2) {
    RankIndex index(embed_pool(params, corpus.notes(), cfg.trunc), note_ids(corpus.notes()));
    out.retrieval.push_back(retrieval_report("notellm", corpus.size(), model_positions(index, pairs), exposures, ks));
    out.retrieval.push_back(
        retrieval_report("lexical", corpus.size(), lexical_positions(corpus.notes(), pairs), exposures, ks));
  }
  if (with_generation) {
    auto [seen, held_out] = partition_notes(corpus, train_pairs);
    auto cap = [&](std::vector<Note>& v) {
      if (v.size() > cfg.eval.max_generation_notes) v.resize(cfg.eval.max_generation_notes);
    };
    cap(seen);
    cap(held_out);
    if (!seen.empty())
      out.generation.emplace_back(
          "train", evaluate_generation(params, seen, corpus.categories(), cfg.trunc, cfg.eval.max_new_tokens));
    if (!held_out.empty())
      out.generation.emplace_back(
          "held-out", evaluate_generation(params, held_out, corpus.categories(), cfg.trunc, cfg.eval.max_new_tokens));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Experiment directory

struct ExperimentPaths {
  fs::path root;
  fs::path config() const { return root / "config.txt"; }
  fs::path notes() const { return root / "data" / "notes.jsonl"; }
  fs::path log() const { return root / "data" / "log.jsonl"; }
  fs::path mined() const { return root / "pairs" / "mined.tsv"; }
  fs::path train_pairs() const { return root / "pairs" / "train.tsv"; }
  fs::path test_pairs() const { return root / "pairs" / "test.tsv"; }
  fs::path checkpoint() const { return root / "train" / "checkpoint.bin"; }
  fs::path metrics() const { return root / "train" / "metrics.jsonl"; }
  fs::path report() const { return root / "eval" / "report.jsonl"; }
  fs::path report_table() const { return root / "eval" / "report.txt"; }
  fs::path store() const { return root / "store.bin"; }
};

inline void write_text(const fs::path& p, std::string_view bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file(p.string(), bytes);
}

using Progress = std::function<void(const std::string&)>;

// Runs every stage into <out_root>/<experiment_dir_name(cfg)>. Any failure is
// rethrown with the stage name.
inline ExperimentPaths run_pipeline(const ExperimentConfig& cfg, const fs::path& out_root,
                                    const Progress& progress = {}, const StepCallback& on_step = {}) {
  cfg.validate();
  ExperimentPaths paths{out_root / experiment_dir_name(cfg)};
  auto stage = [&](const char* name, auto&& body) {
    if (progress) progress(name);
    try {
      body();
    } catch (const std::exception& e) {
      throw Error(std::string("stage '") + name + "' failed: " + e.what());
    }
  };
  write_text(paths.config(), config_text(cfg));

  std::optional<GeneratedData> data;
  stage("gen-data", [&] {
    data = generate_data(cfg);
    write_text(paths.notes(), serialize_corpus(data->corpus.notes()));
    write_text(paths.log(), serialize_log(data->log));
  });
  const Corpus& corpus = data->corpus;
  RelatedPairSet mined;
  PairSplit split;
  stage("mine-pairs", [&] {
    mined = mine_pairs(cfg, data->log);
    split = split_pairs(mined, cfg.eval.test_fraction, cfg.train.seed);
    write_text(paths.mined(), serialize_pairs(mined));
    write_text(paths.train_pairs(), serialize_pairs(split.train));
    write_text(paths.test_pairs(), serialize_pairs(split.test));
  });
  std::optional<ModelParams<float>> params;
  std::uint64_t fingerprint = 0;
  stage("train", [&] {
    auto r = train_model<float>(cfg, corpus, split.train, on_step);
    std::string metrics;
    for (const auto& s : r.metrics) metrics += metrics_line(s) + "\n";
    write_text(paths.metrics(), metrics);
    const auto bytes = serialize_checkpoint(r.params);
    write_text(paths.checkpoint(), bytes);
    fingerprint = fnv1a64(bytes);
    params = parse_checkpoint(bytes);  // evaluate exactly what was saved
  });
  stage("eval", [&] {
    const auto& eval_pairs = cfg.eval.test_fraction > 0.0 ? split.test : split.train;
    const auto out = evaluate(cfg, *params, corpus, eval_pairs, split.train);
    write_text(paths.report(), out.jsonl());
    write_text(paths.report_table(), out.table());
  });
  stage("build-store", [&] { write_text(paths.store(), serialize_store(build_store(*params, fingerprint, corpus, cfg.trunc))); });
  return paths;
}

}  // namespace notellm
