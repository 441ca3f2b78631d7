#pragma once

// Experiment configuration: every knob of every pipeline stage, a plain
// key=value text form, and named presets.

#include <charconv>
#include <functional>
#include <string>
#include <vector>

#include "notellm/common.hpp"
#include "notellm/corpus.hpp"
#include "notellm/model.hpp"
#include "notellm/pairs.hpp"
#include "notellm/prompt.hpp"
#include "notellm/train.hpp"

namespace notellm {

struct EvalConfig {
  std::vector<std::size_t> recall_ks;  // empty: 10, 100, 1000 and the pool size
  double test_fraction = 0.2;          // share of collapsed pairs held out of training; 0 evaluates on training pairs
  std::size_t max_new_tokens = 48;
  std::size_t max_generation_notes = 200;  // per split
};

struct ExperimentConfig {
  std::string name = "custom";
  std::size_t vocabulary_words = 400;
  CorpusGenConfig corpus;
  LogGenConfig log;
  PairMiningConfig mining;
  TruncationConfig trunc;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;

  void validate() const {
    mining.validate();
    trunc.validate();
    model.validate();
    train.validate();
    if (!(eval.test_fraction >= 0.0 && eval.test_fraction < 1.0)) throw Error("eval.test_fraction must be in [0, 1)");
    for (auto k : eval.recall_ks)
      if (k < 1) throw Error("eval.recall_ks entries must be >= 1");
  }
};

namespace detail {

template <typename Int>
Int parse_int(const std::string& key, const std::string& v) {
  Int out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw Error("field '" + key + "': expected an integer, got '" + v + "'");
  return out;
}

inline double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(out))
    throw Error("field '" + key + "': expected a number, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw Error("field '" + key + "': expected true or false, got '" + v + "'");
}

inline std::vector<std::size_t> parse_ks(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (trim(v).empty()) return out;
  for (const auto& part : split(v, ',')) out.push_back(parse_int<std::size_t>(key, std::string(trim(part))));
  return out;
}

inline std::string join_ks(const std::vector<std::size_t>& ks) {
  std::string s;
  for (std::size_t i = 0; i < ks.size(); ++i) s += (i ? "," : "") + std::to_string(ks[i]);
  return s;
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const std::string&)> set;
};

template <typename M>
Field field_of(std::string key, M ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) {
            const auto& v = c.*member;
            if constexpr (std::is_same_v<M, std::string>) return v;
            else return std::to_string(v);
          },
          [key, member](ExperimentConfig& c, const std::string& v) {
            if constexpr (std::is_same_v<M, std::string>) c.*member = v;
            else c.*member = parse_int<M>(key, v);
          }};
}

// Member of a nested config struct.
template <typename S, typename M>
Field nested(std::string key, S ExperimentConfig::*outer, M S::*inner) {
  return {key,
          [outer, inner](const ExperimentConfig& c) -> std::string {
            const auto& v = c.*outer.*inner;
            if constexpr (std::is_same_v<M, bool>) return v ? "true" : "false";
            else if constexpr (std::is_floating_point_v<M>) return format_double(v);
            else if constexpr (std::is_same_v<M, OptimizerKind>) return optimizer_name(v);
            else if constexpr (std::is_same_v<M, std::vector<std::size_t>>) return join_ks(v);
            else return std::to_string(v);
          },
          [key, outer, inner](ExperimentConfig& c, const std::string& v) {
            auto& dst = c.*outer.*inner;
            if constexpr (std::is_same_v<M, bool>) dst = parse_bool(key, v);
            else if constexpr (std::is_floating_point_v<M>) dst = parse_real(key, v);
            else if constexpr (std::is_same_v<M, OptimizerKind>) {
              try {
                dst = parse_optimizer(v);
              } catch (const Error& e) {
                throw Error("field '" + key + "': " + e.what());
              }
            } else if constexpr (std::is_same_v<M, std::vector<std::size_t>>) dst = parse_ks(key, v);
            else dst = parse_int<M>(key, v);
          }};
}

inline const std::vector<Field>& fields() {
  using E = ExperimentConfig;
  static const std::vector<Field> table = {
      field_of("name", &E::name),
      field_of("vocabulary_words", &E::vocabulary_words),
      nested("corpus.seed", &E::corpus, &CorpusGenConfig::seed),
      nested("corpus.n_notes", &E::corpus, &CorpusGenConfig::n_notes),
      nested("corpus.n_categories", &E::corpus, &CorpusGenConfig::n_categories),
      nested("corpus.category_word_prob", &E::corpus, &CorpusGenConfig::category_word_prob),
      nested("corpus.hashtagless_fraction", &E::corpus, &CorpusGenConfig::hashtagless_fraction),
      nested("corpus.min_title_words", &E::corpus, &CorpusGenConfig::min_title_words),
      nested("corpus.max_title_words", &E::corpus, &CorpusGenConfig::max_title_words),
      nested("corpus.min_content_words", &E::corpus, &CorpusGenConfig::min_content_words),
      nested("corpus.max_content_words", &E::corpus, &CorpusGenConfig::max_content_words),
      nested("corpus.max_hashtags", &E::corpus, &CorpusGenConfig::max_hashtags),
      nested("corpus.exposure_min", &E::corpus, &CorpusGenConfig::exposure_min),
      nested("corpus.exposure_shape", &E::corpus, &CorpusGenConfig::exposure_shape),
      nested("log.seed", &E::log, &LogGenConfig::seed),
      nested("log.n_users", &E::log, &LogGenConfig::n_users),
      nested("log.n_events", &E::log, &LogGenConfig::n_events),
      nested("log.same_category_bias", &E::log, &LogGenConfig::same_category_bias),
      nested("log.partner_bias", &E::log, &LogGenConfig::partner_bias),
      nested("log.active_user_fraction", &E::log, &LogGenConfig::active_user_fraction),
      nested("log.active_user_weight", &E::log, &LogGenConfig::active_user_weight),
      nested("mining.upper_bound", &E::mining, &PairMiningConfig::upper_bound),
      nested("mining.lower_bound", &E::mining, &PairMiningConfig::lower_bound),
      nested("mining.top_t", &E::mining, &PairMiningConfig::top_t),
      nested("prompt.max_title_tokens", &E::trunc, &TruncationConfig::max_title_tokens),
      nested("prompt.max_content_tokens", &E::trunc, &TruncationConfig::max_content_tokens),
      nested("model.vocab_size", &E::model, &ModelConfig::vocab_size),
      nested("model.hidden_dim", &E::model, &ModelConfig::hidden_dim),
      nested("model.n_layers", &E::model, &ModelConfig::n_layers),
      nested("model.n_heads", &E::model, &ModelConfig::n_heads),
      nested("model.max_seq_len", &E::model, &ModelConfig::max_seq_len),
      nested("model.embed_dim", &E::model, &ModelConfig::embed_dim),
      nested("model.ffn_dim", &E::model, &ModelConfig::ffn_dim),
      nested("train.batch_pairs", &E::train, &TrainConfig::batch_pairs),
      nested("train.alpha", &E::train, &TrainConfig::alpha),
      nested("train.hashtag_ratio", &E::train, &TrainConfig::hashtag_ratio),
      nested("train.tau_init", &E::train, &TrainConfig::tau_init),
      nested("train.use_gcl", &E::train, &TrainConfig::use_gcl),
      nested("train.learning_rate", &E::train, &TrainConfig::learning_rate),
      nested("train.steps", &E::train, &TrainConfig::steps),
      nested("train.seed", &E::train, &TrainConfig::seed),
      nested("train.optimizer", &E::train, &TrainConfig::optimizer),
      nested("train.momentum", &E::train, &TrainConfig::momentum),
      nested("train.adam_beta1", &E::train, &TrainConfig::adam_beta1),
      nested("train.adam_beta2", &E::train, &TrainConfig::adam_beta2),
      nested("train.adam_eps", &E::train, &TrainConfig::adam_eps),
      nested("train.grad_clip", &E::train, &TrainConfig::grad_clip),
      nested("train.warmup_steps", &E::train, &TrainConfig::warmup_steps),
      nested("train.cosine_decay", &E::train, &TrainConfig::cosine_decay),
      nested("train.dedup_retries", &E::train, &TrainConfig::dedup_retries),
      nested("eval.recall_ks", &E::eval, &EvalConfig::recall_ks),
      nested("eval.test_fraction", &E::eval, &EvalConfig::test_fraction),
      nested("eval.max_new_tokens", &E::eval, &EvalConfig::max_new_tokens),
      nested("eval.max_generation_notes", &E::eval, &EvalConfig::max_generation_notes),
  };
  return table;
}

}  // namespace detail

inline void set_field(ExperimentConfig& c, const std::string& key, const std::string& value) {
  for (const auto& f : detail::fields())
    if (f.key == key) return f.set(c, std::string(trim(value)));
  throw Error("unknown config field '" + key + "'");
}

inline std::string get_field(const ExperimentConfig& c, const std::string& key) {
  for (const auto& f : detail::fields())
    if (f.key == key) return f.get(c);
  throw Error("unknown config field '" + key + "'");
}

// One "key=value" line per field, in a fixed order.
inline std::string config_text(const ExperimentConfig& c) {
  std::string out;
  for (const auto& f : detail::fields()) out += f.key + "=" + f.get(c) + "\n";
  return out;
}

// Applies "key=value" lines on top of `c`; blank lines and '#' comments are skipped.
inline void apply_config_text(ExperimentConfig& c, std::string_view text) {
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error("config line " + std::to_string(line_no) + ": expected key=value");
    set_field(c, std::string(trim(line.substr(0, eq))), std::string(line.substr(eq + 1)));
  }
}

inline std::uint64_t config_hash(const ExperimentConfig& c) { return fnv1a64(config_text(c)); }

// "<name>-<first 12 hex digits of the config hash>", with '/' and '+' made path-safe.
inline std::string experiment_dir_name(const ExperimentConfig& c) {
  std::string n = c.name;
  for (char& ch : n)
    if (ch == '/' || ch == '+' || ch == ' ' || ch == '=') ch = '_';
  return n + "-" + hex64(config_hash(c)).substr(0, 12);
}

inline std::vector<std::size_t> resolve_recall_ks(const EvalConfig& e, std::size_t pool) {
  if (!e.recall_ks.empty()) return e.recall_ks;
  return {10, 100, 1000, pool};
}

// ---------------------------------------------------------------------------
// Presets
//
// Base presets set a complete configuration:
//   desk   a few thousand notes, default model, a 10-minute-class CPU run
//   smoke  64 notes, one mined partner per note, trained and evaluated on the same pairs
//   tiny   a seconds-long end-to-end run used by tests
// Ablation presets modify whatever came before them:
//   no-csft      alpha = 0
//   no-gcl       generation loss only
//   r-sweep      r in {0, 0.2, 0.4, 0.6, 0.8, 1}
//   alpha-sweep  alpha in {0, 0.001, 0.01, 0.1, 1, 10}
// A preset list such as "tiny,no-csft" applies left to right; sweeps multiply.

inline ExperimentConfig desk_preset() {
  ExperimentConfig c;
  c.name = "desk";
  c.corpus.n_notes = 2000;
  c.corpus.n_categories = 12;
  c.log.n_users = 500;
  c.log.n_events = 40000;
  c.log.partner_bias = 0.3;
  c.mining.top_t = 3;
  c.train.batch_pairs = 16;
  c.train.steps = 1500;
  c.train.optimizer = OptimizerKind::kAdam;
  c.train.learning_rate = 3e-4;
  c.train.warmup_steps = 100;
  c.train.grad_clip = 1.0;
  return c;
}

inline ExperimentConfig smoke_preset() {
  ExperimentConfig c;
  c.name = "smoke";
  c.corpus.n_notes = 64;
  c.log.n_users = 100;
  c.log.n_events = 3000;
  c.log.partner_bias = 0.6;
  c.mining.top_t = 1;
  c.train.batch_pairs = 8;
  c.train.steps = 1600;
  c.train.alpha = 1.0;
  c.train.optimizer = OptimizerKind::kAdam;
  c.train.learning_rate = 1e-3;
  c.train.warmup_steps = 100;
  c.train.cosine_decay = true;
  c.train.grad_clip = 1.0;
  c.eval.test_fraction = 0.0;
  c.eval.recall_ks = {1, 10, 63};
  return c;
}

inline ExperimentConfig tiny_preset() {
  ExperimentConfig c;
  c.name = "tiny";
  c.corpus.n_notes = 24;
  c.corpus.n_categories = 3;
  c.log.n_users = 20;
  c.log.n_events = 600;
  c.log.partner_bias = 0.5;
  c.mining.top_t = 2;
  c.trunc = {8, 16};
  c.model.hidden_dim = 16;
  c.model.n_layers = 1;
  c.model.n_heads = 2;
  c.model.embed_dim = 8;
  c.model.max_seq_len = 320;
  c.train.batch_pairs = 4;
  c.train.steps = 6;
  c.train.optimizer = OptimizerKind::kAdam;
  c.train.learning_rate = 1e-3;
  c.eval.max_new_tokens = 8;
  c.eval.max_generation_notes = 4;
  return c;
}

inline std::vector<ExperimentConfig> apply_preset(const ExperimentConfig& base, const std::string& preset) {
  auto variant = [&](const std::string& suffix, auto&& edit) {
    ExperimentConfig c = base;
    c.name = base.name + "+" + suffix;
    edit(c);
    return c;
  };
  if (preset == "desk") return {desk_preset()};
  if (preset == "smoke") return {smoke_preset()};
  if (preset == "tiny") return {tiny_preset()};
  if (preset == "no-csft") return {variant(preset, [](ExperimentConfig& c) { c.train.alpha = 0.0; })};
  if (preset == "no-gcl") return {variant(preset, [](ExperimentConfig& c) { c.train.use_gcl = false; })};
  if (preset == "r-sweep" || preset == "alpha-sweep") {
    const bool r = preset == "r-sweep";
    const std::vector<double> values =
        r ? std::vector<double>{0, 0.2, 0.4, 0.6, 0.8, 1.0} : std::vector<double>{0, 0.001, 0.01, 0.1, 1, 10};
    std::vector<ExperimentConfig> out;
    for (double v : values)
      out.push_back(variant((r ? "r=" : "alpha=") + format_double(v), [&](ExperimentConfig& c) {
        (r ? c.train.hashtag_ratio : c.train.alpha) = v;
      }));
    return out;
  }
  throw Error("unknown preset '" + preset + "' (known: desk, smoke, tiny, no-csft, no-gcl, r-sweep, alpha-sweep)");
}

// Comma-separated preset list, applied left to right starting from `base`.
inline std::vector<ExperimentConfig> resolve_presets(const ExperimentConfig& base, std::string_view list) {
  std::vector<ExperimentConfig> current{base};
  for (const auto& raw : split(list, ',')) {
    const std::string name(trim(raw));
    if (name.empty()) continue;
    std::vector<ExperimentConfig> next;
    for (const auto& c : current)
      for (auto& v : apply_preset(c, name)) next.push_back(std::move(v));
    current = std::move(next);
  }
  return current;
}

}  // namespace notellm
