#pragma once

// Batch assembly, combined contrastive + generation objective, optimizers and
// the training loop.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "notellm/common.hpp"
#include "notellm/corpus.hpp"
#include "notellm/losses.hpp"
#include "notellm/model.hpp"
#include "notellm/pairs.hpp"
#include "notellm/prompt.hpp"

namespace notellm {

enum class OptimizerKind { kSgd, kMomentum, kAdam };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "momentum") return OptimizerKind::kMomentum;
  if (s == "adam") return OptimizerKind::kAdam;
  throw Error("optimizer: expected sgd|momentum|adam, got '" + s + "'");
}

inline const char* optimizer_name(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::kSgd: return "sgd";
    case OptimizerKind::kMomentum: return "momentum";
    case OptimizerKind::kAdam: return "adam";
  }
  return "?";
}

struct TrainConfig {
  std::size_t batch_pairs = 64;  // B; a batch holds 2B notes
  double alpha = 0.01;
  double hashtag_ratio = 0.40;  // r
  double tau_init = 3.0;
  bool use_gcl = true;          // false trains on the generation loss alone
  double learning_rate = 0.05;
  std::size_t steps = 1000;
  std::uint64_t seed = 1;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // global L2 norm; 0 disables
  std::size_t warmup_steps = 0;  // linear learning-rate ramp
  bool cosine_decay = false;     // after warmup, decay to 0 at `steps`
  std::size_t dedup_retries = 3;

  void validate() const {
    if (batch_pairs < 1) throw Error("batch_pairs must be >= 1");
    if (!(alpha >= 0.0)) throw Error("alpha must be >= 0");
    if (!(hashtag_ratio >= 0.0 && hashtag_ratio <= 1.0)) throw Error("hashtag_ratio must be in [0, 1]");
    if (!(learning_rate > 0.0)) throw Error("learning_rate must be > 0");
    if (!std::isfinite(tau_init)) throw Error("tau_init must be finite");
    if (!(grad_clip >= 0.0)) throw Error("grad_clip must be >= 0");
  }
};

// Learning rate for update number t (1-based).
inline double learning_rate_at(const TrainConfig& cfg, std::size_t t) {
  double f = 1.0;
  if (cfg.warmup_steps > 0 && t < cfg.warmup_steps)
    f = static_cast<double>(t) / static_cast<double>(cfg.warmup_steps);
  else if (cfg.cosine_decay && cfg.steps > cfg.warmup_steps) {
    const double x = static_cast<double>(t - cfg.warmup_steps) / static_cast<double>(cfg.steps - cfg.warmup_steps);
    f = 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, x)));
  }
  return cfg.learning_rate * f;
}

// 2B prompt samples; rows 2k and 2k+1 are a related pair.
struct TrainBatch {
  std::vector<std::size_t> notes;  // corpus indices
  std::vector<PromptSample> samples;
  std::size_t skipped_pairs = 0;   // pairs rejected for id collisions

  std::size_t size() const { return samples.size(); }
  std::size_t hashtag_count() const {
    return static_cast<std::size_t>(std::count_if(samples.begin(), samples.end(),
                                                  [](const PromptSample& s) { return s.task == TaskKind::kHashtag; }));
  }
};

// Number of hashtag-task notes in a batch of n notes.
inline std::size_t hashtag_quota(double r, std::size_t n) {
  return static_cast<std::size_t>(std::llround(r * static_cast<double>(n)));
}

// Draws up to B pairs with no note id repeated inside the batch, then assigns
// round(r * 2B) notes (among those with hashtags) to the hashtag task.
template <class Rng>
TrainBatch assemble_batch(std::span<const TrainingPair> pairs, const Corpus& corpus, const TrainConfig& cfg,
                          const TruncationConfig& trunc, Rng& rng) {
  if (pairs.empty()) throw Error("assemble_batch: no pairs");
  // Greedy fill over a fresh shuffle; retried a bounded number of times when
  // id collisions leave the batch short, keeping the fullest attempt.
  TrainBatch b;
  for (std::size_t attempt = 0; attempt <= cfg.dedup_retries; ++attempt) {
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    TrainBatch cand;
    std::set<std::size_t> used;
    for (std::size_t k : order) {
      if (cand.notes.size() == 2 * cfg.batch_pairs) break;
      const auto& p = pairs[k];
      if (p.anchor == p.positive || used.count(p.anchor) || used.count(p.positive)) {
        ++cand.skipped_pairs;
        continue;
      }
      used.insert(p.anchor);
      used.insert(p.positive);
      cand.notes.push_back(p.anchor);
      cand.notes.push_back(p.positive);
    }
    if (attempt == 0 || cand.notes.size() > b.notes.size()) b = std::move(cand);
    if (b.notes.size() == 2 * cfg.batch_pairs || b.notes.size() == 2 * pairs.size()) break;
  }
  if (b.notes.empty()) throw Error("assemble_batch: no usable pair (self-pairs only)");

  const std::size_t n = b.notes.size();
  std::vector<std::size_t> slots(n);
  std::iota(slots.begin(), slots.end(), std::size_t{0});
  std::shuffle(slots.begin(), slots.end(), rng);
  std::vector<TaskKind> task(n, TaskKind::kCategory);
  std::size_t quota = hashtag_quota(cfg.hashtag_ratio, n);
  for (std::size_t s : slots) {
    if (quota == 0) break;
    if (corpus[b.notes[s]].hashtags.empty()) continue;
    task[s] = TaskKind::kHashtag;
    --quota;
  }
  b.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) b.samples.push_back(build_prompt(corpus[b.notes[i]], task[i], trunc, rng));
  return b;
}

struct StepStats {
  std::size_t step = 0;
  double l_cl = 0.0;
  double l_gen = 0.0;
  double total = 0.0;
  double tau = 0.0;
};

inline std::string metrics_line(const StepStats& s) {
  nlohmann::ordered_json j;
  j["step"] = s.step;
  j["l_cl"] = s.l_cl;
  j["l_gen"] = s.l_gen;
  j["total"] = s.total;
  j["tau"] = s.tau;
  return j.dump();
}

template <typename T>
struct BatchLoss {
  StepStats stats;
  ModelParams<T> grads;  // filled only when gradients were requested
};

// Objective over one batch: L = (L_cl + alpha * mean_i L_gen,i) / (1 + alpha),
// or L = mean_i L_gen,i when the contrastive term is disabled.
template <typename T>
BatchLoss<T> batch_loss(const ModelParams<T>& p, const TrainBatch& batch, const TrainConfig& cfg,
                        bool with_grads = true) {
  const std::size_t n = batch.size();
  if (n < 2 || n % 2) throw Error("batch_loss: batch must hold complete pairs");
  const T alpha = static_cast<T>(cfg.alpha);
  const T cl_w = cfg.use_gcl ? T(1) / (T(1) + alpha) : T(0);
  const T gen_w = cfg.use_gcl ? alpha / (T(1) + alpha) : T(1);

  std::vector<ForwardTrace<T>> traces;
  traces.reserve(n);
  Mat<T> emb(static_cast<Eigen::Index>(n), p.config.embed_dim);
  std::vector<CsftResult<T>> gen(n);
  T l_gen = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = batch.samples[i];
    traces.push_back(forward(p, s.tokens));
    emb.row(static_cast<Eigen::Index>(i)) = project_embedding(p, traces.back(), s.compression_pos);
    gen[i] = csft_loss(traces.back(), s);
    l_gen += gen[i].loss;
  }
  l_gen /= static_cast<T>(n);

  const auto pairing = adjacent_pairing(n);
  GclResult<T> gcl;
  if (cfg.use_gcl) gcl = gcl_loss<T>(emb, pairing, p.tau(0, 0));

  BatchLoss<T> out;
  out.stats.l_cl = static_cast<double>(gcl.loss);
  out.stats.l_gen = static_cast<double>(l_gen);
  out.stats.total = cfg.use_gcl ? total_loss(out.stats.l_cl, out.stats.l_gen, cfg.alpha) : out.stats.l_gen;
  out.stats.tau = static_cast<double>(p.tau(0, 0));
  if (!with_grads) return out;

  out.grads = ModelParams<T>::zeros(p.config);
  const T gen_scale = gen_w / static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i) {
    LossAdjoint<T> adj;
    if (gen_scale != T(0)) {
      adj.d_logits = gen[i].d_logits * gen_scale;
      adj.logits_row0 = gen[i].row0;
    }
    if (cfg.use_gcl) {
      adj.d_embedding = gcl.d_embeddings.row(static_cast<Eigen::Index>(i)) * cl_w;
      adj.emb_pos = batch.samples[i].compression_pos;
    }
    backward(p, traces[i], adj, out.grads);
  }
  out.grads.tau(0, 0) = gcl.d_tau * cl_w;
  return out;
}

template <typename T>
class Optimizer {
 public:
  Optimizer(const TrainConfig& cfg, const ModelConfig& mcfg) : cfg_(cfg) {
    if (cfg.optimizer != OptimizerKind::kSgd) m_ = ModelParams<T>::zeros(mcfg);
    if (cfg.optimizer == OptimizerKind::kAdam) v_ = ModelParams<T>::zeros(mcfg);
  }

  void step(ModelParams<T>& p, ModelParams<T>& g) {
    ++t_;
    if (cfg_.grad_clip > 0.0) {
      double sq = 0.0;
      g.for_each([&](const std::string&, const Mat<T>& m) { sq += static_cast<double>(m.squaredNorm()); });
      const double norm = std::sqrt(sq);
      if (norm > cfg_.grad_clip) {
        const T s = static_cast<T>(cfg_.grad_clip / norm);
        g.for_each([&](const std::string&, Mat<T>& m) { m *= s; });
      }
    }
    std::vector<Mat<T>*> ps, gs, ms, vs;
    p.for_each([&](const std::string&, Mat<T>& m) { ps.push_back(&m); });
    g.for_each([&](const std::string&, Mat<T>& m) { gs.push_back(&m); });
    if (cfg_.optimizer != OptimizerKind::kSgd) m_.for_each([&](const std::string&, Mat<T>& m) { ms.push_back(&m); });
    if (cfg_.optimizer == OptimizerKind::kAdam) v_.for_each([&](const std::string&, Mat<T>& m) { vs.push_back(&m); });
    const T lr = static_cast<T>(learning_rate_at(cfg_, t_));
    for (std::size_t k = 0; k < ps.size(); ++k) {
      auto& P = *ps[k];
      const auto& G = *gs[k];
      switch (cfg_.optimizer) {
        case OptimizerKind::kSgd:
          P.noalias() -= lr * G;
          break;
        case OptimizerKind::kMomentum:
          *ms[k] = static_cast<T>(cfg_.momentum) * *ms[k] + G;
          P.noalias() -= lr * *ms[k];
          break;
        case OptimizerKind::kAdam: {
          const T b1 = static_cast<T>(cfg_.adam_beta1), b2 = static_cast<T>(cfg_.adam_beta2);
          *ms[k] = b1 * *ms[k] + (T(1) - b1) * G;
          vs[k]->array() = b2 * vs[k]->array() + (T(1) - b2) * G.array().square();
          const T c1 = T(1) - static_cast<T>(std::pow(cfg_.adam_beta1, static_cast<double>(t_)));
          const T c2 = T(1) - static_cast<T>(std::pow(cfg_.adam_beta2, static_cast<double>(t_)));
          P.array() -= lr * (ms[k]->array() / c1) / ((vs[k]->array() / c2).sqrt() + static_cast<T>(cfg_.adam_eps));
          break;
        }
      }
    }
  }

 private:
  TrainConfig cfg_;
  ModelParams<T> m_, v_;
  std::size_t t_ = 0;
};

template <typename T>
struct TrainResult {
  ModelParams<T> params;
  std::vector<StepStats> metrics;
  std::size_t skipped_pairs = 0;
};

using StepCallback = std::function<void(const StepStats&)>;

// Deterministic given (corpus, pairs, configs): one RNG seeds initialization,
// batch sampling and hashtag subsets.
template <typename T>
TrainResult<T> train(const Corpus& corpus, std::span<const TrainingPair> pairs, const ModelConfig& mcfg,
                     const TrainConfig& cfg, const TruncationConfig& trunc = {}, const StepCallback& on_step = {}) {
  cfg.validate();
  mcfg.validate();
  trunc.validate();
  if (pairs.empty()) throw Error("train: empty pair list");
  TrainResult<T> r;
  r.params = init_params<T>(mcfg, cfg.seed, cfg.tau_init);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Optimizer<T> opt(cfg, mcfg);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    auto batch = assemble_batch(pairs, corpus, cfg, trunc, rng);
    r.skipped_pairs += batch.skipped_pairs;
    auto bl = batch_loss(r.params, batch, cfg);
    bl.stats.step = step;
    if (!std::isfinite(bl.stats.total)) throw Error("training diverged at step " + std::to_string(step));
    opt.step(r.params, bl.grads);
    if (!all_finite(r.params)) throw Error("non-finite parameters after step " + std::to_string(step));
    r.metrics.push_back(bl.stats);
    if (on_step) on_step(bl.stats);
  }
  return r;
}

}  // namespace notellm
