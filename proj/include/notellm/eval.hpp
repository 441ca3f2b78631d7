#pragma once

// Retrieval and generation evaluation: pool embedding, exact cosine ranking,
// Recall@K (overall and by exposure stratum), category accuracy / illusory
// rate, BLEU-4 and ROUGE-1/2/L, and a word-overlap baseline.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "notellm/common.hpp"
#include "notellm/corpus.hpp"
#include "notellm/model.hpp"
#include "notellm/pairs.hpp"
#include "notellm/prompt.hpp"

namespace notellm {

// ---------------------------------------------------------------------------
// Embedding and ranking

template <typename T>
Mat<float> embed_pool(const ModelParams<T>& p, std::span<const Note> notes, const TruncationConfig& trunc = {}) {
  Mat<float> out(static_cast<Eigen::Index>(notes.size()), p.config.embed_dim);
  for (std::size_t i = 0; i < notes.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = note_embedding(p, build_embedding_prompt(notes[i], trunc)).template cast<float>();
  return out;
}

struct ScoredNote {
  std::size_t index = 0;
  double sim = 0.0;

  friend bool operator==(const ScoredNote&, const ScoredNote&) = default;
};

// Cosine similarity in double from float vectors, accumulated left to right.
// A zero-norm vector scores 0 against everything.
inline double row_norm(const Mat<float>& m, Eigen::Index r) {
  double s = 0.0;
  for (Eigen::Index k = 0; k < m.cols(); ++k) s += double(m(r, k)) * double(m(r, k));
  return std::sqrt(s);
}

class RankIndex {
 public:
  RankIndex(const Mat<float>& pool, std::vector<std::string> ids) : pool_(pool), ids_(std::move(ids)) {
    if (static_cast<Eigen::Index>(ids_.size()) != pool_.rows()) throw Error("rank index: id/row count mismatch");
    norms_.resize(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) norms_[i] = row_norm(pool_, static_cast<Eigen::Index>(i));
  }

  std::size_t size() const { return ids_.size(); }
  const std::vector<std::string>& ids() const { return ids_; }
  const Mat<float>& vectors() const { return pool_; }

  std::vector<double> scores(const float* q) const {
    double qn = 0.0;
    for (Eigen::Index k = 0; k < pool_.cols(); ++k) qn += double(q[k]) * double(q[k]);
    qn = std::sqrt(qn);
    std::vector<double> s(ids_.size(), 0.0);
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (qn == 0.0 || norms_[i] == 0.0) continue;
      double dot = 0.0;
      const float* row = pool_.row(static_cast<Eigen::Index>(i)).data();
      for (Eigen::Index k = 0; k < pool_.cols(); ++k) dot += double(q[k]) * double(row[k]);
      s[i] = dot / (qn * norms_[i]);
    }
    return s;
  }

  // Descending similarity, ties by ascending id; `exclude` is dropped.
  // k = 0 returns the full ranking.
  std::vector<ScoredNote> query(const float* q, std::optional<std::size_t> exclude, std::size_t k = 0) const {
    const auto s = scores(q);
    std::vector<ScoredNote> all;
    all.reserve(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i)
      if (!exclude || *exclude != i) all.push_back({i, s[i]});
    auto before = [&](const ScoredNote& a, const ScoredNote& b) {
      if (a.sim != b.sim) return a.sim > b.sim;
      return ids_[a.index] < ids_[b.index];
    };
    if (k == 0 || k >= all.size()) {
      std::sort(all.begin(), all.end(), before);
    } else {
      std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), before);
      all.resize(k);
    }
    return all;
  }

  std::vector<ScoredNote> rank(std::size_t target, std::size_t k = 0) const {
    if (size() < 2) throw Error("rank: pool needs at least two notes");
    return query(pool_.row(static_cast<Eigen::Index>(target)).data(), target, k);
  }

 private:
  Mat<float> pool_;
  std::vector<std::string> ids_;
  std::vector<double> norms_;
};

inline std::vector<std::string> note_ids(std::span<const Note> notes) {
  std::vector<std::string> ids;
  ids.reserve(notes.size());
  for (const auto& n : notes) ids.push_back(n.id);
  return ids;
}

// ---------------------------------------------------------------------------
// Recall

struct EvalPair {
  std::size_t target = 0;
  std::size_t ground_truth = 0;
};

// First note of each (collapsed) related pair is the target, the other the
// ground truth. Pairs with an id outside the pool are skipped.
inline std::vector<EvalPair> make_eval_pairs(const RelatedPairSet& pairs, const Corpus& pool) {
  std::vector<EvalPair> out;
  for (const auto& p : collapse_reciprocal(pairs).pairs) {
    auto a = pool.find(p.src), b = pool.find(p.dst);
    if (a && b && *a != *b) out.push_back({*a, *b});
  }
  return out;
}

// 1-based position of `truth` in a ranking; 0 when absent.
inline std::size_t position_of(std::span<const ScoredNote> ranking, std::size_t truth) {
  for (std::size_t i = 0; i < ranking.size(); ++i)
    if (ranking[i].index == truth) return i + 1;
  return 0;
}

inline double recall_at_k(std::span<const std::size_t> positions, std::size_t k) {
  if (k < 1) throw Error("recall K must be >= 1");
  if (positions.empty()) return 0.0;
  const auto hits = std::count_if(positions.begin(), positions.end(), [&](std::size_t r) { return r >= 1 && r <= k; });
  return static_cast<double>(hits) / static_cast<double>(positions.size());
}

enum class Stratum { kLow, kOther, kHigh };

inline Stratum exposure_stratum(std::uint64_t exposure) {
  if (exposure < 1500) return Stratum::kLow;
  if (exposure > 75000) return Stratum::kHigh;
  return Stratum::kOther;
}

inline const char* stratum_name(Stratum s) {
  switch (s) {
    case Stratum::kLow: return "low";
    case Stratum::kOther: return "other";
    case Stratum::kHigh: return "high";
  }
  return "?";
}

// Recall per ground-truth exposure stratum; strata with no pairs are absent.
inline std::map<Stratum, double> stratified_recall(std::span<const std::size_t> positions,
                                                   std::span<const std::uint64_t> truth_exposures, std::size_t k) {
  if (positions.size() != truth_exposures.size()) throw Error("stratified_recall: size mismatch");
  std::map<Stratum, std::vector<std::size_t>> split_pos;
  for (std::size_t i = 0; i < positions.size(); ++i) split_pos[exposure_stratum(truth_exposures[i])].push_back(positions[i]);
  std::map<Stratum, double> out;
  for (const auto& [s, pos] : split_pos) out[s] = recall_at_k(pos, k);
  return out;
}

struct RecallRow {
  std::size_t k = 0;
  double recall = 0.0;
  std::map<Stratum, double> strata;
};

struct RetrievalReport {
  std::string method;
  std::size_t pool_size = 0;
  std::size_t pairs = 0;
  std::vector<RecallRow> rows;
};

inline RetrievalReport retrieval_report(std::string method, std::size_t pool_size,
                                        std::span<const std::size_t> positions,
                                        std::span<const std::uint64_t> truth_exposures, std::vector<std::size_t> ks) {
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  RetrievalReport r{std::move(method), pool_size, positions.size(), {}};
  for (std::size_t k : ks) r.rows.push_back({k, recall_at_k(positions, k), stratified_recall(positions, truth_exposures, k)});
  return r;
}

inline bool recall_is_monotone(const RetrievalReport& r) {
  for (std::size_t i = 1; i < r.rows.size(); ++i) {
    if (r.rows[i].recall < r.rows[i - 1].recall) return false;
    for (const auto& [s, v] : r.rows[i].strata) {
      auto it = r.rows[i - 1].strata.find(s);
      if (it != r.rows[i - 1].strata.end() && v < it->second) return false;
    }
  }
  return true;
}

// Positions of each pair's ground truth in the ranking of its target.
inline std::vector<std::size_t> model_positions(const RankIndex& index, std::span<const EvalPair> pairs) {
  std::vector<std::size_t> pos;
  pos.reserve(pairs.size());
  for (const auto& p : pairs) pos.push_back(position_of(index.rank(p.target), p.ground_truth));
  return pos;
}

// ---------------------------------------------------------------------------
// Lexical baseline

// Lowercased words of title, hashtags and content (split on whitespace and commas).
inline std::set<std::string> note_words(const Note& n) {
  std::string text = n.title + " " + n.content;
  for (const auto& h : n.hashtags) text += " " + h;
  std::set<std::string> words;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
      if (!cur.empty()) words.insert(cur);
      cur.clear();
    } else {
      cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
  }
  if (!cur.empty()) words.insert(cur);
  return words;
}

// Ranks by number of distinct shared words; ties by ascending id.
inline std::vector<ScoredNote> lexical_baseline_rank(std::size_t target, std::span<const Note> pool) {
  if (pool.size() < 2) throw Error("rank: pool needs at least two notes");
  const auto tw = note_words(pool[target]);
  std::vector<ScoredNote> out;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (i == target) continue;
    const auto w = note_words(pool[i]);
    std::size_t shared = 0;
    for (const auto& x : w) shared += tw.count(x);
    out.push_back({i, static_cast<double>(shared)});
  }
  std::sort(out.begin(), out.end(), [&](const ScoredNote& a, const ScoredNote& b) {
    if (a.sim != b.sim) return a.sim > b.sim;
    return pool[a.index].id < pool[b.index].id;
  });
  return out;
}

inline std::vector<std::size_t> lexical_positions(std::span<const Note> pool, std::span<const EvalPair> pairs) {
  std::vector<std::size_t> pos;
  for (const auto& p : pairs) pos.push_back(position_of(lexical_baseline_rank(p.target, pool), p.ground_truth));
  return pos;
}

// ---------------------------------------------------------------------------
// Generation metrics

struct CategoryMetrics {
  double accuracy = 0.0;
  double illusory = 0.0;
};

inline CategoryMetrics category_metrics(std::span<const std::string> generated, std::span<const std::string> truth,
                                        const CategorySet& cats) {
  if (generated.size() != truth.size()) throw Error("category_metrics: list sizes differ");
  if (generated.empty()) return {};
  std::size_t correct = 0, illusory = 0;
  for (std::size_t i = 0; i < generated.size(); ++i) {
    const auto g = trim(generated[i]);
    if (g == trim(truth[i])) ++correct;
    if (!cats.contains(g)) ++illusory;
  }
  const double n = static_cast<double>(generated.size());
  return {static_cast<double>(correct) / n, static_cast<double>(illusory) / n};
}

// Generated hashtag text -> tokens, splitting on whitespace and commas.
inline std::vector<std::string> hashtag_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c)) || c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

namespace detail {

inline std::map<std::vector<std::string>, std::size_t> ngram_counts(std::span<const std::string> toks, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> c;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++c[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
  return c;
}

// Clipped matches and candidate n-gram total.
inline std::pair<std::size_t, std::size_t> ngram_overlap(std::span<const std::string> cand,
                                                         std::span<const std::string> ref, std::size_t n) {
  const auto cc = ngram_counts(cand, n), rc = ngram_counts(ref, n);
  std::size_t match = 0, total = 0;
  for (const auto& [g, c] : cc) {
    total += c;
    auto it = rc.find(g);
    if (it != rc.end()) match += std::min(c, it->second);
  }
  return {match, total};
}

}  // namespace detail

// BLEU-4 with uniform weights and brevity penalty. For n = 2..4 a zero clipped
// match count becomes 1 / (c_n + 1), where c_n is the number of candidate
// n-grams (so candidates shorter than n get 1). Unigram precision is not
// smoothed: a candidate sharing no token with the reference scores 0.
inline double bleu4(std::span<const std::string> cand, std::span<const std::string> ref) {
  if (ref.empty()) throw Error("bleu4: empty reference");
  if (cand.empty()) return 0.0;
  double log_p = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto [m, c] = detail::ngram_overlap(cand, ref, n);
    if (m == 0 && n == 1) return 0.0;
    const double p = m > 0 ? static_cast<double>(m) / static_cast<double>(c) : 1.0 / (static_cast<double>(c) + 1.0);
    log_p += std::log(p) / 4.0;
  }
  const double c = static_cast<double>(cand.size()), r = static_cast<double>(ref.size());
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_p);
}

inline double f1(double match, double cand_total, double ref_total) {
  if (match == 0.0) return 0.0;
  const double p = match / cand_total, r = match / ref_total;
  return 2.0 * p * r / (p + r);
}

inline double rouge_n(std::span<const std::string> cand, std::span<const std::string> ref, std::size_t n) {
  if (n < 1) throw Error("rouge_n: n must be >= 1");
  const auto [m, c] = detail::ngram_overlap(cand, ref, n);
  const std::size_t r = ref.size() >= n ? ref.size() - n + 1 : 0;
  if (c == 0 || r == 0) return 0.0;
  return f1(static_cast<double>(m), static_cast<double>(c), static_cast<double>(r));
}

inline std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double rouge_l(std::span<const std::string> cand, std::span<const std::string> ref) {
  if (cand.empty() || ref.empty()) return 0.0;
  return f1(static_cast<double>(lcs_length(cand, ref)), static_cast<double>(cand.size()),
            static_cast<double>(ref.size()));
}

// ---------------------------------------------------------------------------
// Generation

inline constexpr std::size_t kDefaultMaxNewTokens = 48;

template <typename T>
std::string generate_output(const ModelParams<T>& p, const PromptSample& s, std::size_t max_new = kDefaultMaxNewTokens) {
  return decode(greedy_decode(p, s.prefix(), max_new));
}

template <typename T>
std::string generate_category(const ModelParams<T>& p, const Note& n, const TruncationConfig& trunc = {},
                              std::size_t max_new = kDefaultMaxNewTokens) {
  return generate_output(p, build_category_prompt(n, trunc), max_new);
}

// Asks for all of the note's hashtags in stored order; the reference is that
// full list.
inline PromptSample full_hashtag_prompt(const Note& n, const TruncationConfig& trunc = {}) {
  std::vector<std::size_t> all(n.hashtags.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return build_hashtag_prompt_with(n, trunc, all);
}

struct GenerationReport {
  std::size_t category_notes = 0;
  double accuracy = 0.0;
  double illusory = 0.0;
  std::size_t hashtag_notes = 0;
  double bleu4 = 0.0;
  double rouge1 = 0.0;
  double rouge2 = 0.0;
  double rougeL = 0.0;
};

template <typename T>
GenerationReport evaluate_generation(const ModelParams<T>& p, std::span<const Note> notes, const CategorySet& cats,
                                     const TruncationConfig& trunc = {},
                                     std::size_t max_new = kDefaultMaxNewTokens) {
  GenerationReport r;
  std::vector<std::string> gen, truth;
  for (const auto& n : notes) {
    gen.push_back(generate_category(p, n, trunc, max_new));
    truth.push_back(n.category);
    if (n.hashtags.empty()) continue;
    const auto s = full_hashtag_prompt(n, trunc);
    const auto cand = hashtag_tokens(generate_output(p, s, max_new));
    const auto ref = hashtag_tokens(s.target);
    r.bleu4 += bleu4(cand, ref);
    r.rouge1 += rouge_n(cand, ref, 1);
    r.rouge2 += rouge_n(cand, ref, 2);
    r.rougeL += rouge_l(cand, ref);
    ++r.hashtag_notes;
  }
  const auto cm = category_metrics(gen, truth, cats);
  r.category_notes = notes.size();
  r.accuracy = cm.accuracy;
  r.illusory = cm.illusory;
  if (r.hashtag_notes) {
    const double h = static_cast<double>(r.hashtag_notes);
    r.bleu4 /= h;
    r.rouge1 /= h;
    r.rouge2 /= h;
    r.rougeL /= h;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Report rendering

inline std::string report_jsonl(const RetrievalReport& r) {
  std::string out;
  for (const auto& row : r.rows) {
    nlohmann::ordered_json j;
    j["kind"] = "retrieval";
    j["method"] = r.method;
    j["pool"] = r.pool_size;
    j["pairs"] = r.pairs;
    j["k"] = row.k;
    j["recall"] = row.recall;
    for (Stratum s : {Stratum::kLow, Stratum::kOther, Stratum::kHigh}) {
      auto it = row.strata.find(s);
      if (it != row.strata.end()) j[std::string("recall_") + stratum_name(s)] = it->second;
    }
    out += j.dump() + "\n";
  }
  return out;
}

inline std::string report_jsonl(const GenerationReport& r, const std::string& split) {
  nlohmann::ordered_json j;
  j["kind"] = "generation";
  j["split"] = split;
  j["category_notes"] = r.category_notes;
  j["accuracy"] = r.accuracy;
  j["illusory"] = r.illusory;
  j["hashtag_notes"] = r.hashtag_notes;
  j["bleu4"] = r.bleu4;
  j["rouge1"] = r.rouge1;
  j["rouge2"] = r.rouge2;
  j["rougeL"] = r.rougeL;
  return j.dump() + "\n";
}

inline std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * v);
  return buf;
}

inline std::string report_table(const RetrievalReport& r) {
  std::string out = r.method + ": pool " + std::to_string(r.pool_size) + ", pairs " + std::to_string(r.pairs) + "\n";
  out += "  K        recall   low      other    high\n";
  for (const auto& row : r.rows) {
    char head[32];
    std::snprintf(head, sizeof head, "  %-8zu", row.k);
    out += head;
    out += " " + percent(row.recall) + "  ";
    for (Stratum s : {Stratum::kLow, Stratum::kOther, Stratum::kHigh}) {
      auto it = row.strata.find(s);
      out += it == row.strata.end() ? "     -   " : " " + percent(it->second) + "  ";
    }
    out += "\n";
  }
  return out;
}

inline std::string report_table(const GenerationReport& r, const std::string& split) {
  std::string out = "generation (" + split + ")\n";
  out += "  category: acc " + percent(r.accuracy) + "  ill " + percent(r.illusory) + "  over " +
         std::to_string(r.category_notes) + " notes\n";
  out += "  hashtags: BLEU4 " + percent(r.bleu4) + "  ROUGE1 " + percent(r.rouge1) + "  ROUGE2 " +
         percent(r.rouge2) + "  ROUGEL " + percent(r.rougeL) + "  over " + std::to_string(r.hashtag_notes) +
         " notes\n";
  return out;
}

}  // namespace notellm
