#pragma once

// Weighted co-occurrence scoring over click logs and related-note mining.
//
// s(A->B) = sum over users i of (#events "i viewed A then clicked B") / N_i,
// where N_i is the number of distinct notes user i clicked in the window.
// Contributions are summed per pair in ascending user-id order so the table
// does not depend on event order.

#include <algorithm>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "notellm/common.hpp"
#include "notellm/corpus.hpp"

namespace notellm {

using NotePairKey = std::pair<std::string, std::string>;  // (src, dst)

struct CoScoreTable {
  std::map<NotePairKey, double> scores;

  double at(const std::string& src, const std::string& dst) const {
    auto it = scores.find({src, dst});
    return it == scores.end() ? 0.0 : it->second;
  }
  std::size_t size() const { return scores.size(); }
};

struct PairMiningConfig {
  double upper_bound = 30.0;
  double lower_bound = 0.01;
  std::size_t top_t = 10;

  void validate() const {
    if (!(lower_bound >= 0.0)) throw Error("lower_bound must be >= 0");
    if (!(lower_bound < upper_bound)) throw Error("lower_bound must be < upper_bound");
    if (top_t < 1) throw Error("top_t must be >= 1");
  }
};

struct RelatedPair {
  std::string src;
  std::string dst;
  double score = 0.0;

  friend bool operator==(const RelatedPair&, const RelatedPair&) = default;
};

// Grouped by src (ascending), each group by descending score then ascending dst.
struct RelatedPairSet {
  std::vector<RelatedPair> pairs;
};

inline std::map<std::string, std::size_t> user_click_set_sizes(const BehaviorLog& log) {
  std::map<std::string, std::set<std::string>> clicked;
  for (const auto& e : log.events) clicked[e.user_id].insert(e.clicked);
  std::map<std::string, std::size_t> sizes;
  for (const auto& [user, notes] : clicked) sizes.emplace(user, notes.size());
  return sizes;
}

inline CoScoreTable cooccurrence_scores(const BehaviorLog& log) {
  const auto sizes = user_click_set_sizes(log);
  // pair -> user -> event count; std::map keeps users in ascending order.
  std::map<NotePairKey, std::map<std::string, std::size_t>> counts;
  for (const auto& e : log.events) {
    if (e.viewed == e.clicked) continue;
    ++counts[{e.viewed, e.clicked}][e.user_id];
  }
  CoScoreTable table;
  for (const auto& [key, per_user] : counts) {
    double s = 0.0;
    for (const auto& [user, c] : per_user)
      s += static_cast<double>(c) / static_cast<double>(sizes.at(user));
    if (s > 0.0) table.scores.emplace(key, s);
  }
  return table;
}

inline RelatedPairSet mine_related_pairs(const CoScoreTable& table, const PairMiningConfig& cfg) {
  cfg.validate();
  RelatedPairSet out;
  auto it = table.scores.begin();
  while (it != table.scores.end()) {
    const std::string& src = it->first.first;
    std::vector<RelatedPair> group;
    for (; it != table.scores.end() && it->first.first == src; ++it) {
      const double s = it->second;
      if (s < cfg.lower_bound || s > cfg.upper_bound) continue;
      group.push_back({src, it->first.second, s});
    }
    std::stable_sort(group.begin(), group.end(), [](const RelatedPair& a, const RelatedPair& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.dst < b.dst;
    });
    if (group.size() > cfg.top_t) group.resize(cfg.top_t);
    out.pairs.insert(out.pairs.end(), group.begin(), group.end());
  }
  return out;
}

// Keeps the first occurrence of each unordered {a, b}; used when an evaluation
// needs one target/ground-truth pair per related couple.
inline RelatedPairSet collapse_reciprocal(const RelatedPairSet& set) {
  std::set<NotePairKey> seen;
  RelatedPairSet out;
  for (const auto& p : set.pairs) {
    NotePairKey key = p.src < p.dst ? NotePairKey{p.src, p.dst} : NotePairKey{p.dst, p.src};
    if (seen.insert(key).second) out.pairs.push_back(p);
  }
  return out;
}

// Index pair into a Corpus: (anchor, related).
struct TrainingPair {
  std::size_t anchor = 0;
  std::size_t positive = 0;

  friend bool operator==(const TrainingPair&, const TrainingPair&) = default;
};

inline std::vector<TrainingPair> pairs_to_training_examples(const RelatedPairSet& set, const Corpus& corpus) {
  std::vector<TrainingPair> out;
  out.reserve(set.pairs.size());
  for (const auto& p : set.pairs) {
    auto a = corpus.find(p.src);
    auto b = corpus.find(p.dst);
    if (!a) throw Error("dangling note id in pair set: " + p.src);
    if (!b) throw Error("dangling note id in pair set: " + p.dst);
    out.push_back({*a, *b});
  }
  return out;
}

// Text format: one "src<TAB>dst<TAB>score" per line, score round-trip exact.
inline std::string serialize_pairs(const RelatedPairSet& set) {
  std::string out;
  for (const auto& p : set.pairs) {
    out += p.src;
    out += '\t';
    out += p.dst;
    out += '\t';
    out += format_double(p.score);
    out += '\n';
  }
  return out;
}

inline RelatedPairSet parse_pairs(std::string_view text) {
  RelatedPairSet set;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    if (trim(raw).empty()) continue;
    auto cols = split(raw, '\t');
    if (cols.size() != 3 || cols[0].empty() || cols[1].empty())
      throw Error("pairs line " + std::to_string(line_no) + ": expected src<TAB>dst<TAB>score");
    char* end = nullptr;
    const double s = std::strtod(cols[2].c_str(), &end);
    if (end == cols[2].c_str() || *end != '\0')
      throw Error("pairs line " + std::to_string(line_no) + ": bad score '" + cols[2] + "'");
    set.pairs.push_back({cols[0], cols[1], s});
  }
  return set;
}

inline RelatedPairSet load_pairs(const std::string& path) { return parse_pairs(read_file(path)); }
inline void write_pairs(const std::string& path, const RelatedPairSet& set) {
  write_file(path, serialize_pairs(set));
}

}  // namespace notellm
