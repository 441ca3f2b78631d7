#pragma once

// Note / behavior-log data model, line-delimited JSON storage and the
// deterministic synthetic generators used for desk-scale experiments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "notellm/common.hpp"

namespace notellm {

struct Note {
  std::string id;
  std::string title;
  std::vector<std::string> hashtags;
  std::string category;
  std::string content;
  std::uint64_t exposure = 0;

  friend bool operator==(const Note&, const Note&) = default;
};

// Closed category set in order of first appearance.
class CategorySet {
 public:
  CategorySet() = default;
  explicit CategorySet(std::vector<std::string> names) {
    for (auto& n : names) add(n);
  }

  bool add(const std::string& name) {
    if (contains(name)) return false;
    names_.push_back(name);
    return true;
  }
  bool contains(std::string_view name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
  }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  bool empty() const { return names_.empty(); }

 private:
  std::vector<std::string> names_;
};

// A loaded note universe with id lookup.
class Corpus {
 public:
  Corpus() = default;
  Corpus(std::vector<Note> notes, CategorySet categories)
      : notes_(std::move(notes)), categories_(std::move(categories)) {
    for (std::size_t i = 0; i < notes_.size(); ++i) {
      if (!index_.emplace(notes_[i].id, i).second) throw Error("duplicate note id: " + notes_[i].id);
    }
  }

  const std::vector<Note>& notes() const { return notes_; }
  const CategorySet& categories() const { return categories_; }
  std::size_t size() const { return notes_.size(); }
  const Note& operator[](std::size_t i) const { return notes_[i]; }

  std::optional<std::size_t> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const Note& at(std::string_view id) const {
    auto i = find(id);
    if (!i) throw Error("unknown note id: " + std::string(id));
    return notes_[*i];
  }

 private:
  std::vector<Note> notes_;
  CategorySet categories_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ClickEvent {
  std::string user_id;
  std::string viewed;
  std::string clicked;

  friend bool operator==(const ClickEvent&, const ClickEvent&) = default;
};

struct BehaviorLog {
  std::vector<ClickEvent> events;
  std::string window_label;
};

// ---------------------------------------------------------------------------
// Serialization

inline bool valid_id(std::string_view id) {
  if (id.empty()) return false;
  return std::none_of(id.begin(), id.end(), [](char c) { return c == '\t' || c == '\n' || c == '\r'; });
}

inline nlohmann::ordered_json note_to_json(const Note& n) {
  nlohmann::ordered_json j;
  j["id"] = n.id;
  j["title"] = n.title;
  j["hashtags"] = n.hashtags;
  j["category"] = n.category;
  j["content"] = n.content;
  j["exposure"] = n.exposure;
  return j;
}

inline std::string note_to_line(const Note& n) { return note_to_json(n).dump(); }

namespace detail {

inline const nlohmann::json& field(const nlohmann::json& j, const char* name) {
  auto it = j.find(name);
  if (it == j.end()) throw Error(std::string("missing field '") + name + "'");
  return *it;
}

inline std::string string_field(const nlohmann::json& j, const char* name) {
  const auto& v = field(j, name);
  if (!v.is_string()) throw Error(std::string("field '") + name + "' must be a string");
  return v.get<std::string>();
}

}  // namespace detail

inline Note note_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error("record is not an object");
  Note n;
  n.id = detail::string_field(j, "id");
  if (!valid_id(n.id)) throw Error("invalid id '" + n.id + "'");
  n.title = detail::string_field(j, "title");
  const auto& tags = detail::field(j, "hashtags");
  if (!tags.is_array()) throw Error("field 'hashtags' must be a list");
  for (const auto& t : tags) {
    if (!t.is_string() || t.get<std::string>().empty()) throw Error("hashtags must be nonempty strings");
    n.hashtags.push_back(t.get<std::string>());
  }
  n.category = detail::string_field(j, "category");
  n.content = detail::string_field(j, "content");
  const auto& e = detail::field(j, "exposure");
  if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<std::int64_t>() >= 0))
    throw Error("field 'exposure' must be a nonnegative integer");
  n.exposure = e.get<std::uint64_t>();
  return n;
}

inline Corpus parse_corpus(std::string_view text) {
  std::vector<Note> notes;
  std::unordered_map<std::string, std::size_t> first_line;
  CategorySet cats;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    if (trim(raw).empty()) continue;
    Note n;
    try {
      n = note_from_json(nlohmann::json::parse(raw));
    } catch (const nlohmann::json::exception& e) {
      throw Error("line " + std::to_string(line_no) + ": malformed record: " + e.what());
    } catch (const Error& e) {
      throw Error("line " + std::to_string(line_no) + ": " + e.what());
    }
    auto [it, fresh] = first_line.emplace(n.id, line_no);
    if (!fresh)
      throw Error("duplicate id '" + n.id + "' on lines " + std::to_string(it->second) + " and " +
                  std::to_string(line_no));
    cats.add(n.category);
    notes.push_back(std::move(n));
  }
  if (notes.empty()) throw Error("empty corpus");
  return Corpus(std::move(notes), std::move(cats));
}

inline Corpus load_corpus(const std::string& path) { return parse_corpus(read_file(path)); }

inline std::string serialize_corpus(std::span<const Note> notes) {
  std::string out;
  for (const auto& n : notes) {
    out += note_to_line(n);
    out += '\n';
  }
  return out;
}

inline void write_corpus(const std::string& path, std::span<const Note> notes) {
  write_file(path, serialize_corpus(notes));
}

inline std::string serialize_log(const BehaviorLog& log) {
  std::string out;
  for (const auto& e : log.events) {
    nlohmann::ordered_json j;
    j["user_id"] = e.user_id;
    j["viewed"] = e.viewed;
    j["clicked"] = e.clicked;
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline BehaviorLog parse_log(std::string_view text, std::string window_label = {}) {
  BehaviorLog log;
  log.window_label = std::move(window_label);
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    if (trim(raw).empty()) continue;
    try {
      auto j = nlohmann::json::parse(raw);
      if (!j.is_object()) throw Error("record is not an object");
      ClickEvent e{detail::string_field(j, "user_id"), detail::string_field(j, "viewed"),
                   detail::string_field(j, "clicked")};
      if (e.viewed == e.clicked) throw Error("viewed and clicked must differ");
      log.events.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw Error("line " + std::to_string(line_no) + ": malformed record: " + e.what());
    } catch (const Error& e) {
      throw Error("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return log;
}

inline BehaviorLog load_log(const std::string& path) {
  auto stem = path.substr(path.find_last_of('/') + 1);
  return parse_log(read_file(path), stem);
}

inline void write_log(const std::string& path, const BehaviorLog& log) { write_file(path, serialize_log(log)); }

// Every event must reference notes of the corpus and have viewed != clicked.
inline void validate_log(const BehaviorLog& log, const Corpus& corpus) {
  for (std::size_t i = 0; i < log.events.size(); ++i) {
    const auto& e = log.events[i];
    if (e.viewed == e.clicked) throw Error("event " + std::to_string(i) + ": viewed == clicked");
    if (!corpus.find(e.viewed)) throw Error("event " + std::to_string(i) + ": unknown note " + e.viewed);
    if (!corpus.find(e.clicked)) throw Error("event " + std::to_string(i) + ": unknown note " + e.clicked);
  }
}

// ---------------------------------------------------------------------------
// Synthetic data

// Lowercase two-syllable pseudo-words; never collide with the capitalized category names.
inline std::vector<std::string> default_vocabulary(std::size_t n = 400) {
  static constexpr std::string_view consonants = "bdfgklmnprstvz";
  static constexpr std::string_view vowels = "aeiou";
  std::vector<std::string> syl;
  for (char c : consonants)
    for (char v : vowels) syl.push_back(std::string{c, v});
  const std::size_t total = syl.size() * syl.size();  // 4900 = 2^2 5^2 7^2
  n = std::min(n, total);
  std::vector<std::string> words;
  words.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t idx = (k * 37) % total;
    words.push_back(syl[idx / syl.size()] + syl[idx % syl.size()]);
  }
  return words;
}

inline std::string category_name(std::size_t k) {
  static const char* names[] = {"Food",    "Travel", "Beauty", "Fitness", "Tech",    "Pets",
                                "Fashion", "Music",  "Home",   "Books",   "Gaming",  "Parenting",
                                "Cars",    "Art",    "Movies", "Garden",  "Finance", "Outdoors"};
  constexpr std::size_t count = sizeof(names) / sizeof(names[0]);
  if (k < count) return names[k];
  return "Topic" + std::to_string(k);
}

struct CorpusGenConfig {
  std::uint64_t seed = 1;
  std::size_t n_notes = 64;
  std::size_t n_categories = 4;
  double category_word_prob = 0.85;  // chance a word is drawn from the note's category slice
  double hashtagless_fraction = 0.1;
  std::size_t min_title_words = 2, max_title_words = 4;
  std::size_t min_content_words = 4, max_content_words = 10;
  std::size_t max_hashtags = 4;
  double exposure_min = 100.0;
  double exposure_shape = 0.5;  // Pareto tail index
};

inline std::string note_id(std::size_t i, std::size_t n) {
  std::size_t width = 4;
  for (std::size_t m = n; m >= 10000; m /= 10) ++width;
  std::string digits = std::to_string(i);
  return "n" + std::string(width > digits.size() ? width - digits.size() : 0, '0') + digits;
}

inline Corpus generate_synthetic_corpus(const CorpusGenConfig& cfg, std::span<const std::string> vocab) {
  if (cfg.n_notes < 2) throw Error("n_notes must be >= 2");
  if (cfg.n_categories < 2) throw Error("n_categories must be >= 2");
  if (cfg.n_categories > cfg.n_notes) throw Error("n_categories > n_notes");
  if (vocab.size() < 2 * cfg.n_categories) throw Error("vocabulary too small for category count");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::vector<std::string>> slices(cfg.n_categories);
  for (std::size_t k = 0; k < vocab.size(); ++k) slices[k % cfg.n_categories].push_back(vocab[k]);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto pick = [&](const std::vector<std::string>& pool) -> const std::string& {
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  };
  auto words = [&](std::size_t cat, std::size_t lo, std::size_t hi) {
    const std::size_t count = std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    std::string out;
    for (std::size_t w = 0; w < count; ++w) {
      if (w) out += ' ';
      out += unit(rng) < cfg.category_word_prob ? pick(slices[cat]) : vocab[std::uniform_int_distribution<std::size_t>(0, vocab.size() - 1)(rng)];
    }
    return out;
  };

  std::vector<Note> notes;
  CategorySet cats;
  for (std::size_t k = 0; k < cfg.n_categories; ++k) cats.add(category_name(k));
  for (std::size_t i = 0; i < cfg.n_notes; ++i) {
    const std::size_t cat = i % cfg.n_categories;
    Note n;
    n.id = note_id(i, cfg.n_notes);
    n.category = category_name(cat);
    n.title = words(cat, cfg.min_title_words, cfg.max_title_words);
    n.content = words(cat, cfg.min_content_words, cfg.max_content_words);
    if (unit(rng) >= cfg.hashtagless_fraction && cfg.max_hashtags > 0) {
      const std::size_t count = std::uniform_int_distribution<std::size_t>(1, cfg.max_hashtags)(rng);
      std::vector<std::string> pool = slices[cat];
      std::shuffle(pool.begin(), pool.end(), rng);
      pool.resize(std::min(count, pool.size()));
      n.hashtags = std::move(pool);
    }
    const double u = 1.0 - unit(rng);  // (0, 1]
    const double x = cfg.exposure_min * std::pow(u, -1.0 / cfg.exposure_shape);
    n.exposure = static_cast<std::uint64_t>(std::min(x, 1e12));
    notes.push_back(std::move(n));
  }
  return Corpus(std::move(notes), std::move(cats));
}

// Pairs notes of the same category by order of appearance: (0,1), (2,3), ...
// A trailing odd note has no partner.
inline std::vector<std::optional<std::size_t>> designated_partners(const Corpus& corpus) {
  std::map<std::string, std::vector<std::size_t>> by_cat;
  for (std::size_t i = 0; i < corpus.size(); ++i) by_cat[corpus[i].category].push_back(i);
  std::vector<std::optional<std::size_t>> partner(corpus.size());
  for (const auto& [cat, idx] : by_cat) {
    for (std::size_t k = 0; k + 1 < idx.size(); k += 2) {
      partner[idx[k]] = idx[k + 1];
      partner[idx[k + 1]] = idx[k];
    }
  }
  return partner;
}

struct LogGenConfig {
  std::uint64_t seed = 1;
  std::size_t n_users = 50;
  std::size_t n_events = 1000;
  double same_category_bias = 0.8;
  double partner_bias = 0.0;            // chance the click goes to the designated partner
  double active_user_fraction = 0.05;   // indiscriminate clickers
  double active_user_weight = 8.0;      // relative event rate of an active user
};

inline std::string user_id(std::size_t i) {
  std::string digits = std::to_string(i);
  return "u" + std::string(digits.size() < 4 ? 4 - digits.size() : 0, '0') + digits;
}

inline BehaviorLog generate_synthetic_log(const LogGenConfig& cfg, const Corpus& corpus) {
  if (corpus.size() == 0) throw Error("empty note list");
  if (corpus.size() < 2) throw Error("need at least two notes to generate clicks");
  if (cfg.n_events < 1) throw Error("n_events must be >= 1");
  if (cfg.n_users < 1) throw Error("n_users must be >= 1");

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t n_active =
      static_cast<std::size_t>(std::floor(cfg.active_user_fraction * static_cast<double>(cfg.n_users)));
  std::vector<char> active(cfg.n_users, 0);
  {
    std::vector<std::size_t> order(cfg.n_users);
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < n_active; ++i) active[order[i]] = 1;
  }
  std::vector<double> weights(cfg.n_users);
  for (std::size_t i = 0; i < cfg.n_users; ++i) weights[i] = active[i] ? cfg.active_user_weight : 1.0;
  std::discrete_distribution<std::size_t> pick_user(weights.begin(), weights.end());

  std::map<std::string, std::vector<std::size_t>> by_cat;
  for (std::size_t i = 0; i < corpus.size(); ++i) by_cat[corpus[i].category].push_back(i);
  const auto partners = designated_partners(corpus);

  const std::size_t n = corpus.size();
  auto other_than = [&](std::size_t v) {
    std::size_t c = std::uniform_int_distribution<std::size_t>(0, n - 2)(rng);
    return c >= v ? c + 1 : c;
  };

  BehaviorLog log;
  log.window_label = "synthetic-" + std::to_string(cfg.seed);
  log.events.reserve(cfg.n_events);
  for (std::size_t e = 0; e < cfg.n_events; ++e) {
    const std::size_t u = pick_user(rng);
    const std::size_t viewed = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    std::size_t clicked;
    if (active[u]) {
      clicked = other_than(viewed);
    } else if (partners[viewed] && unit(rng) < cfg.partner_bias) {
      clicked = *partners[viewed];
    } else if (unit(rng) < cfg.same_category_bias && by_cat[corpus[viewed].category].size() > 1) {
      const auto& pool = by_cat[corpus[viewed].category];
      do {
        clicked = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
      } while (clicked == viewed);
    } else {
      clicked = other_than(viewed);
    }
    log.events.push_back({user_id(u), corpus[viewed].id, corpus[clicked].id});
  }
  return log;
}

}  // namespace notellm
