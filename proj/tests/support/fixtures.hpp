#pragma once

#include <random>
#include <string>
#include <vector>

#include "notellm/corpus.hpp"
#include "notellm/model.hpp"
#include "notellm/prompt.hpp"

namespace notellm::testing {

inline ModelConfig tiny_config(int hidden = 16, int layers = 2, int heads = 2, int max_seq = 64, int embed = 8) {
  ModelConfig c;
  c.hidden_dim = hidden;
  c.n_layers = layers;
  c.n_heads = heads;
  c.max_seq_len = max_seq;
  c.embed_dim = embed;
  return c;
}

// Random parameters with non-trivial LayerNorm gains/biases and tau.
template <typename T>
ModelParams<T> random_params(const ModelConfig& cfg, std::uint64_t seed, double std = 0.2) {
  auto p = ModelParams<T>::zeros(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, std);
  p.for_each([&](const std::string& name, Mat<T>& m) {
    const bool gain = name.find("_g") != std::string::npos;
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>((gain ? 1.0 : 0.0) + nd(rng));
  });
  p.tau(0, 0) = static_cast<T>(0.5);
  return p;
}

// [BOS] head [EMB] tail output [EOS]
inline PromptSample tiny_sample(const std::string& head, const std::string& tail, const std::string& output) {
  return detail::assemble(head, tail, output, true);
}

inline Note make_note(std::string id, std::string title, std::vector<std::string> tags, std::string cat,
                      std::string content, std::uint64_t exposure = 0) {
  Note n;
  n.id = std::move(id);
  n.title = std::move(title);
  n.hashtags = std::move(tags);
  n.category = std::move(cat);
  n.content = std::move(content);
  n.exposure = exposure;
  return n;
}

}  // namespace notellm::testing
