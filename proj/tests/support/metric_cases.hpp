#pragma once

// Candidate/reference token strings with BLEU4 and ROUGE-1/2/L worked out by hand.

#include <cmath>

namespace notellm::testing {

struct MetricCase {
  const char* cand;
  const char* ref;
  double bleu, r1, r2, rl;
};

// Values worked out by hand from clipped n-gram counts and LCS lengths.
inline const MetricCase kMetricCases[] = {
    {"a b c d", "a b c d", 1.0, 1.0, 1.0, 1.0},
    // p = 4/5, 3/4, 2/3, 1/2
    {"a b c d e", "a b c d f", std::pow(0.2, 0.25), 0.8, 0.75, 0.8},
    // disjoint: no unigram match
    {"x y", "a b c", 0.0, 0.0, 0.0, 0.0},
    // p = 1, 1/2 (smoothed), 1, 1; BP = exp(-1/2); LCS "a c"
    {"a c", "a b c", std::exp(-0.5) * std::pow(0.5, 0.25), 0.8, 0.0, 0.8},
    // clipping: p = 2/4, 1/3, 1/3 (smoothed), 1/2 (smoothed)
    {"the cat the cat", "the cat sat", std::pow(1.0 / 36.0, 0.25), 4.0 / 7.0, 0.4, 4.0 / 7.0},
    // reverse of case 4: p = 2/3, 1/3 (smoothed), 1/2 (smoothed), 1 (no 4-grams)
    {"a b c", "a c", std::pow(1.0 / 9.0, 0.25), 0.8, 0.0, 0.8},
};


}  // namespace notellm::testing
