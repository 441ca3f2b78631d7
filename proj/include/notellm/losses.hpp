#pragma once

// Contrastive (in-batch, learnable temperature), generation (output-only NLL)
// and mixed objectives, each with its analytic adjoints.

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "notellm/common.hpp"
#include "notellm/model.hpp"
#include "notellm/prompt.hpp"

namespace notellm {

template <typename T, typename DerivedA, typename DerivedB>
T cosine_similarity(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
  const T na = a.norm(), nb = b.norm();
  if (na == T(0) || nb == T(0)) throw Error("cosine_similarity: zero vector");
  return a.dot(b) / (na * nb);
}

inline double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("cosine_similarity: dimension mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw Error("cosine_similarity: zero vector");
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Partner index of each batch row under the (2k, 2k+1) layout.
inline std::vector<std::size_t> adjacent_pairing(std::size_t n) {
  if (n % 2 != 0) throw Error("pairing needs an even number of rows");
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i ^ std::size_t{1};
  return p;
}

template <typename T>
struct GclResult {
  T loss = T(0);
  Mat<T> d_embeddings;  // same shape as the input embeddings
  T d_tau = T(0);
};

// L = -(1/N) sum_i log( exp(s(i,p(i)) e^tau) / sum_{j != i} exp(s(i,j) e^tau) ),
// s = cosine similarity, N = number of rows. Each row is an anchor once.
template <typename T>
GclResult<T> gcl_loss(const Mat<T>& emb, std::span<const std::size_t> pairing, T tau) {
  const Eigen::Index n = emb.rows();
  if (n < 2) throw Error("gcl_loss: need at least two embeddings");
  if (static_cast<Eigen::Index>(pairing.size()) != n) throw Error("gcl_loss: pairing size mismatch");
  for (std::size_t i = 0; i < pairing.size(); ++i) {
    const std::size_t j = pairing[i];
    if (j >= pairing.size() || j == i || pairing[j] != i) throw Error("gcl_loss: pairing is not a perfect matching");
  }

  Eigen::Matrix<T, Eigen::Dynamic, 1> norms = emb.rowwise().norm();
  for (Eigen::Index i = 0; i < n; ++i)
    if (norms(i) == T(0)) throw Error("gcl_loss: zero embedding");
  Mat<T> u = emb.array().colwise() / norms.array();
  Mat<T> sim = u * u.transpose();
  const T scale = std::exp(tau);

  GclResult<T> r;
  Mat<T> dsim = Mat<T>::Zero(n, n);  // dL/dsim(i,j), anchor-row contributions
  T dscale = T(0);
  const T inv_n = T(1) / static_cast<T>(n);
  // Per anchor, relative to the positive: loss_i = log(1 + sum_neg exp(d_j)),
  // d_j = scale * (sim(i,j) - sim(i,p)). Exactly zero when there are no negatives.
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto pi = static_cast<Eigen::Index>(pairing[static_cast<std::size_t>(i)]);
    T mx = T(0);
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i && j != pi) mx = std::max(mx, scale * (sim(i, j) - sim(i, pi)));
    T z = std::exp(-mx), zneg = T(0);
    for (Eigen::Index j = 0; j < n; ++j)
      if (j != i && j != pi) zneg += std::exp(scale * (sim(i, j) - sim(i, pi)) - mx);
    z += zneg;
    r.loss += (mx + std::log(z)) * inv_n;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i || j == pi) continue;
      const T w = std::exp(scale * (sim(i, j) - sim(i, pi)) - mx) / z;
      dsim(i, j) += w * scale * inv_n;
      dscale += w * (sim(i, j) - sim(i, pi)) * inv_n;
    }
    dsim(i, pi) -= zneg / z * scale * inv_n;
  }
  r.d_tau = dscale * scale;
  // sim = u u^T  ->  dL/du = (dsim + dsim^T) u
  Mat<T> du = (dsim + dsim.transpose()) * u;
  r.d_embeddings.resize(n, emb.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const T proj = du.row(i).dot(u.row(i));
    r.d_embeddings.row(i) = (du.row(i) - proj * u.row(i)) / norms(i);
  }
  return r;
}

template <typename T>
struct CsftResult {
  T loss = T(0);
  Mat<T> d_logits;         // rows for positions [row0, row0 + rows)
  std::size_t row0 = 0;
};

// Mean NLL of output tokens. Token at position t is predicted by logits row t-1.
template <typename T>
CsftResult<T> csft_loss(const Mat<T>& logits, std::span<const TokenId> tokens, std::size_t out_begin,
                        std::size_t out_end) {
  if (out_end <= out_begin) throw Error("csft_loss: empty output span");
  if (out_begin == 0 || out_end > tokens.size() || static_cast<Eigen::Index>(out_end) > logits.rows() + 1)
    throw Error("csft_loss: output span out of range");
  const std::size_t count = out_end - out_begin;
  CsftResult<T> r;
  r.row0 = out_begin - 1;
  r.d_logits.resize(static_cast<Eigen::Index>(count), logits.cols());
  const T inv = T(1) / static_cast<T>(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto row = logits.row(static_cast<Eigen::Index>(r.row0 + k));
    const TokenId target = tokens[out_begin + k];
    const T mx = row.maxCoeff();
    auto ex = (row.array() - mx).exp();
    const T z = ex.sum();
    const T lse = mx + std::log(z);
    r.loss += (lse - row(target)) * inv;
    auto drow = r.d_logits.row(static_cast<Eigen::Index>(k));
    drow = (ex / z * inv).matrix();
    drow(target) -= inv;
  }
  return r;
}

template <typename T>
CsftResult<T> csft_loss(const ForwardTrace<T>& tr, const PromptSample& s) {
  if (tr.logits.rows() != static_cast<Eigen::Index>(tr.size())) throw Error("csft_loss: trace has no logits");
  return csft_loss(tr.logits, s.tokens, s.output_begin, s.output_end);
}

// L = (L_cl + alpha L_gen) / (1 + alpha)
inline double total_loss(double l_cl, double l_gen, double alpha) {
  if (!(alpha >= 0.0)) throw Error("total_loss: alpha must be >= 0");
  return (l_cl + alpha * l_gen) / (1.0 + alpha);
}

}  // namespace notellm
