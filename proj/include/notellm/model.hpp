#pragma once

// Small decoder-only transformer with hand-written backward pass.
//
// Pre-norm blocks, learned absolute positions, GELU feed-forward, final
// LayerNorm. The hidden state at the token just before [EMB] is projected to
// a d-dimensional note embedding; logits feed the generation loss.
//
// Templated on the scalar type: float for training, double for gradient checks.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "notellm/common.hpp"
#include "notellm/prompt.hpp"

namespace notellm {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ModelConfig {
  int vocab_size = SpecialTokens::kVocabSize;
  int hidden_dim = 128;
  int n_layers = 2;
  int n_heads = 4;
  int max_seq_len = 512;
  int embed_dim = 128;
  int ffn_dim = 0;  // 0 means 4 * hidden_dim

  int ffn() const { return ffn_dim > 0 ? ffn_dim : 4 * hidden_dim; }
  int head_dim() const { return hidden_dim / n_heads; }

  void validate() const {
    if (vocab_size < SpecialTokens::kVocabSize) throw Error("vocab_size must be >= 260");
    if (hidden_dim < 1 || n_heads < 1 || hidden_dim % n_heads != 0)
      throw Error("hidden_dim must be a positive multiple of n_heads");
    if (n_layers < 1) throw Error("n_layers must be >= 1");
    if (max_seq_len < 2) throw Error("max_seq_len must be >= 2");
    if (embed_dim < 1) throw Error("embed_dim must be >= 1");
    if (ffn_dim < 0) throw Error("ffn_dim must be >= 0");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct LayerParams {
  Mat<T> ln1_g, ln1_b;
  Mat<T> w_qkv, b_qkv;  // [q | k | v], heads are contiguous column blocks
  Mat<T> w_o, b_o;
  Mat<T> ln2_g, ln2_b;
  Mat<T> w_ff1, b_ff1;
  Mat<T> w_ff2, b_ff2;
};

template <typename T>
struct ModelParams {
  ModelConfig config;
  Mat<T> tok_emb;  // vocab x hidden
  Mat<T> pos_emb;  // max_seq_len x hidden
  std::vector<LayerParams<T>> layers;
  Mat<T> lnf_g, lnf_b;
  Mat<T> lm_head;    // hidden x vocab
  Mat<T> note_proj;  // hidden x embed_dim
  Mat<T> tau;        // 1 x 1, learnable contrastive temperature

  // Zero-filled tensors of the right shapes.
  static ModelParams zeros(const ModelConfig& cfg) {
    cfg.validate();
    const int H = cfg.hidden_dim, F = cfg.ffn();
    ModelParams p;
    p.config = cfg;
    p.tok_emb = Mat<T>::Zero(cfg.vocab_size, H);
    p.pos_emb = Mat<T>::Zero(cfg.max_seq_len, H);
    p.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    for (auto& l : p.layers) {
      l.ln1_g = Mat<T>::Zero(1, H);
      l.ln1_b = Mat<T>::Zero(1, H);
      l.w_qkv = Mat<T>::Zero(H, 3 * H);
      l.b_qkv = Mat<T>::Zero(1, 3 * H);
      l.w_o = Mat<T>::Zero(H, H);
      l.b_o = Mat<T>::Zero(1, H);
      l.ln2_g = Mat<T>::Zero(1, H);
      l.ln2_b = Mat<T>::Zero(1, H);
      l.w_ff1 = Mat<T>::Zero(H, F);
      l.b_ff1 = Mat<T>::Zero(1, F);
      l.w_ff2 = Mat<T>::Zero(F, H);
      l.b_ff2 = Mat<T>::Zero(1, H);
    }
    p.lnf_g = Mat<T>::Zero(1, H);
    p.lnf_b = Mat<T>::Zero(1, H);
    p.lm_head = Mat<T>::Zero(H, cfg.vocab_size);
    p.note_proj = Mat<T>::Zero(H, cfg.embed_dim);
    p.tau = Mat<T>::Zero(1, 1);
    return p;
  }

  // Visits every tensor in checkpoint order as f(name, tensor).
  template <class F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Mat<T>& m) { n += static_cast<std::size_t>(m.size()); });
    return n;
  }

  template <typename U>
  ModelParams<U> cast() const {
    auto out = ModelParams<U>::zeros(config);
    std::vector<const Mat<T>*> src;
    for_each([&](const std::string&, const Mat<T>& m) { src.push_back(&m); });
    std::size_t k = 0;
    out.for_each([&](const std::string&, Mat<U>& m) { m = src[k++]->template cast<U>(); });
    return out;
  }

  void set_zero() {
    for_each([](const std::string&, Mat<T>& m) { m.setZero(); });
  }

 private:
  template <class Self, class F>
  static void visit(Self& self, F& f) {
    f(std::string("tok_emb"), self.tok_emb);
    f(std::string("pos_emb"), self.pos_emb);
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      auto& l = self.layers[i];
      const std::string p = "layers." + std::to_string(i) + ".";
      f(p + "ln1_g", l.ln1_g);
      f(p + "ln1_b", l.ln1_b);
      f(p + "w_qkv", l.w_qkv);
      f(p + "b_qkv", l.b_qkv);
      f(p + "w_o", l.w_o);
      f(p + "b_o", l.b_o);
      f(p + "ln2_g", l.ln2_g);
      f(p + "ln2_b", l.ln2_b);
      f(p + "w_ff1", l.w_ff1);
      f(p + "b_ff1", l.b_ff1);
      f(p + "w_ff2", l.w_ff2);
      f(p + "b_ff2", l.b_ff2);
    }
    f(std::string("lnf_g"), self.lnf_g);
    f(std::string("lnf_b"), self.lnf_b);
    f(std::string("lm_head"), self.lm_head);
    f(std::string("note_proj"), self.note_proj);
    f(std::string("tau"), self.tau);
  }
};

// Normal(0, std) weights, zero biases, unit LayerNorm gains, tau = tau_init.
template <typename T>
ModelParams<T> init_params(const ModelConfig& cfg, std::uint64_t seed, double tau_init = 3.0, double std = 0.02) {
  auto p = ModelParams<T>::zeros(cfg);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std);
  auto fill = [&](Mat<T>& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(normal(rng));
  };
  fill(p.tok_emb);
  fill(p.pos_emb);
  for (auto& l : p.layers) {
    l.ln1_g.setOnes();
    l.ln2_g.setOnes();
    fill(l.w_qkv);
    fill(l.w_o);
    fill(l.w_ff1);
    fill(l.w_ff2);
  }
  p.lnf_g.setOnes();
  fill(p.lm_head);
  fill(p.note_proj);
  p.tau(0, 0) = static_cast<T>(tau_init);
  return p;
}

template <typename T>
bool all_finite(const ModelParams<T>& p) {
  bool ok = true;
  p.for_each([&](const std::string&, const Mat<T>& m) { ok = ok && m.allFinite(); });
  return ok;
}

// ---------------------------------------------------------------------------
// Forward

template <typename T>
struct LayerCache {
  Mat<T> x_in;
  Mat<T> xhat1, a1;
  std::vector<T> rstd1;
  Mat<T> qkv;
  std::vector<Mat<T>> probs;  // per head, seq x seq, zero above the diagonal
  Mat<T> attn;                // concatenated head outputs
  Mat<T> x_mid;
  Mat<T> xhat2, a2;
  std::vector<T> rstd2;
  Mat<T> ff_pre, ff_act;
};

template <typename T>
struct ForwardTrace {
  std::vector<TokenId> tokens;
  std::vector<LayerCache<T>> layers;
  Mat<T> x_final, xhatf;
  std::vector<T> rstdf;
  Mat<T> hidden;  // final-layer (post-norm) hidden states, seq x hidden
  Mat<T> logits;  // seq x vocab; empty when computed without logits

  std::size_t size() const { return tokens.size(); }
};

namespace detail {

template <typename T>
constexpr T kLnEps = T(1e-5);

template <typename T>
void layer_norm(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, Mat<T>& xhat, std::vector<T>& rstd, Mat<T>& y) {
  const Eigen::Index n = x.rows(), h = x.cols();
  xhat.resize(n, h);
  y.resize(n, h);
  rstd.resize(static_cast<std::size_t>(n));
  for (Eigen::Index r = 0; r < n; ++r) {
    const T mean = x.row(r).mean();
    const T var = (x.row(r).array() - mean).square().mean();
    const T rs = T(1) / std::sqrt(var + kLnEps<T>);
    rstd[static_cast<std::size_t>(r)] = rs;
    xhat.row(r) = (x.row(r).array() - mean) * rs;
  }
  y.array() = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
}

// Returns dL/dx and accumulates gain/bias gradients.
template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& xhat, const std::vector<T>& rstd, const Mat<T>& g,
                           Mat<T>& dg, Mat<T>& db) {
  dg += (dy.array() * xhat.array()).colwise().sum().matrix();
  db += dy.colwise().sum();
  Mat<T> dxhat = (dy.array().rowwise() * g.row(0).array()).matrix();
  Mat<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const T m1 = dxhat.row(r).mean();
    const T m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
    dx.row(r) = rstd[static_cast<std::size_t>(r)] * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2).matrix();
  }
  return dx;
}

template <typename T>
constexpr T kGeluC = T(0.7978845608028654);  // sqrt(2/pi)

template <typename T>
Mat<T> gelu(const Mat<T>& x) {
  auto a = x.array();
  auto t = (kGeluC<T> * (a + T(0.044715) * a.cube())).tanh();
  return (T(0.5) * a * (T(1) + t)).matrix();
}

template <typename T>
Mat<T> gelu_backward(const Mat<T>& dy, const Mat<T>& x) {
  auto a = x.array();
  Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> t =
      (kGeluC<T> * (a + T(0.044715) * a.cube())).tanh();
  auto dt = kGeluC<T> * (T(1) + T(3 * 0.044715) * a.square());
  return (dy.array() * (T(0.5) * (T(1) + t) + T(0.5) * a * (T(1) - t.square()) * dt)).matrix();
}

}  // namespace detail

template <typename T>
ForwardTrace<T> forward(const ModelParams<T>& p, std::span<const TokenId> tokens, bool with_logits = true) {
  const auto& cfg = p.config;
  const Eigen::Index n = static_cast<Eigen::Index>(tokens.size());
  if (n == 0) throw Error("forward: empty sequence");
  if (n > cfg.max_seq_len)
    throw Error("forward: sequence length " + std::to_string(n) + " exceeds max_seq_len " +
                std::to_string(cfg.max_seq_len));
  const int H = cfg.hidden_dim, nh = cfg.n_heads, hd = cfg.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  ForwardTrace<T> tr;
  tr.tokens.assign(tokens.begin(), tokens.end());
  Mat<T> x(n, H);
  for (Eigen::Index t = 0; t < n; ++t) {
    const TokenId id = tokens[static_cast<std::size_t>(t)];
    if (id < 0 || id >= cfg.vocab_size) throw Error("forward: token id out of range: " + std::to_string(id));
    x.row(t) = p.tok_emb.row(id) + p.pos_emb.row(t);
  }

  tr.layers.resize(p.layers.size());
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const auto& L = p.layers[li];
    auto& c = tr.layers[li];
    c.x_in = x;
    detail::layer_norm(x, L.ln1_g, L.ln1_b, c.xhat1, c.rstd1, c.a1);
    c.qkv.noalias() = c.a1 * L.w_qkv;
    c.qkv.rowwise() += L.b_qkv.row(0);
    c.attn.resize(n, H);
    c.probs.resize(static_cast<std::size_t>(nh));
    for (int h = 0; h < nh; ++h) {
      auto Q = c.qkv.middleCols(h * hd, hd);
      auto K = c.qkv.middleCols(H + h * hd, hd);
      auto V = c.qkv.middleCols(2 * H + h * hd, hd);
      Mat<T>& P = c.probs[static_cast<std::size_t>(h)];
      P.noalias() = scale * (Q * K.transpose());
      for (Eigen::Index i = 0; i < n; ++i) {
        auto row = P.row(i);
        const T mx = row.head(i + 1).maxCoeff();
        row.head(i + 1) = (row.head(i + 1).array() - mx).exp().matrix();
        const T sum = row.head(i + 1).sum();
        row.head(i + 1) /= sum;
        if (i + 1 < n) row.tail(n - i - 1).setZero();
      }
      c.attn.middleCols(h * hd, hd).noalias() = P * V;
    }
    x.noalias() += c.attn * L.w_o;
    x.rowwise() += L.b_o.row(0);
    c.x_mid = x;
    detail::layer_norm(x, L.ln2_g, L.ln2_b, c.xhat2, c.rstd2, c.a2);
    c.ff_pre.noalias() = c.a2 * L.w_ff1;
    c.ff_pre.rowwise() += L.b_ff1.row(0);
    c.ff_act = detail::gelu(c.ff_pre);
    x.noalias() += c.ff_act * L.w_ff2;
    x.rowwise() += L.b_ff2.row(0);
  }
  tr.x_final = x;
  detail::layer_norm(x, p.lnf_g, p.lnf_b, tr.xhatf, tr.rstdf, tr.hidden);
  if (with_logits) tr.logits.noalias() = tr.hidden * p.lm_head;
  return tr;
}

template <typename T>
Mat<T> project_embedding(const ModelParams<T>& p, const ForwardTrace<T>& tr, std::size_t compression_pos) {
  if (compression_pos >= tr.size()) throw Error("compression position outside sequence");
  return tr.hidden.row(static_cast<Eigen::Index>(compression_pos)) * p.note_proj;
}

// Unnormalized d-vector read from the final hidden state before [EMB].
template <typename T>
Mat<T> note_embedding(const ModelParams<T>& p, std::span<const TokenId> tokens, std::size_t compression_pos) {
  auto prefix = tokens.first(std::min(tokens.size(), compression_pos + 1));
  auto tr = forward(p, prefix, false);
  return project_embedding(p, tr, compression_pos);
}

template <typename T>
Mat<T> note_embedding(const ModelParams<T>& p, const PromptSample& s) {
  return note_embedding(p, s.tokens, s.compression_pos);
}

// Appends argmax tokens (lowest id wins ties) until EOS or max_new; the EOS
// itself is not returned.
template <typename T>
std::vector<TokenId> greedy_decode(const ModelParams<T>& p, std::span<const TokenId> prefix, std::size_t max_new) {
  std::vector<TokenId> seq(prefix.begin(), prefix.end());
  std::vector<TokenId> out;
  for (std::size_t step = 0; step < max_new; ++step) {
    if (seq.size() >= static_cast<std::size_t>(p.config.max_seq_len)) break;
    auto tr = forward(p, seq, false);
    const Mat<T> last = tr.hidden.bottomRows(1) * p.lm_head;
    TokenId best = 0;
    for (Eigen::Index v = 1; v < last.cols(); ++v)
      if (last(0, v) > last(0, best)) best = static_cast<TokenId>(v);
    if (best == SpecialTokens::kEos) break;
    out.push_back(best);
    seq.push_back(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backward

// Adjoints of a scalar loss with respect to the forward outputs.
//   d_logits: rows for positions [logits_row0, logits_row0 + d_logits.rows())
//   d_embedding: 1 x embed_dim, read at emb_pos (the compression position)
template <typename T>
struct LossAdjoint {
  Mat<T> d_logits;
  std::size_t logits_row0 = 0;
  Mat<T> d_embedding;
  std::size_t emb_pos = 0;
};

// Accumulates parameter gradients into `g` (tau is left untouched).
template <typename T>
void backward(const ModelParams<T>& p, const ForwardTrace<T>& tr, const LossAdjoint<T>& adj, ModelParams<T>& g) {
  const auto& cfg = p.config;
  const Eigen::Index n = static_cast<Eigen::Index>(tr.size());
  const int H = cfg.hidden_dim, nh = cfg.n_heads, hd = cfg.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  Mat<T> dh = Mat<T>::Zero(n, H);
  if (adj.d_logits.size() > 0) {
    const auto r0 = static_cast<Eigen::Index>(adj.logits_row0);
    const Eigen::Index k = adj.d_logits.rows();
    if (r0 + k > n || adj.d_logits.cols() != cfg.vocab_size) throw Error("backward: logits adjoint shape mismatch");
    g.lm_head.noalias() += tr.hidden.middleRows(r0, k).transpose() * adj.d_logits;
    dh.middleRows(r0, k).noalias() += adj.d_logits * p.lm_head.transpose();
  }
  if (adj.d_embedding.size() > 0) {
    const auto e = static_cast<Eigen::Index>(adj.emb_pos);
    if (e >= n || adj.d_embedding.cols() != cfg.embed_dim) throw Error("backward: embedding adjoint shape mismatch");
    g.note_proj.noalias() += tr.hidden.row(e).transpose() * adj.d_embedding;
    dh.row(e).noalias() += adj.d_embedding * p.note_proj.transpose();
  }

  Mat<T> dx = detail::layer_norm_backward(dh, tr.xhatf, tr.rstdf, p.lnf_g, g.lnf_g, g.lnf_b);

  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& L = p.layers[li];
    auto& G = g.layers[li];
    const auto& c = tr.layers[li];

    // feed-forward residual branch
    G.w_ff2.noalias() += c.ff_act.transpose() * dx;
    G.b_ff2 += dx.colwise().sum();
    Mat<T> d_act = dx * L.w_ff2.transpose();
    Mat<T> d_pre = detail::gelu_backward(d_act, c.ff_pre);
    G.w_ff1.noalias() += c.a2.transpose() * d_pre;
    G.b_ff1 += d_pre.colwise().sum();
    Mat<T> d_a2 = d_pre * L.w_ff1.transpose();
    dx += detail::layer_norm_backward(d_a2, c.xhat2, c.rstd2, L.ln2_g, G.ln2_g, G.ln2_b);

    // attention residual branch
    G.w_o.noalias() += c.attn.transpose() * dx;
    G.b_o += dx.colwise().sum();
    Mat<T> d_attn = dx * L.w_o.transpose();
    Mat<T> d_qkv(n, 3 * H);
    Mat<T> dP(n, n);
    for (int h = 0; h < nh; ++h) {
      const Mat<T>& P = c.probs[static_cast<std::size_t>(h)];
      auto Q = c.qkv.middleCols(h * hd, hd);
      auto K = c.qkv.middleCols(H + h * hd, hd);
      auto V = c.qkv.middleCols(2 * H + h * hd, hd);
      auto dO = d_attn.middleCols(h * hd, hd);
      d_qkv.middleCols(2 * H + h * hd, hd).noalias() = P.transpose() * dO;
      dP.noalias() = dO * V.transpose();
      for (Eigen::Index i = 0; i < n; ++i) {
        auto prow = P.row(i).head(i + 1);
        auto drow = dP.row(i);
        const T dot = prow.dot(drow.head(i + 1));
        drow.head(i + 1) = (prow.array() * (drow.head(i + 1).array() - dot)).matrix();
        if (i + 1 < n) drow.tail(n - i - 1).setZero();
      }
      d_qkv.middleCols(h * hd, hd).noalias() = scale * (dP * K);
      d_qkv.middleCols(H + h * hd, hd).noalias() = scale * (dP.transpose() * Q);
    }
    G.w_qkv.noalias() += c.a1.transpose() * d_qkv;
    G.b_qkv += d_qkv.colwise().sum();
    Mat<T> d_a1 = d_qkv * L.w_qkv.transpose();
    dx += detail::layer_norm_backward(d_a1, c.xhat1, c.rstd1, L.ln1_g, G.ln1_g, G.ln1_b);
  }

  for (Eigen::Index t = 0; t < n; ++t) {
    g.tok_emb.row(tr.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
    g.pos_emb.row(t) += dx.row(t);
  }
}

}  // namespace notellm
