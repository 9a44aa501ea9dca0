#pragma once

#include <cmath>
#include <vector>

#include "capt/graph.hpp"
#include "capt/params.hpp"
#include "capt/rng.hpp"

namespace capt {

struct LnHandles {
  int gamma = -1, beta = -1;
};

struct AttnHandles {
  int wq = -1, bq = -1, wk = -1, bk = -1, wv = -1, bv = -1, wo = -1, bo = -1;
};

struct FfnHandles {
  int w1 = -1, b1 = -1, w2 = -1, b2 = -1;
};

// Pre-norm transformer block: x + Attn(LN(x)), then x + FFN(LN(x)).
struct BlockHandles {
  LnHandles ln1;
  AttnHandles attn;
  LnHandles ln2;
  FfnHandles ffn;
};

// --- parameter construction helpers ---

template <typename T>
LnHandles make_layer_norm(ParamSet<T>& ps, ParamGroup g, const std::string& prefix, int dim) {
  LnHandles h;
  h.gamma = ps.add(g, prefix + ".gamma", Mat<T>::full(1, dim, T(1)));
  h.beta = ps.add(g, prefix + ".beta", Mat<T>::zeros(1, dim));
  return h;
}

// Weight layout is (in x out) so the forward pass is a plain row-major matmul.
template <typename T>
int make_linear_weight(ParamSet<T>& ps, ParamGroup g, const std::string& name, int in, int out,
                       Rng& rng) {
  Mat<T> w(in, out);
  fill_fan_in_uniform(w, rng, in);
  return ps.add(g, name, std::move(w));
}

template <typename T>
int make_zero_bias(ParamSet<T>& ps, ParamGroup g, const std::string& name, int out) {
  return ps.add(g, name, Mat<T>::zeros(1, out));
}

template <typename T>
AttnHandles make_attention(ParamSet<T>& ps, ParamGroup g, const std::string& prefix, int dim,
                           Rng& rng) {
  AttnHandles h;
  h.wq = make_linear_weight(ps, g, prefix + ".wq", dim, dim, rng);
  h.bq = make_zero_bias(ps, g, prefix + ".bq", dim);
  h.wk = make_linear_weight(ps, g, prefix + ".wk", dim, dim, rng);
  h.bk = make_zero_bias(ps, g, prefix + ".bk", dim);
  h.wv = make_linear_weight(ps, g, prefix + ".wv", dim, dim, rng);
  h.bv = make_zero_bias(ps, g, prefix + ".bv", dim);
  h.wo = make_linear_weight(ps, g, prefix + ".wo", dim, dim, rng);
  h.bo = make_zero_bias(ps, g, prefix + ".bo", dim);
  return h;
}

template <typename T>
FfnHandles make_ffn(ParamSet<T>& ps, ParamGroup g, const std::string& prefix, int dim, int ffn_dim,
                    Rng& rng) {
  FfnHandles h;
  h.w1 = make_linear_weight(ps, g, prefix + ".w1", dim, ffn_dim, rng);
  h.b1 = make_zero_bias(ps, g, prefix + ".b1", ffn_dim);
  h.w2 = make_linear_weight(ps, g, prefix + ".w2", ffn_dim, dim, rng);
  h.b2 = make_zero_bias(ps, g, prefix + ".b2", dim);
  return h;
}

template <typename T>
BlockHandles make_transformer_block(ParamSet<T>& ps, ParamGroup g, const std::string& prefix,
                                    int dim, int ffn_dim, Rng& rng) {
  BlockHandles h;
  h.ln1 = make_layer_norm(ps, g, prefix + ".ln1", dim);
  h.attn = make_attention(ps, g, prefix + ".attn", dim, rng);
  h.ln2 = make_layer_norm(ps, g, prefix + ".ln2", dim);
  h.ffn = make_ffn(ps, g, prefix + ".ffn", dim, ffn_dim, rng);
  return h;
}

// --- forward helpers ---

// Multi-head self-attention over q_input/kv_input (usually the same node).
// softmax_tag labels the per-head softmax nodes for introspection in tests.
template <typename T>
typename Graph<T>::VarId multi_head_attention(Graph<T>& g, typename Graph<T>::VarId q_input,
                                              typename Graph<T>::VarId kv_input,
                                              const BoundParams<T>& bp, const AttnHandles& h,
                                              int n_heads, bool causal,
                                              const char* softmax_tag = "attn.softmax") {
  const int dim = g.val(q_input).cols();
  require(dim % n_heads == 0, errc::config_invalid, "attention: dim not divisible by heads");
  const int head_dim = dim / n_heads;
  const T inv_sqrt_d = T(1) / static_cast<T>(std::sqrt(static_cast<double>(head_dim)));

  const auto q = g.linear(q_input, bp[h.wq], bp[h.bq]);
  const auto k = g.linear(kv_input, bp[h.wk], bp[h.bk]);
  const auto v = g.linear(kv_input, bp[h.wv], bp[h.bv]);

  std::vector<typename Graph<T>::VarId> head_ctx;
  head_ctx.reserve(static_cast<size_t>(n_heads));
  for (int head = 0; head < n_heads; ++head) {
    const int c0 = head * head_dim;
    const auto qh = g.slice_cols(q, c0, head_dim);
    const auto kh = g.slice_cols(k, c0, head_dim);
    const auto vh = g.slice_cols(v, c0, head_dim);
    const auto scores = g.scale(g.matmul_transposed(qh, kh), inv_sqrt_d);
    const auto probs = g.softmax_rows(scores, causal, softmax_tag);
    head_ctx.push_back(g.matmul(probs, vh));
  }
  const auto ctx = g.concat_cols(head_ctx);
  return g.linear(ctx, bp[h.wo], bp[h.bo]);
}

template <typename T>
typename Graph<T>::VarId ffn_forward(Graph<T>& g, typename Graph<T>::VarId x,
                                     const BoundParams<T>& bp, const FfnHandles& h) {
  const auto hidden = g.gelu(g.linear(x, bp[h.w1], bp[h.b1]));
  return g.linear(hidden, bp[h.w2], bp[h.b2]);
}

template <typename T>
typename Graph<T>::VarId transformer_block_forward(Graph<T>& g, typename Graph<T>::VarId x,
                                                   const BoundParams<T>& bp, const BlockHandles& h,
                                                   int n_heads, bool causal,
                                                   const char* softmax_tag = "attn.softmax") {
  const auto normed1 = g.layer_norm(x, bp[h.ln1.gamma], bp[h.ln1.beta]);
  const auto attn = multi_head_attention(g, normed1, normed1, bp, h.attn, n_heads, causal,
                                         softmax_tag);
  const auto x1 = g.add(x, attn);
  const auto normed2 = g.layer_norm(x1, bp[h.ln2.gamma], bp[h.ln2.beta]);
  return g.add(x1, ffn_forward(g, normed2, bp, h.ffn));
}

// Deterministic sinusoidal absolute positions (rows: position, cols: dim).
template <typename T>
Mat<T> sinusoidal_positions(int n, int dim) {
  Mat<T> pos(n, dim);
  for (int p = 0; p < n; ++p) {
    for (int j = 0; j < dim; j += 2) {
      const double rate = std::pow(10000.0, -static_cast<double>(j) / dim);
      const double angle = p * rate;
      pos(p, j) = static_cast<T>(std::sin(angle));
      if (j + 1 < dim) pos(p, j + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pos;
}

}  // namespace capt
