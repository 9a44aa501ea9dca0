#pragma once

#include <functional>
#include <string>
#include <vector>

#include "capt/error.hpp"
#include "capt/graph.hpp"
#include "capt/nn.hpp"
#include "capt/params.hpp"
#include "capt/text.hpp"

namespace capt {

// Decoder-only LM consuming [speech features ; text embeddings ; BOS ; target
// embeddings ; EOS] with causal attention over the whole sequence and learned
// absolute positions shared across both modalities.
struct LMConfig {
  int n_layers = 4;
  int model_dim = 128;  // D_t
  int n_heads = 4;
  int ffn_dim = 512;
  int max_seq_len = 512;

  void validate() const {
    require(n_layers >= 1, errc::config_invalid, "lm: needs >= 1 layer");
    require(model_dim >= 1 && n_heads >= 1 && model_dim % n_heads == 0, errc::config_invalid,
            "lm: model_dim must be divisible by n_heads");
    require(ffn_dim >= 1 && max_seq_len >= 4, errc::config_invalid, "lm: bad ffn/max_seq_len");
  }
};

template <typename T>
struct LmHandles {
  int tok_emb = -1;
  int pos_emb = -1;
  std::vector<BlockHandles> blocks;
  LnHandles ln_f;
  int head_w = -1;
};

// GPT-style init: normal(0, 0.02) weights with the residual output projections
// scaled down by 1/sqrt(2 * n_layers), zero biases.
template <typename T>
LmHandles<T> make_lm_params(ParamSet<T>& ps, const LMConfig& cfg, int vocab_size, uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, fnv1a64("lm")));
  const double std = 0.02;
  const double resid_scale = 1.0 / std::sqrt(2.0 * cfg.n_layers);
  auto normal_mat = [&](int r, int c, double stddev) {
    Mat<T> m(r, c);
    fill_normal(m, rng, 0.0, stddev);
    return m;
  };
  LmHandles<T> h;
  h.tok_emb = ps.add(ParamGroup::lm, "lm.tok_emb", normal_mat(vocab_size, cfg.model_dim, std));
  h.pos_emb = ps.add(ParamGroup::lm, "lm.pos_emb", normal_mat(cfg.max_seq_len, cfg.model_dim, std));
  for (int i = 0; i < cfg.n_layers; ++i) {
    const std::string prefix = "lm.block" + std::to_string(i);
    BlockHandles blk;
    blk.ln1 = make_layer_norm(ps, ParamGroup::lm, prefix + ".ln1", cfg.model_dim);
    blk.attn.wq = ps.add(ParamGroup::lm, prefix + ".attn.wq",
                         normal_mat(cfg.model_dim, cfg.model_dim, std));
    blk.attn.bq = make_zero_bias(ps, ParamGroup::lm, prefix + ".attn.bq", cfg.model_dim);
    blk.attn.wk = ps.add(ParamGroup::lm, prefix + ".attn.wk",
                         normal_mat(cfg.model_dim, cfg.model_dim, std));
    blk.attn.bk = make_zero_bias(ps, ParamGroup::lm, prefix + ".attn.bk", cfg.model_dim);
    blk.attn.wv = ps.add(ParamGroup::lm, prefix + ".attn.wv",
                         normal_mat(cfg.model_dim, cfg.model_dim, std));
    blk.attn.bv = make_zero_bias(ps, ParamGroup::lm, prefix + ".attn.bv", cfg.model_dim);
    blk.attn.wo = ps.add(ParamGroup::lm, prefix + ".attn.wo",
                         normal_mat(cfg.model_dim, cfg.model_dim, std * resid_scale));
    blk.attn.bo = make_zero_bias(ps, ParamGroup::lm, prefix + ".attn.bo", cfg.model_dim);
    blk.ln2 = make_layer_norm(ps, ParamGroup::lm, prefix + ".ln2", cfg.model_dim);
    blk.ffn.w1 = ps.add(ParamGroup::lm, prefix + ".ffn.w1",
                        normal_mat(cfg.model_dim, cfg.ffn_dim, std));
    blk.ffn.b1 = make_zero_bias(ps, ParamGroup::lm, prefix + ".ffn.b1", cfg.ffn_dim);
    blk.ffn.w2 = ps.add(ParamGroup::lm, prefix + ".ffn.w2",
                        normal_mat(cfg.ffn_dim, cfg.model_dim, std * resid_scale));
    blk.ffn.b2 = make_zero_bias(ps, ParamGroup::lm, prefix + ".ffn.b2", cfg.model_dim);
    h.blocks.push_back(blk);
  }
  h.ln_f = make_layer_norm(ps, ParamGroup::lm, "lm.ln_f", cfg.model_dim);
  h.head_w = ps.add(ParamGroup::lm, "lm.head.w", normal_mat(cfg.model_dim, vocab_size, std));
  return h;
}

template <typename T>
struct LmForward {
  typename Graph<T>::VarId logits = -1;  // (seq_len x vocab) for every position
  typename Graph<T>::VarId loss = -1;    // mean CE over target predictions; -1 if no targets
  int seq_len = 0;
  int loss_row0 = 0;
  int n_loss_rows = 0;
};

// Builds [speech ; text ; BOS ; targets ; EOS], runs the causal stack and
// attaches the loss over target predictions only (speech and prompt positions
// contribute nothing to the loss).
template <typename T>
LmForward<T> lm_forward(Graph<T>& g, typename Graph<T>::VarId speech,
                        const std::vector<int>& text_ids, const std::vector<int>& target_ids,
                        const BoundParams<T>& bp, const LmHandles<T>& h, const LMConfig& cfg) {
  cfg.validate();
  const int t_s = g.val(speech).rows();
  const int t_t = static_cast<int>(text_ids.size());
  const int m = static_cast<int>(target_ids.size());
  require(g.val(speech).cols() == cfg.model_dim, errc::shape_mismatch,
          "lm_forward: speech feature dim != model_dim");

  std::vector<int> token_ids = text_ids;
  token_ids.push_back(Vocabulary::bos);
  const bool with_loss = m > 0;
  if (with_loss) {
    token_ids.insert(token_ids.end(), target_ids.begin(), target_ids.end());
    token_ids.push_back(Vocabulary::eos);
  }
  const int seq_len = t_s + static_cast<int>(token_ids.size());
  require(seq_len <= cfg.max_seq_len, errc::sequence_too_long,
          "lm_forward: sequence length " + std::to_string(seq_len) + " exceeds max_seq_len");

  const auto tokens = g.embedding(bp[h.tok_emb], token_ids, "lm.tok");
  auto x = g.concat_rows({speech, tokens}, "lm.input");
  x = g.add(x, g.slice_rows(bp[h.pos_emb], 0, seq_len), "lm.pos_add");
  for (const auto& blk : h.blocks) {
    x = transformer_block_forward(g, x, bp, blk, cfg.n_heads, /*causal=*/true, "lm.attn.softmax");
  }
  x = g.layer_norm(x, bp[h.ln_f.gamma], bp[h.ln_f.beta]);

  LmForward<T> out;
  out.logits = g.matmul(x, bp[h.head_w], "lm.logits");
  out.seq_len = seq_len;
  if (with_loss) {
    std::vector<int> labels = target_ids;
    labels.push_back(Vocabulary::eos);
    out.loss_row0 = t_s + t_t;  // the BOS position predicts the first target
    out.n_loss_rows = m + 1;
    out.loss = g.cross_entropy_rows(out.logits, labels, out.loss_row0, "lm.loss");
  }
  return out;
}

// ---- incremental inference (KV cache) ----

namespace detail {

template <typename T>
void layer_norm_rows(const Mat<T>& x, const Mat<T>& gamma, const Mat<T>& beta, Mat<T>& out) {
  const int C = x.cols();
  for (int i = 0; i < x.rows(); ++i) {
    const T* row = x.row(i);
    T mean = T(0);
    for (int j = 0; j < C; ++j) mean += row[j];
    mean /= static_cast<T>(C);
    T var = T(0);
    for (int j = 0; j < C; ++j) {
      const T d = row[j] - mean;
      var += d * d;
    }
    var /= static_cast<T>(C);
    const T inv = T(1) / std::sqrt(var + T(1e-5));
    T* orow = out.row(i);
    for (int j = 0; j < C; ++j)
      orow[j] = (row[j] - mean) * inv * gamma.data()[j] + beta.data()[j];
  }
}

template <typename T>
T gelu_scalar(T x) {
  return x * T(0.5) * (T(1) + std::erf(x * T(0.7071067811865476)));
}

}  // namespace detail

// Forward-only decoder over the same parameters as lm_forward, with per-layer
// key/value caches so generation costs one position per step. Matches the
// graph path's arithmetic layer for layer.
template <typename T>
class LmDecoder {
 public:
  LmDecoder(const LMConfig& cfg, const ParamSet<T>& ps, const LmHandles<T>& h)
      : cfg_(cfg), ps_(&ps), h_(&h) {
    cfg_.validate();
    k_cache_.assign(static_cast<size_t>(cfg_.n_layers), Mat<T>(cfg_.max_seq_len, cfg_.model_dim));
    v_cache_.assign(static_cast<size_t>(cfg_.n_layers), Mat<T>(cfg_.max_seq_len, cfg_.model_dim));
  }

  void reset() { pos_ = 0; }
  int pos() const { return pos_; }

  // Feeds n new embedding rows (positions are added internally); returns the
  // logits row of the last position.
  std::vector<T> append(const Mat<T>& embeds) {
    const int n = embeds.rows();
    const int D = cfg_.model_dim;
    require(n >= 1 && embeds.cols() == D, errc::shape_mismatch, "decoder append: bad shape");
    require(pos_ + n <= cfg_.max_seq_len, errc::sequence_too_long,
            "decoder append: exceeds max_seq_len");
    const Mat<T>& pos_emb = ps_->value(h_->pos_emb);
    Mat<T> x(n, D);
    for (int i = 0; i < n; ++i) {
      const T* e = embeds.row(i);
      const T* p = pos_emb.row(pos_ + i);
      T* row = x.row(i);
      for (int j = 0; j < D; ++j) row[j] = e[j] + p[j];
    }

    const int n_heads = cfg_.n_heads;
    const int dh = D / n_heads;
    const T inv_sqrt_d = T(1) / static_cast<T>(std::sqrt(static_cast<double>(dh)));
    Mat<T> normed(n, D), q(n, D), attn_ctx(n, D), proj(n, D);
    for (int li = 0; li < cfg_.n_layers; ++li) {
      const BlockHandles& blk = h_->blocks[static_cast<size_t>(li)];
      detail::layer_norm_rows(x, ps_->value(blk.ln1.gamma), ps_->value(blk.ln1.beta), normed);
      Mat<T>& kc = k_cache_[static_cast<size_t>(li)];
      Mat<T>& vc = v_cache_[static_cast<size_t>(li)];
      linear_rows(normed, blk.attn.wq, blk.attn.bq, q.data(), D);
      linear_rows(normed, blk.attn.wk, blk.attn.bk, kc.row(pos_), D);
      linear_rows(normed, blk.attn.wv, blk.attn.bv, vc.row(pos_), D);
      for (int head = 0; head < n_heads; ++head) {
        const int c0 = head * dh;
        for (int i = 0; i < n; ++i) {
          const int kv_len = pos_ + i + 1;  // causal: attend to positions <= self
          scores_.assign(static_cast<size_t>(kv_len), T(0));
          gemm_nt(1, kv_len, dh, inv_sqrt_d, q.row(i) + c0, D, kc.data() + c0, D, T(0),
                  scores_.data(), kv_len);
          T mx = scores_[0];
          for (int j = 1; j < kv_len; ++j) mx = std::max(mx, scores_[static_cast<size_t>(j)]);
          T denom = T(0);
          for (int j = 0; j < kv_len; ++j) {
            T& s = scores_[static_cast<size_t>(j)];
            s = std::exp(s - mx);
            denom += s;
          }
          const T inv = T(1) / denom;
          for (int j = 0; j < kv_len; ++j) scores_[static_cast<size_t>(j)] *= inv;
          gemm_tn(1, dh, kv_len, T(1), scores_.data(), 1, vc.data() + c0, D, T(0),
                  attn_ctx.row(i) + c0, D);
        }
      }
      linear_rows(attn_ctx, blk.attn.wo, blk.attn.bo, proj.data(), D);
      x.add_inplace(proj);
      detail::layer_norm_rows(x, ps_->value(blk.ln2.gamma), ps_->value(blk.ln2.beta), normed);
      Mat<T> hidden(n, cfg_.ffn_dim);
      linear_rows(normed, blk.ffn.w1, blk.ffn.b1, hidden.data(), cfg_.ffn_dim);
      for (size_t i = 0; i < hidden.size(); ++i)
        hidden.data()[i] = detail::gelu_scalar(hidden.data()[i]);
      linear_rows(hidden, blk.ffn.w2, blk.ffn.b2, proj.data(), D);
      x.add_inplace(proj);
    }
    pos_ += n;

    Mat<T> final_row(1, D);
    Mat<T> last(1, D);
    std::memcpy(last.data(), x.row(n - 1), static_cast<size_t>(D) * sizeof(T));
    detail::layer_norm_rows(last, ps_->value(h_->ln_f.gamma), ps_->value(h_->ln_f.beta), final_row);
    const Mat<T>& head = ps_->value(h_->head_w);
    std::vector<T> logits(static_cast<size_t>(head.cols()), T(0));
    gemm_nn(1, head.cols(), D, T(1), final_row.data(), D, head.data(), head.cols(), T(0),
            logits.data(), head.cols());
    return logits;
  }

  std::vector<T> append_token(int token_id) {
    const Mat<T>& emb = ps_->value(h_->tok_emb);
    Mat<T> row(1, cfg_.model_dim);
    std::memcpy(row.data(), emb.row(token_id), static_cast<size_t>(cfg_.model_dim) * sizeof(T));
    return append(row);
  }

 private:
  // out rows = x * W + b; out may alias cache rows (ld = row stride of out).
  void linear_rows(const Mat<T>& x, int w_handle, int b_handle, T* out, int ld_out) {
    const Mat<T>& w = ps_->value(w_handle);
    const Mat<T>& b = ps_->value(b_handle);
    gemm_nn(x.rows(), w.cols(), x.cols(), T(1), x.data(), x.cols(), w.data(), w.cols(), T(0), out,
            ld_out);
    for (int i = 0; i < x.rows(); ++i) {
      T* row = out + static_cast<size_t>(i) * ld_out;
      for (int j = 0; j < w.cols(); ++j) row[j] += b.data()[j];
    }
  }

  LMConfig cfg_;
  const ParamSet<T>* ps_;
  const LmHandles<T>* h_;
  std::vector<Mat<T>> k_cache_, v_cache_;
  std::vector<T> scores_;
  int pos_ = 0;
};

// ---- greedy decoding ----

// Greedy argmax loop over a logits source. `step` consumes the chosen token
// and returns the next logits row. With `constrained`, logits are masked to
// the score grammar so the output always parses (given enough budget).
template <typename T>
std::string greedy_decode(const Vocabulary& vocab, std::vector<T> logits,
                          const std::function<std::vector<T>(int)>& step, int max_new_tokens,
                          bool constrained) {
  ScoreGrammar grammar(vocab);
  std::vector<int> out_ids;
  for (int produced = 0; produced < max_new_tokens; ++produced) {
    int chosen = -1;
    if (constrained) {
      T best = T(0);
      for (int id : grammar.allowed_ids()) {
        if (chosen < 0 || logits[static_cast<size_t>(id)] > best) {
          chosen = id;
          best = logits[static_cast<size_t>(id)];
        }
      }
      grammar.advance(chosen);
    } else {
      T best = logits[0];
      chosen = 0;
      for (size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > best) {
          best = logits[i];
          chosen = static_cast<int>(i);
        }
      }
    }
    if (chosen == Vocabulary::eos) break;
    out_ids.push_back(chosen);
    if (constrained && grammar.done()) {
      // Only EOS can follow a complete score string.
      break;
    }
    logits = step(chosen);
  }
  return vocab.detokenize(out_ids);
}

// Greedy generation conditioned on adapted speech features and the task text.
template <typename T>
std::string generate(const Mat<T>& speech_features, const PromptBundle& bundle,
                     int max_new_tokens, bool constrained, const LMConfig& cfg,
                     const ParamSet<T>& ps, const LmHandles<T>& h, const Vocabulary& vocab) {
  cfg.validate();
  require(speech_features.cols() == cfg.model_dim, errc::shape_mismatch,
          "generate: speech feature dim != model_dim");
  const int prefix_len = speech_features.rows() + static_cast<int>(bundle.token_ids.size()) + 1;
  require(prefix_len + 1 <= cfg.max_seq_len, errc::sequence_too_long,
          "generate: prefix exceeds max_seq_len");
  LmDecoder<T> decoder(cfg, ps, h);
  decoder.append(speech_features);
  const Mat<T>& emb = ps.value(h.tok_emb);
  Mat<T> tokens(static_cast<int>(bundle.token_ids.size()) + 1, cfg.model_dim);
  for (size_t i = 0; i < bundle.token_ids.size(); ++i) {
    std::memcpy(tokens.row(static_cast<int>(i)), emb.row(bundle.token_ids[i]),
                static_cast<size_t>(cfg.model_dim) * sizeof(T));
  }
  std::memcpy(tokens.row(tokens.rows() - 1), emb.row(Vocabulary::bos),
              static_cast<size_t>(cfg.model_dim) * sizeof(T));
  std::vector<T> logits = decoder.append(tokens);
  const int budget = std::min(max_new_tokens, cfg.max_seq_len - decoder.pos());
  return greedy_decode<T>(
      vocab, std::move(logits), [&](int token) { return decoder.append_token(token); }, budget,
      constrained);
}

}  // namespace capt
