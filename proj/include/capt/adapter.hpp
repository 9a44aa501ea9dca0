#pragma once

#include <string>

#include "capt/error.hpp"
#include "capt/graph.hpp"
#include "capt/nn.hpp"
#include "capt/params.hpp"
#include "capt/speech_encoder.hpp"

namespace capt {

// Modality adapter: one shared pooling convolution (its output feeds Q, K and
// V identically), one multi-head self-attention layer, and a projection into
// the LM embedding space.
struct AdapterConfig {
  int pool_kernel = 2;
  int pool_stride = 2;
  int n_heads = 4;   // paper setting: 16
  int in_dim = 64;   // D_s
  int out_dim = 128; // D_t

  void validate() const {
    require(pool_stride >= 1 && pool_kernel >= pool_stride, errc::config_invalid,
            "adapter: pool kernel must be >= stride >= 1");
    require(in_dim >= 1 && out_dim >= 1, errc::config_invalid, "adapter: bad dims");
    require(n_heads >= 1 && in_dim % n_heads == 0, errc::config_invalid,
            "adapter: in_dim must be divisible by n_heads");
  }

  int pooled_length(int t_in) const {
    require(t_in >= pool_kernel, errc::sequence_too_short,
            "adapter: sequence shorter than pool kernel");
    return (t_in - pool_kernel) / pool_stride + 1;
  }
};

template <typename T>
struct AdapterHandles {
  int pool_w = -1, pool_b = -1;
  LnHandles ln;
  AttnHandles attn;
  int proj_w = -1, proj_b = -1;
};

template <typename T>
AdapterHandles<T> make_adapter_params(ParamSet<T>& ps, const AdapterConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, fnv1a64("adapter")));
  AdapterHandles<T> h;
  Mat<T> pool_w(cfg.pool_kernel * cfg.in_dim, cfg.in_dim);
  fill_fan_in_uniform(pool_w, rng, cfg.pool_kernel * cfg.in_dim);
  h.pool_w = ps.add(ParamGroup::adapter, "adapter.pool.w", std::move(pool_w));
  h.pool_b = make_zero_bias(ps, ParamGroup::adapter, "adapter.pool.b", cfg.in_dim);
  h.ln = make_layer_norm(ps, ParamGroup::adapter, "adapter.ln", cfg.in_dim);
  h.attn = make_attention(ps, ParamGroup::adapter, "adapter.attn", cfg.in_dim, rng);
  h.proj_w = make_linear_weight(ps, ParamGroup::adapter, "adapter.proj.w", cfg.in_dim, cfg.out_dim,
                                rng);
  h.proj_b = make_zero_bias(ps, ParamGroup::adapter, "adapter.proj.b", cfg.out_dim);
  return h;
}

// The shared pooling convolution, applied exactly once per adapt() call.
template <typename T>
typename Graph<T>::VarId shared_pool_forward(Graph<T>& g, typename Graph<T>::VarId x,
                                             const BoundParams<T>& bp, const AdapterHandles<T>& h,
                                             const AdapterConfig& cfg) {
  require(g.val(x).rows() >= cfg.pool_kernel, errc::sequence_too_short,
          "adapter: sequence shorter than pool kernel");
  return g.conv1d(x, bp[h.pool_w], bp[h.pool_b], cfg.pool_kernel, cfg.pool_stride, "adapter.pool");
}

// pooled -> pooled + MSA(LN(pooled)) -> projection to out_dim.
template <typename T>
typename Graph<T>::VarId adapter_forward(Graph<T>& g, typename Graph<T>::VarId h_s,
                                         const BoundParams<T>& bp, const AdapterHandles<T>& h,
                                         const AdapterConfig& cfg) {
  const auto pooled = shared_pool_forward(g, h_s, bp, h, cfg);
  const auto normed = g.layer_norm(pooled, bp[h.ln.gamma], bp[h.ln.beta]);
  const auto attn = multi_head_attention(g, normed, normed, bp, h.attn, cfg.n_heads,
                                         /*causal=*/false, "adapter.msa.softmax");
  const auto mixed = g.add(pooled, attn);
  return g.linear(mixed, bp[h.proj_w], bp[h.proj_b], "adapter.out");
}

template <typename T>
FeatureSequence<T> shared_pool(const FeatureSequence<T>& x, const AdapterConfig& cfg,
                               const ParamSet<T>& ps, const AdapterHandles<T>& h) {
  cfg.validate();
  Graph<T> g;
  const auto bound = bind_params(g, ps, {false, false, false});
  const auto in = g.leaf(x.values, false);
  const auto out = shared_pool_forward(g, in, bound, h, cfg);
  FeatureSequence<T> fs;
  fs.values = g.val(out);
  fs.frame_stride_samples = x.frame_stride_samples * cfg.pool_stride;
  fs.sample_rate = x.sample_rate;
  return fs;
}

template <typename T>
FeatureSequence<T> adapt(const FeatureSequence<T>& h_s, const AdapterConfig& cfg,
                         const ParamSet<T>& ps, const AdapterHandles<T>& h) {
  cfg.validate();
  Graph<T> g;
  const auto bound = bind_params(g, ps, {false, false, false});
  const auto in = g.leaf(h_s.values, false);
  const auto out = adapter_forward(g, in, bound, h, cfg);
  FeatureSequence<T> fs;
  fs.values = g.val(out);
  fs.frame_stride_samples = h_s.frame_stride_samples * cfg.pool_stride;
  fs.sample_rate = h_s.sample_rate;
  return fs;
}

}  // namespace capt
