#pragma once

#include <string>
#include <vector>

#include "capt/error.hpp"
#include "capt/graph.hpp"
#include "capt/mat.hpp"
#include "capt/nn.hpp"
#include "capt/params.hpp"
#include "capt/rng.hpp"

namespace capt {

struct ConvLayerSpec {
  int channels = 0;
  int kernel = 0;
  int stride = 0;
};

struct ConvSpec {
  std::vector<ConvLayerSpec> layers;

  // "paper": the 7-block schedule with 512 channels, strides (5,2,2,2,2,2,2),
  // kernels (10,3,3,3,3,2,2). "toy": 3 blocks of 64 channels.
  static ConvSpec preset(const std::string& name) {
    ConvSpec spec;
    if (name == "paper") {
      const int kernels[] = {10, 3, 3, 3, 3, 2, 2};
      const int strides[] = {5, 2, 2, 2, 2, 2, 2};
      for (int i = 0; i < 7; ++i) spec.layers.push_back({512, kernels[i], strides[i]});
    } else if (name == "toy") {
      const int kernels[] = {10, 3, 3};
      const int strides[] = {5, 2, 2};
      for (int i = 0; i < 3; ++i) spec.layers.push_back({64, kernels[i], strides[i]});
    } else {
      throw Error(errc::config_invalid, "unknown conv preset: " + name);
    }
    return spec;
  }

  void validate() const {
    require(!layers.empty(), errc::config_invalid, "conv spec: needs at least one layer");
    for (const auto& l : layers) {
      require(l.stride >= 1, errc::config_invalid, "conv spec: stride must be >= 1");
      require(l.kernel >= l.stride, errc::config_invalid, "conv spec: kernel must be >= stride");
      require(l.channels >= 1, errc::config_invalid, "conv spec: channels must be >= 1");
    }
  }

  int total_stride() const {
    int s = 1;
    for (const auto& l : layers) s *= l.stride;
    return s;
  }
};

struct EncoderConfig {
  ConvSpec conv = ConvSpec::preset("toy");
  int n_transformer_layers = 2;
  int model_dim = 64;
  int n_heads = 4;
  int ffn_dim = 256;

  void validate() const {
    conv.validate();
    require(n_transformer_layers >= 1, errc::config_invalid, "encoder: needs >= 1 layer");
    require(model_dim >= 1 && n_heads >= 1 && model_dim % n_heads == 0, errc::config_invalid,
            "encoder: model_dim must be divisible by n_heads");
    require(ffn_dim >= 1, errc::config_invalid, "encoder: ffn_dim must be >= 1");
  }
};

// A [T x D] feature matrix with the sampling metadata needed to relate frames
// back to waveform time.
template <typename T>
struct FeatureSequence {
  Mat<T> values;
  int frame_stride_samples = 0;
  int sample_rate = 0;
};

// Frames produced by the conv stack for a waveform of n_samples, applying
// L <- floor((L - kernel) / stride) + 1 per layer with no padding.
inline int conv_output_length(int n_samples, const ConvSpec& spec) {
  spec.validate();
  int len = n_samples;
  for (const auto& l : spec.layers) {
    require(len >= l.kernel, errc::waveform_too_short,
            "waveform too short for conv stack (need at least one frame)");
    len = (len - l.kernel) / l.stride + 1;
  }
  return len;
}

template <typename T>
struct EncoderHandles {
  struct ConvBlock {
    int w = -1, b = -1;
    LnHandles ln;
  };
  std::vector<ConvBlock> conv;
  int proj_w = -1, proj_b = -1;
  std::vector<BlockHandles> blocks;
  LnHandles ln_f;
};

template <typename T>
EncoderHandles<T> make_encoder_params(ParamSet<T>& ps, const EncoderConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, fnv1a64("encoder")));
  EncoderHandles<T> h;
  int c_in = 1;
  for (size_t i = 0; i < cfg.conv.layers.size(); ++i) {
    const auto& l = cfg.conv.layers[i];
    const std::string prefix = "encoder.conv" + std::to_string(i);
    typename EncoderHandles<T>::ConvBlock blk;
    Mat<T> w(l.kernel * c_in, l.channels);
    fill_fan_in_uniform(w, rng, l.kernel * c_in);
    blk.w = ps.add(ParamGroup::encoder, prefix + ".w", std::move(w));
    blk.b = make_zero_bias(ps, ParamGroup::encoder, prefix + ".b", l.channels);
    blk.ln = make_layer_norm(ps, ParamGroup::encoder, prefix + ".ln", l.channels);
    h.conv.push_back(blk);
    c_in = l.channels;
  }
  h.proj_w = make_linear_weight(ps, ParamGroup::encoder, "encoder.proj.w", c_in, cfg.model_dim, rng);
  h.proj_b = make_zero_bias(ps, ParamGroup::encoder, "encoder.proj.b", cfg.model_dim);
  for (int i = 0; i < cfg.n_transformer_layers; ++i) {
    h.blocks.push_back(make_transformer_block(ps, ParamGroup::encoder,
                                              "encoder.block" + std::to_string(i), cfg.model_dim,
                                              cfg.ffn_dim, rng));
  }
  h.ln_f = make_layer_norm(ps, ParamGroup::encoder, "encoder.ln_f", cfg.model_dim);
  return h;
}

// Graph forward: waveform leaf (n x 1) -> features (T x model_dim).
// Conv blocks are conv -> layer norm -> GELU; transformer layers are
// bidirectional pre-norm blocks over the frame sequence with sinusoidal
// positions added after the conv stack.
template <typename T>
typename Graph<T>::VarId encoder_forward(Graph<T>& g, typename Graph<T>::VarId waveform,
                                         const BoundParams<T>& bp, const EncoderHandles<T>& h,
                                         const EncoderConfig& cfg) {
  auto x = waveform;
  for (size_t i = 0; i < cfg.conv.layers.size(); ++i) {
    const auto& l = cfg.conv.layers[i];
    const auto& blk = h.conv[i];
    x = g.conv1d(x, bp[blk.w], bp[blk.b], l.kernel, l.stride, "encoder.conv");
    x = g.layer_norm(x, bp[blk.ln.gamma], bp[blk.ln.beta]);
    x = g.gelu(x);
  }
  x = g.linear(x, bp[h.proj_w], bp[h.proj_b]);
  const int frames = g.val(x).rows();
  const auto pos = g.constant(sinusoidal_positions<T>(frames, cfg.model_dim), "encoder.pos");
  x = g.add(x, pos);
  for (const auto& blk : h.blocks) {
    x = transformer_block_forward(g, x, bp, blk, cfg.n_heads, /*causal=*/false,
                                  "encoder.attn.softmax");
  }
  return g.layer_norm(x, bp[h.ln_f.gamma], bp[h.ln_f.beta], T(1e-5), "encoder.out");
}

// Inference wrapper around the graph path.
template <typename T>
FeatureSequence<T> encode(const std::vector<float>& waveform, int sample_rate,
                          const EncoderConfig& cfg, const ParamSet<T>& ps,
                          const EncoderHandles<T>& h) {
  cfg.validate();
  Mat<T> wave(static_cast<int>(waveform.size()), 1);
  for (size_t i = 0; i < waveform.size(); ++i) {
    require(std::isfinite(static_cast<double>(waveform[i])), errc::non_finite_input,
            "encode: non-finite waveform sample");
    wave.data()[i] = static_cast<T>(waveform[i]);
  }
  conv_output_length(static_cast<int>(waveform.size()), cfg.conv);  // length precondition
  Graph<T> g;
  const auto bound = bind_params(g, ps, {false, false, false});
  const auto wave_id = g.leaf(wave, false, "encoder.waveform");
  const auto out = encoder_forward(g, wave_id, bound, h, cfg);
  FeatureSequence<T> fs;
  fs.values = g.val(out);
  fs.frame_stride_samples = cfg.conv.total_stride();
  fs.sample_rate = sample_rate;
  return fs;
}

}  // namespace capt
