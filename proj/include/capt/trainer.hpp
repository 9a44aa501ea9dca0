#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "capt/model.hpp"
#include "capt/parallel.hpp"
#include "capt/params.hpp"

namespace capt {

struct TrainConfig {
  int stage = 1;
  int epochs = 20;             // toy defaults: 20 for stage 1, 30 for stage 2
  double learning_rate = 1e-3; // toy defaults: 1e-3 stage 1, 5e-4 stage 2
  int batch_size = 16;
  uint64_t seed = 0;
  bool use_prompt_text = true;
  std::string init_from;       // optional checkpoint path, resolved by the CLI
  int threads = 0;             // 0: use all available

  // AdamW with decoupled weight decay and global-norm gradient clipping.
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  static TrainConfig toy_defaults(int stage) {
    TrainConfig cfg;
    cfg.stage = stage;
    cfg.epochs = stage == 1 ? 20 : 30;
    cfg.learning_rate = stage == 1 ? 1e-3 : 5e-4;
    return cfg;
  }

  void validate() const {
    require(stage == 1 || stage == 2, errc::invalid_stage, "train config: stage must be 1 or 2");
    require(epochs >= 1, errc::config_invalid, "train config: epochs must be >= 1");
    require(batch_size >= 1, errc::config_invalid, "train config: batch_size must be >= 1");
    require(learning_rate > 0.0, errc::config_invalid, "train config: bad learning rate");
    require(grad_clip > 0.0, errc::config_invalid, "train config: bad grad clip");
  }
};

struct EpochLoss {
  int epoch = 0;
  std::string split;
  double loss = 0.0;
};

template <typename T>
struct TrainResult {
  ModelState<T> state;
  std::vector<EpochLoss> log;
};

// AdamW over the trainable entries of a ParamSet. Biases and norm parameters
// (single-row tensors) are excluded from weight decay.
template <typename T>
class AdamW {
 public:
  AdamW(const ParamSet<T>& ps, const TrainConfig& cfg) : cfg_(cfg) {
    m_.reserve(static_cast<size_t>(ps.count()));
    v_.reserve(static_cast<size_t>(ps.count()));
    for (int i = 0; i < ps.count(); ++i) {
      const Mat<T>& val = ps.value(i);
      m_.push_back(Mat<T>::zeros(val.rows(), val.cols()));
      v_.push_back(Mat<T>::zeros(val.rows(), val.cols()));
    }
  }

  void step(ParamSet<T>& ps, const GradBuffer<T>& grads, const std::array<bool, 3>& trainable) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.adam_beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.adam_beta2, t_);
    for (int i = 0; i < ps.count(); ++i) {
      auto& entry = ps.entry(i);
      if (!trainable[static_cast<size_t>(entry.group)]) continue;
      const bool decay = entry.value.rows() > 1;
      T* w = entry.value.data();
      const T* g = grads[i].data();
      T* m = m_[static_cast<size_t>(i)].data();
      T* v = v_[static_cast<size_t>(i)].data();
      for (size_t j = 0; j < entry.value.size(); ++j) {
        m[j] = static_cast<T>(cfg_.adam_beta1 * m[j] + (1.0 - cfg_.adam_beta1) * g[j]);
        v[j] = static_cast<T>(cfg_.adam_beta2 * v[j] + (1.0 - cfg_.adam_beta2) * g[j] * g[j]);
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        double update = cfg_.learning_rate * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
        if (decay) update += cfg_.learning_rate * cfg_.weight_decay * w[j];
        w[j] = static_cast<T>(w[j] - update);
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Mat<T>> m_, v_;
  int t_ = 0;
};

template <typename T>
double gradient_global_norm(const GradBuffer<T>& grads, const ParamSet<T>& ps,
                            const std::array<bool, 3>& trainable) {
  double sq = 0.0;
  for (int i = 0; i < ps.count(); ++i) {
    if (!trainable[static_cast<size_t>(ps.entry(i).group)]) continue;
    const Mat<T>& g = grads[i];
    for (size_t j = 0; j < g.size(); ++j) sq += static_cast<double>(g.data()[j]) * g.data()[j];
  }
  return std::sqrt(sq);
}

// Epoch ordering: shuffle, then sort within windows of several batches by
// waveform length so batches group similar lengths without freezing the
// batch composition across epochs.
inline std::vector<int> epoch_order(const std::vector<Utterance>& data, uint64_t seed, int epoch,
                                    int batch_size) {
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, mix_seed(fnv1a64("epoch"), static_cast<uint64_t>(epoch))));
  for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
    const int j = rng.uniform_int(0, i);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  const size_t window = static_cast<size_t>(batch_size) * 8;
  for (size_t start = 0; start < order.size(); start += window) {
    const size_t end = std::min(order.size(), start + window);
    std::stable_sort(order.begin() + static_cast<long>(start),
                     order.begin() + static_cast<long>(end), [&](int a, int b) {
                       return data[static_cast<size_t>(a)].samples.size() <
                              data[static_cast<size_t>(b)].samples.size();
                     });
  }
  return order;
}

// One training stage. Frozen groups are never touched: their graph leaves do
// not accumulate gradients and the optimizer skips them, so their bytes are
// identical before and after. Deterministic given (config, init, data order):
// per-sample gradients are reduced in batch index order regardless of thread
// scheduling.
template <typename T>
TrainResult<T> train_stage(const TrainConfig& config, const std::vector<Utterance>& data,
                           ModelState<T> init) {
  config.validate();
  require(!data.empty(), errc::invalid_argument, "train_stage: no training data");
  validate_dimension_chain(init.encoder_config, init.adapter_config, init.lm_config);

  TrainResult<T> result;
  result.state = std::move(init);
  ModelState<T>& state = result.state;
  state.freeze_flags = freeze_mask(config.stage);
  const std::array<bool, 3> trainable = trainable_from_frozen(state.freeze_flags);

  AdamW<T> optimizer(state.params, config);
  GradBuffer<T> grads(state.params);
  const int n = static_cast<int>(data.size());
  const int threads = config.threads > 0 ? config.threads : default_thread_count();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const std::vector<int> order = epoch_order(data, config.seed, epoch, config.batch_size);
    double epoch_loss = 0.0;
    int epoch_samples = 0;
    for (int b0 = 0; b0 < n; b0 += config.batch_size) {
      const int bn = std::min(config.batch_size, n - b0);
      std::vector<std::unique_ptr<SampleGraph<T>>> samples(static_cast<size_t>(bn));
      parallel_for(bn, threads, [&](int i) {
        const Utterance& utt = data[static_cast<size_t>(order[static_cast<size_t>(b0 + i)])];
        auto sample = build_sample_graph(state, config.stage, utt, config.use_prompt_text,
                                         trainable);
        sample->graph.backward(sample->lm_out.loss);
        samples[static_cast<size_t>(i)] = std::move(sample);
      });
      grads.zero();
      for (int i = 0; i < bn; ++i) {
        grads.accumulate(samples[static_cast<size_t>(i)]->graph,
                         samples[static_cast<size_t>(i)]->bound);
        epoch_loss += samples[static_cast<size_t>(i)]->loss();
      }
      epoch_samples += bn;
      grads.scale(T(1) / static_cast<T>(bn));
      const double norm = gradient_global_norm(grads, state.params, trainable);
      if (norm > config.grad_clip) grads.scale(static_cast<T>(config.grad_clip / norm));
      optimizer.step(state.params, grads, trainable);
    }
    result.log.push_back({epoch, "train", epoch_loss / epoch_samples});
  }

  state.provenance = config.stage == 1 ? StageProvenance::stage1 : StageProvenance::stage2;
  state.init_from_stage1 = config.stage == 2 && !config.init_from.empty();
  return result;
}

}  // namespace capt
