#pragma once

#include <array>
#include <string>
#include <vector>

#include "capt/error.hpp"
#include "capt/graph.hpp"
#include "capt/mat.hpp"

namespace capt {

enum class ParamGroup { encoder = 0, adapter = 1, lm = 2 };

inline const char* param_group_name(ParamGroup g) {
  switch (g) {
    case ParamGroup::encoder: return "encoder";
    case ParamGroup::adapter: return "adapter";
    case ParamGroup::lm: return "lm";
  }
  return "?";
}

// Ordered, named parameter tensors. Modules hold integer handles into the set;
// the trainer, checkpoint codec and gradient buffers iterate entries by index,
// so there is a single source of truth for parameter identity and order.
template <typename T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    ParamGroup group;
    Mat<T> value;
  };

  int add(ParamGroup group, std::string name, Mat<T> value) {
    entries_.push_back(Entry{std::move(name), group, std::move(value)});
    return static_cast<int>(entries_.size()) - 1;
  }

  int count() const { return static_cast<int>(entries_.size()); }
  Entry& entry(int i) { return entries_[static_cast<size_t>(i)]; }
  const Entry& entry(int i) const { return entries_[static_cast<size_t>(i)]; }
  Mat<T>& value(int i) { return entries_[static_cast<size_t>(i)].value; }
  const Mat<T>& value(int i) const { return entries_[static_cast<size_t>(i)].value; }

  int find(const std::string& name) const {
    for (int i = 0; i < count(); ++i)
      if (entries_[static_cast<size_t>(i)].name == name) return i;
    return -1;
  }

  size_t scalar_count() const {
    size_t n = 0;
    for (const Entry& e : entries_) n += e.value.size();
    return n;
  }

 private:
  std::vector<Entry> entries_;
};

// Per-graph leaf bindings, one VarId per ParamSet entry (same order).
template <typename T>
struct BoundParams {
  std::vector<typename Graph<T>::VarId> ids;

  typename Graph<T>::VarId operator[](int handle) const {
    return ids[static_cast<size_t>(handle)];
  }
};

template <typename T>
BoundParams<T> bind_params(Graph<T>& g, const ParamSet<T>& ps,
                           const std::array<bool, 3>& trainable_by_group) {
  BoundParams<T> bound;
  bound.ids.reserve(static_cast<size_t>(ps.count()));
  for (int i = 0; i < ps.count(); ++i) {
    const auto& e = ps.entry(i);
    const bool needs_grad = trainable_by_group[static_cast<size_t>(e.group)];
    bound.ids.push_back(g.leaf(e.value, needs_grad, e.name.c_str()));
  }
  return bound;
}

// Gradient accumulator with the same shapes as a ParamSet.
template <typename T>
class GradBuffer {
 public:
  explicit GradBuffer(const ParamSet<T>& ps) {
    grads_.reserve(static_cast<size_t>(ps.count()));
    for (int i = 0; i < ps.count(); ++i) {
      const Mat<T>& v = ps.value(i);
      grads_.push_back(Mat<T>::zeros(v.rows(), v.cols()));
    }
  }

  void zero() {
    for (Mat<T>& g : grads_) g.fill(T(0));
  }

  // Adds the gradients the graph accumulated on the bound leaves.
  void accumulate(const Graph<T>& g, const BoundParams<T>& bound) {
    for (size_t i = 0; i < grads_.size(); ++i) {
      const Mat<T>& leaf_grad = g.grad(bound.ids[i]);
      if (!leaf_grad.empty()) grads_[i].add_inplace(leaf_grad);
    }
  }

  void scale(T factor) {
    for (Mat<T>& g : grads_)
      for (size_t i = 0; i < g.size(); ++i) g.data()[i] *= factor;
  }

  Mat<T>& operator[](int i) { return grads_[static_cast<size_t>(i)]; }
  const Mat<T>& operator[](int i) const { return grads_[static_cast<size_t>(i)]; }
  int count() const { return static_cast<int>(grads_.size()); }

 private:
  std::vector<Mat<T>> grads_;
};

}  // namespace capt
