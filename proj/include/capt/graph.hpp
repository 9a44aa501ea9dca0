#pragma once

#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "capt/error.hpp"
#include "capt/mat.hpp"

namespace capt {

// Reverse-mode autodiff tape over Mat<T>. Ops append nodes in evaluation
// order; backward() walks the tape in reverse creation order, which is a
// valid reverse topological order because every op is created after its
// inputs. One Graph instance per forward/backward pass, single-threaded.
template <typename T>
class Graph {
 public:
  using VarId = int;

  Graph() { nodes_.reserve(512); }

  // Leaf referencing external storage (parameters, inputs). The caller keeps
  // the Mat alive and unchanged for the lifetime of the graph.
  VarId leaf(const Mat<T>& external, bool needs_grad, const char* tag = "") {
    Node n;
    n.external = &external;
    n.needs_grad = needs_grad;
    n.tag = tag;
    nodes_.push_back(std::move(n));
    return static_cast<VarId>(nodes_.size()) - 1;
  }

  // Owned constant (no gradient).
  VarId constant(Mat<T> value, const char* tag = "") {
    Node n;
    n.value = std::move(value);
    n.tag = tag;
    nodes_.push_back(std::move(n));
    return static_cast<VarId>(nodes_.size()) - 1;
  }

  const Mat<T>& val(VarId id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    return n.external ? *n.external : n.value;
  }

  // Gradient of the last backward() w.r.t. node id; empty if none flowed.
  const Mat<T>& grad(VarId id) const { return nodes_[static_cast<size_t>(id)].grad; }

  bool needs_grad(VarId id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
  const char* tag(VarId id) const { return nodes_[static_cast<size_t>(id)].tag; }
  int node_count() const { return static_cast<int>(nodes_.size()); }

  int count_tagged(const char* tag) const {
    int n = 0;
    for (const Node& node : nodes_)
      if (std::strcmp(node.tag, tag) == 0) ++n;
    return n;
  }

  std::vector<VarId> find_tagged(const char* tag) const {
    std::vector<VarId> ids;
    for (size_t i = 0; i < nodes_.size(); ++i)
      if (std::strcmp(nodes_[i].tag, tag) == 0) ids.push_back(static_cast<VarId>(i));
    return ids;
  }

  // ---- ops ----

  // a(m x k) * b(k x n)
  VarId matmul(VarId a, VarId b, const char* tag = "") {
    const Mat<T>& av = val(a);
    const Mat<T>& bv = val(b);
    require(av.cols() == bv.rows(), errc::shape_mismatch, "matmul: inner dims disagree");
    Mat<T> out = matmul_nn(av, bv);
    return make_op(std::move(out), {a, b}, tag, [this, a, b](const Mat<T>& g) {
      if (wants(a)) {
        gemm_nt(g.rows(), val(a).cols(), g.cols(), T(1), g.data(), g.cols(), val(b).data(),
                val(b).cols(), T(1), grad_buf(a).data(), val(a).cols());
      }
      if (wants(b)) {
        gemm_tn(val(b).rows(), g.cols(), g.rows(), T(1), val(a).data(), val(a).cols(), g.data(),
                g.cols(), T(1), grad_buf(b).data(), val(b).cols());
      }
    });
  }

  // a(m x k) * b(n x k)^T
  VarId matmul_transposed(VarId a, VarId b, const char* tag = "") {
    const Mat<T>& av = val(a);
    const Mat<T>& bv = val(b);
    require(av.cols() == bv.cols(), errc::shape_mismatch, "matmul_transposed: inner dims disagree");
    Mat<T> out = matmul_nt(av, bv);
    return make_op(std::move(out), {a, b}, tag, [this, a, b](const Mat<T>& g) {
      if (wants(a)) {
        gemm_nn(g.rows(), val(b).cols(), g.cols(), T(1), g.data(), g.cols(), val(b).data(),
                val(b).cols(), T(1), grad_buf(a).data(), val(a).cols());
      }
      if (wants(b)) {
        gemm_tn(g.cols(), val(a).cols(), g.rows(), T(1), g.data(), g.cols(), val(a).data(),
                val(a).cols(), T(1), grad_buf(b).data(), val(b).cols());
      }
    });
  }

  // x(T x in) * w(in x out) + bias(1 x out) broadcast over rows. bias may be -1 (none).
  VarId linear(VarId x, VarId w, VarId bias, const char* tag = "") {
    const Mat<T>& xv = val(x);
    const Mat<T>& wv = val(w);
    require(xv.cols() == wv.rows(), errc::shape_mismatch, "linear: inner dims disagree");
    Mat<T> out = matmul_nn(xv, wv);
    if (bias >= 0) {
      const Mat<T>& bv = val(bias);
      require(bv.rows() == 1 && bv.cols() == out.cols(), errc::shape_mismatch, "linear: bad bias");
      for (int i = 0; i < out.rows(); ++i) {
        T* row = out.row(i);
        for (int j = 0; j < out.cols(); ++j) row[j] += bv.data()[j];
      }
    }
    std::vector<VarId> ins = {x, w};
    if (bias >= 0) ins.push_back(bias);
    return make_op(std::move(out), ins, tag, [this, x, w, bias](const Mat<T>& g) {
      if (wants(x)) {
        gemm_nt(g.rows(), val(x).cols(), g.cols(), T(1), g.data(), g.cols(), val(w).data(),
                val(w).cols(), T(1), grad_buf(x).data(), val(x).cols());
      }
      if (wants(w)) {
        gemm_tn(val(w).rows(), g.cols(), g.rows(), T(1), val(x).data(), val(x).cols(), g.data(),
                g.cols(), T(1), grad_buf(w).data(), val(w).cols());
      }
      if (bias >= 0 && wants(bias)) {
        T* bg = grad_buf(bias).data();
        for (int i = 0; i < g.rows(); ++i) {
          const T* row = g.row(i);
          for (int j = 0; j < g.cols(); ++j) bg[j] += row[j];
        }
      }
    });
  }

  VarId add(VarId a, VarId b, const char* tag = "") {
    const Mat<T>& av = val(a);
    const Mat<T>& bv = val(b);
    require(av.same_shape(bv), errc::shape_mismatch, "add: shape mismatch");
    Mat<T> out = av;
    out.add_inplace(bv);
    return make_op(std::move(out), {a, b}, tag, [this, a, b](const Mat<T>& g) {
      if (wants(a)) grad_buf(a).add_inplace(g);
      if (wants(b)) grad_buf(b).add_inplace(g);
    });
  }

  VarId scale(VarId a, T factor, const char* tag = "") {
    Mat<T> out = val(a);
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] *= factor;
    return make_op(std::move(out), {a}, tag, [this, a, factor](const Mat<T>& g) {
      if (!wants(a)) return;
      Mat<T>& ga = grad_buf(a);
      for (size_t i = 0; i < g.size(); ++i) ga.data()[i] += factor * g.data()[i];
    });
  }

  VarId mul_elem(VarId a, VarId b, const char* tag = "") {
    const Mat<T>& av = val(a);
    const Mat<T>& bv = val(b);
    require(av.same_shape(bv), errc::shape_mismatch, "mul_elem: shape mismatch");
    Mat<T> out(av.rows(), av.cols());
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = av.data()[i] * bv.data()[i];
    return make_op(std::move(out), {a, b}, tag, [this, a, b](const Mat<T>& g) {
      if (wants(a)) {
        Mat<T>& ga = grad_buf(a);
        for (size_t i = 0; i < g.size(); ++i) ga.data()[i] += g.data()[i] * val(b).data()[i];
      }
      if (wants(b)) {
        Mat<T>& gb = grad_buf(b);
        for (size_t i = 0; i < g.size(); ++i) gb.data()[i] += g.data()[i] * val(a).data()[i];
      }
    });
  }

  // Sum of all elements -> 1x1.
  VarId sum(VarId a, const char* tag = "") {
    const Mat<T>& av = val(a);
    Mat<T> out(1, 1);
    T s = T(0);
    for (size_t i = 0; i < av.size(); ++i) s += av.data()[i];
    out(0, 0) = s;
    return make_op(std::move(out), {a}, tag, [this, a](const Mat<T>& g) {
      if (!wants(a)) return;
      Mat<T>& ga = grad_buf(a);
      const T gv = g(0, 0);
      for (size_t i = 0; i < ga.size(); ++i) ga.data()[i] += gv;
    });
  }

  VarId concat_rows(const std::vector<VarId>& parts, const char* tag = "") {
    require(!parts.empty(), errc::invalid_argument, "concat_rows: no parts");
    const int cols = val(parts[0]).cols();
    int rows = 0;
    for (VarId p : parts) {
      require(val(p).cols() == cols, errc::shape_mismatch, "concat_rows: column mismatch");
      rows += val(p).rows();
    }
    Mat<T> out(rows, cols);
    int r = 0;
    for (VarId p : parts) {
      const Mat<T>& pv = val(p);
      std::memcpy(out.row(r), pv.data(), pv.size() * sizeof(T));
      r += pv.rows();
    }
    return make_op(std::move(out), parts, tag, [this, parts](const Mat<T>& g) {
      int r0 = 0;
      for (VarId p : parts) {
        const int pr = val(p).rows();
        if (wants(p)) {
          Mat<T>& gp = grad_buf(p);
          for (int i = 0; i < pr; ++i) {
            const T* src = g.row(r0 + i);
            T* dst = gp.row(i);
            for (int j = 0; j < g.cols(); ++j) dst[j] += src[j];
          }
        }
        r0 += pr;
      }
    });
  }

  VarId concat_cols(const std::vector<VarId>& parts, const char* tag = "") {
    require(!parts.empty(), errc::invalid_argument, "concat_cols: no parts");
    const int rows = val(parts[0]).rows();
    int cols = 0;
    for (VarId p : parts) {
      require(val(p).rows() == rows, errc::shape_mismatch, "concat_cols: row mismatch");
      cols += val(p).cols();
    }
    Mat<T> out(rows, cols);
    int c = 0;
    for (VarId p : parts) {
      const Mat<T>& pv = val(p);
      for (int i = 0; i < rows; ++i)
        std::memcpy(out.row(i) + c, pv.row(i), static_cast<size_t>(pv.cols()) * sizeof(T));
      c += pv.cols();
    }
    return make_op(std::move(out), parts, tag, [this, parts](const Mat<T>& g) {
      int c0 = 0;
      for (VarId p : parts) {
        const int pc = val(p).cols();
        if (wants(p)) {
          Mat<T>& gp = grad_buf(p);
          for (int i = 0; i < g.rows(); ++i) {
            const T* src = g.row(i) + c0;
            T* dst = gp.row(i);
            for (int j = 0; j < pc; ++j) dst[j] += src[j];
          }
        }
        c0 += pc;
      }
    });
  }

  VarId slice_rows(VarId a, int r0, int n, const char* tag = "") {
    const Mat<T>& av = val(a);
    require(r0 >= 0 && n >= 1 && r0 + n <= av.rows(), errc::shape_mismatch, "slice_rows: range");
    Mat<T> out(n, av.cols());
    std::memcpy(out.data(), av.row(r0), out.size() * sizeof(T));
    return make_op(std::move(out), {a}, tag, [this, a, r0, n](const Mat<T>& g) {
      if (!wants(a)) return;
      Mat<T>& ga = grad_buf(a);
      for (int i = 0; i < n; ++i) {
        const T* src = g.row(i);
        T* dst = ga.row(r0 + i);
        for (int j = 0; j < g.cols(); ++j) dst[j] += src[j];
      }
    });
  }

  VarId slice_cols(VarId a, int c0, int n, const char* tag = "") {
    const Mat<T>& av = val(a);
    require(c0 >= 0 && n >= 1 && c0 + n <= av.cols(), errc::shape_mismatch, "slice_cols: range");
    Mat<T> out(av.rows(), n);
    for (int i = 0; i < av.rows(); ++i) {
      const T* src = av.row(i) + c0;
      std::memcpy(out.row(i), src, static_cast<size_t>(n) * sizeof(T));
    }
    return make_op(std::move(out), {a}, tag, [this, a, c0, n](const Mat<T>& g) {
      if (!wants(a)) return;
      Mat<T>& ga = grad_buf(a);
      for (int i = 0; i < g.rows(); ++i) {
        const T* src = g.row(i);
        T* dst = ga.row(i) + c0;
        for (int j = 0; j < n; ++j) dst[j] += src[j];
      }
    });
  }

  // Per-row layer normalization with affine gamma/beta (1 x C each).
  VarId layer_norm(VarId x, VarId gamma, VarId beta, T eps = T(1e-5), const char* tag = "") {
    const Mat<T>& xv = val(x);
    const Mat<T>& gv = val(gamma);
    const Mat<T>& bv = val(beta);
    const int C = xv.cols();
    require(gv.rows() == 1 && gv.cols() == C && bv.rows() == 1 && bv.cols() == C,
            errc::shape_mismatch, "layer_norm: bad affine shape");
    Mat<T> out(xv.rows(), C);
    Mat<T> xhat(xv.rows(), C);
    std::vector<T> inv_sigma(static_cast<size_t>(xv.rows()));
    for (int i = 0; i < xv.rows(); ++i) {
      const T* row = xv.row(i);
      T mean = T(0);
      for (int j = 0; j < C; ++j) mean += row[j];
      mean /= static_cast<T>(C);
      T var = T(0);
      for (int j = 0; j < C; ++j) {
        const T d = row[j] - mean;
        var += d * d;
      }
      var /= static_cast<T>(C);
      const T is = T(1) / std::sqrt(var + eps);
      inv_sigma[static_cast<size_t>(i)] = is;
      T* hrow = xhat.row(i);
      T* orow = out.row(i);
      for (int j = 0; j < C; ++j) {
        hrow[j] = (row[j] - mean) * is;
        orow[j] = hrow[j] * gv.data()[j] + bv.data()[j];
      }
    }
    auto xhat_s = std::make_shared<Mat<T>>(std::move(xhat));
    auto is_s = std::make_shared<std::vector<T>>(std::move(inv_sigma));
    return make_op(std::move(out), {x, gamma, beta}, tag,
                   [this, x, gamma, beta, xhat_s, is_s](const Mat<T>& g) {
        const int C = g.cols();
        if (wants(gamma)) {
          T* gg = grad_buf(gamma).data();
          for (int i = 0; i < g.rows(); ++i) {
            const T* grow = g.row(i);
            const T* hrow = xhat_s->row(i);
            for (int j = 0; j < C; ++j) gg[j] += grow[j] * hrow[j];
          }
        }
        if (wants(beta)) {
          T* gb = grad_buf(beta).data();
          for (int i = 0; i < g.rows(); ++i) {
            const T* grow = g.row(i);
            for (int j = 0; j < C; ++j) gb[j] += grow[j];
          }
        }
        if (wants(x)) {
          Mat<T>& gx = grad_buf(x);
          const T* gam = val(gamma).data();
          for (int i = 0; i < g.rows(); ++i) {
            const T* grow = g.row(i);
            const T* hrow = xhat_s->row(i);
            T* xrow = gx.row(i);
            T sum_dy = T(0), sum_dy_xhat = T(0);
            for (int j = 0; j < C; ++j) {
              const T dy = grow[j] * gam[j];
              sum_dy += dy;
              sum_dy_xhat += dy * hrow[j];
            }
            const T invC = T(1) / static_cast<T>(C);
            const T is = (*is_s)[static_cast<size_t>(i)];
            for (int j = 0; j < C; ++j) {
              const T dy = grow[j] * gam[j];
              xrow[j] += is * (dy - sum_dy * invC - hrow[j] * sum_dy_xhat * invC);
            }
          }
        }
      });
  }

  // Exact GELU: x * Phi(x).
  VarId gelu(VarId x, const char* tag = "") {
    const Mat<T>& xv = val(x);
    Mat<T> out(xv.rows(), xv.cols());
    for (size_t i = 0; i < xv.size(); ++i) {
      const T v = xv.data()[i];
      out.data()[i] = v * phi_cdf(v);
    }
    return make_op(std::move(out), {x}, tag, [this, x](const Mat<T>& g) {
      if (!wants(x)) return;
      Mat<T>& gx = grad_buf(x);
      const Mat<T>& xv = val(x);
      for (size_t i = 0; i < g.size(); ++i) {
        const T v = xv.data()[i];
        const T d = phi_cdf(v) + v * phi_pdf(v);
        gx.data()[i] += g.data()[i] * d;
      }
    });
  }

  // Row-wise softmax. If causal, entry (i, j) for j > i is masked out
  // (requires a square matrix); each row is normalized over its allowed span.
  VarId softmax_rows(VarId x, bool causal, const char* tag = "") {
    const Mat<T>& xv = val(x);
    if (causal)
      require(xv.rows() == xv.cols(), errc::shape_mismatch, "softmax_rows: causal needs square");
    Mat<T> out(xv.rows(), xv.cols());
    for (int i = 0; i < xv.rows(); ++i) {
      const int span = causal ? i + 1 : xv.cols();
      const T* row = xv.row(i);
      T* orow = out.row(i);
      T mx = -std::numeric_limits<T>::infinity();
      for (int j = 0; j < span; ++j) mx = std::max(mx, row[j]);
      T denom = T(0);
      for (int j = 0; j < span; ++j) {
        orow[j] = std::exp(row[j] - mx);
        denom += orow[j];
      }
      const T inv = T(1) / denom;
      for (int j = 0; j < span; ++j) orow[j] *= inv;
      for (int j = span; j < xv.cols(); ++j) orow[j] = T(0);
    }
    const VarId self = node_count();  // id assigned to this op below
    return make_op(std::move(out), {x}, tag, [this, x, causal, self](const Mat<T>& g) {
      if (!wants(x)) return;
      const Mat<T>& p = val(self);
      Mat<T>& gx = grad_buf(x);
      for (int i = 0; i < g.rows(); ++i) {
        const int span = causal ? i + 1 : g.cols();
        const T* prow = p.row(i);
        const T* grow = g.row(i);
        T* xrow = gx.row(i);
        T dot = T(0);
        for (int j = 0; j < span; ++j) dot += grow[j] * prow[j];
        for (int j = 0; j < span; ++j) xrow[j] += prow[j] * (grow[j] - dot);
      }
    });
  }

  // Gather rows of table by index; ids must be in range.
  VarId embedding(VarId table, const std::vector<int>& ids, const char* tag = "") {
    const Mat<T>& tv = val(table);
    Mat<T> out(static_cast<int>(ids.size()), tv.cols());
    for (size_t i = 0; i < ids.size(); ++i) {
      require(ids[i] >= 0 && ids[i] < tv.rows(), errc::invalid_argument, "embedding: id range");
      std::memcpy(out.row(static_cast<int>(i)), tv.row(ids[i]),
                  static_cast<size_t>(tv.cols()) * sizeof(T));
    }
    return make_op(std::move(out), {table}, tag, [this, table, ids](const Mat<T>& g) {
      if (!wants(table)) return;
      Mat<T>& gt = grad_buf(table);
      for (size_t i = 0; i < ids.size(); ++i) {
        const T* src = g.row(static_cast<int>(i));
        T* dst = gt.row(ids[i]);
        for (int j = 0; j < g.cols(); ++j) dst[j] += src[j];
      }
    });
  }

  // 1-D convolution, no padding. x is (T_in x C_in), weight ((K*C_in) x C_out),
  // bias (1 x C_out) or -1. Output row t uses input rows [t*stride, t*stride+K).
  VarId conv1d(VarId x, VarId weight, VarId bias, int kernel, int stride, const char* tag = "") {
    const Mat<T>& xv = val(x);
    const Mat<T>& wv = val(weight);
    const int c_in = xv.cols();
    require(kernel >= 1 && stride >= 1 && kernel >= stride, errc::invalid_argument,
            "conv1d: bad kernel/stride");
    require(wv.rows() == kernel * c_in, errc::shape_mismatch, "conv1d: weight rows != K*C_in");
    require(xv.rows() >= kernel, errc::waveform_too_short, "conv1d: input shorter than kernel");
    const int t_out = (xv.rows() - kernel) / stride + 1;
    const int c_out = wv.cols();
    // im2col: each output frame's receptive field flattened to one row.
    auto patches = std::make_shared<Mat<T>>(t_out, kernel * c_in);
    for (int t = 0; t < t_out; ++t) {
      std::memcpy(patches->row(t), xv.row(t * stride),
                  static_cast<size_t>(kernel) * c_in * sizeof(T));
    }
    Mat<T> out = matmul_nn(*patches, wv);
    if (bias >= 0) {
      const Mat<T>& bv = val(bias);
      require(bv.rows() == 1 && bv.cols() == c_out, errc::shape_mismatch, "conv1d: bad bias");
      for (int i = 0; i < out.rows(); ++i) {
        T* row = out.row(i);
        for (int j = 0; j < c_out; ++j) row[j] += bv.data()[j];
      }
    }
    std::vector<VarId> ins = {x, weight};
    if (bias >= 0) ins.push_back(bias);
    return make_op(std::move(out), ins, tag,
                   [this, x, weight, bias, kernel, stride, patches](const Mat<T>& g) {
        const Mat<T>& wv = val(weight);
        if (wants(weight)) {
          gemm_tn(wv.rows(), wv.cols(), g.rows(), T(1), patches->data(), patches->cols(), g.data(),
                  g.cols(), T(1), grad_buf(weight).data(), wv.cols());
        }
        if (wants(x)) {
          Mat<T> dpatches = matmul_nt(g, wv);  // (t_out x K*C_in)
          Mat<T>& gx = grad_buf(x);
          const int c_in = val(x).cols();
          for (int t = 0; t < g.rows(); ++t) {
            const T* src = dpatches.row(t);
            T* dst = gx.row(t * stride);
            for (int j = 0; j < kernel * c_in; ++j) dst[j] += src[j];
          }
        }
        if (bias >= 0 && wants(bias)) {
          T* bg = grad_buf(bias).data();
          for (int i = 0; i < g.rows(); ++i) {
            const T* row = g.row(i);
            for (int j = 0; j < g.cols(); ++j) bg[j] += row[j];
          }
        }
      });
  }

  // Mean cross-entropy of logits rows [row0, row0+n) against targets; the
  // remaining rows do not contribute to the loss or its gradient.
  VarId cross_entropy_rows(VarId logits, const std::vector<int>& targets, int row0,
                           const char* tag = "") {
    const Mat<T>& lv = val(logits);
    const int n = static_cast<int>(targets.size());
    require(n >= 1, errc::invalid_argument, "cross_entropy_rows: no targets");
    require(row0 >= 0 && row0 + n <= lv.rows(), errc::shape_mismatch,
            "cross_entropy_rows: row range");
    auto probs = std::make_shared<Mat<T>>(n, lv.cols());
    T loss = T(0);
    for (int i = 0; i < n; ++i) {
      const int tgt = targets[static_cast<size_t>(i)];
      require(tgt >= 0 && tgt < lv.cols(), errc::invalid_argument, "cross_entropy_rows: target id");
      const T* row = lv.row(row0 + i);
      T mx = row[0];
      for (int j = 1; j < lv.cols(); ++j) mx = std::max(mx, row[j]);
      T denom = T(0);
      T* prow = probs->row(i);
      for (int j = 0; j < lv.cols(); ++j) {
        prow[j] = std::exp(row[j] - mx);
        denom += prow[j];
      }
      const T inv = T(1) / denom;
      for (int j = 0; j < lv.cols(); ++j) prow[j] *= inv;
      loss -= std::log(prow[tgt]);
    }
    Mat<T> out(1, 1);
    out(0, 0) = loss / static_cast<T>(n);
    return make_op(std::move(out), {logits}, tag,
                   [this, logits, targets, row0, probs](const Mat<T>& g) {
        if (!wants(logits)) return;
        Mat<T>& gl = grad_buf(logits);
        const int n = static_cast<int>(targets.size());
        const T scale = g(0, 0) / static_cast<T>(n);
        for (int i = 0; i < n; ++i) {
          const T* prow = probs->row(i);
          T* grow = gl.row(row0 + i);
          for (int j = 0; j < gl.cols(); ++j) grow[j] += scale * prow[j];
          grow[targets[static_cast<size_t>(i)]] -= scale;
        }
      });
  }

  // ---- backward ----

  void backward(VarId loss) {
    Node& ln = nodes_[static_cast<size_t>(loss)];
    require(val(loss).rows() == 1 && val(loss).cols() == 1, errc::invalid_argument,
            "backward: loss must be scalar");
    ensure_grad(loss);
    ln.grad(0, 0) = T(1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.backward || !n.needs_grad || n.grad.empty()) continue;
      n.backward(n.grad);
    }
  }

 private:
  struct Node {
    Mat<T> value;
    const Mat<T>* external = nullptr;
    Mat<T> grad;
    bool needs_grad = false;
    const char* tag = "";
    std::function<void(const Mat<T>&)> backward;
  };

  bool wants(VarId id) { return nodes_[static_cast<size_t>(id)].needs_grad; }

  Mat<T>& grad_buf(VarId id) {
    ensure_grad(id);
    return nodes_[static_cast<size_t>(id)].grad;
  }

  void ensure_grad(VarId id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.empty()) {
      const Mat<T>& v = n.external ? *n.external : n.value;
      n.grad = Mat<T>::zeros(v.rows(), v.cols());
    }
  }

  VarId make_op(Mat<T> value, const std::vector<VarId>& inputs, const char* tag,
                std::function<void(const Mat<T>&)> backward) {
    Node n;
    n.value = std::move(value);
    n.tag = tag;
    bool needs = false;
    for (VarId i : inputs) needs = needs || nodes_[static_cast<size_t>(i)].needs_grad;
    n.needs_grad = needs;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return static_cast<VarId>(nodes_.size()) - 1;
  }

  static T phi_cdf(T x) { return T(0.5) * (T(1) + std::erf(x * T(0.7071067811865476))); }
  static T phi_pdf(T x) { return T(0.3989422804014327) * std::exp(T(-0.5) * x * x); }

  std::vector<Node> nodes_;
};

}  // namespace capt
