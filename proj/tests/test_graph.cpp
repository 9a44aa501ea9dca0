#include <cmath>
#include <vector>

#include "doctest.h"

#include "capt/graph.hpp"
#include "capt/mat.hpp"
#include "capt/nn.hpp"
#include "capt/rng.hpp"
#include "test_util.hpp"

using namespace capt;
using capt_test::grad_check;
using capt_test::random_mat;

namespace {

// Naive O(mnk) reference for the gemm kernels.
template <typename T>
Mat<T> naive_matmul(const Mat<T>& a, const Mat<T>& b, bool trans_a, bool trans_b) {
  const int m = trans_a ? a.cols() : a.rows();
  const int k = trans_a ? a.rows() : a.cols();
  const int n = trans_b ? b.rows() : b.cols();
  Mat<T> c(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      T s = 0;
      for (int l = 0; l < k; ++l) {
        const T av = trans_a ? a(l, i) : a(i, l);
        const T bv = trans_b ? b(j, l) : b(l, j);
        s += av * bv;
      }
      c(i, j) = s;
    }
  return c;
}

// Scalarize an op output deterministically: sum(out .* probe).
Graph<double>::VarId scalarize(Graph<double>& g, Graph<double>::VarId out, Rng& rng) {
  const Mat<double>& v = g.val(out);
  Mat<double> probe(v.rows(), v.cols());
  fill_normal(probe, rng, 0.0, 1.0);
  return g.sum(g.mul_elem(out, g.constant(std::move(probe))));
}

}  // namespace

TEST_CASE("gemm kernels match the naive reference") {
  Rng rng(101);
  for (int trial = 0; trial < 10; ++trial) {
    const int m = rng.uniform_int(1, 17);
    const int k = rng.uniform_int(1, 23);
    const int n = rng.uniform_int(1, 19);
    const Mat<double> a = random_mat(m, k, rng);
    const Mat<double> b = random_mat(k, n, rng);
    const Mat<double> bt = random_mat(n, k, rng);
    const Mat<double> at = random_mat(k, m, rng);

    const Mat<double> nn = matmul_nn(a, b);
    const Mat<double> ref_nn = naive_matmul(a, b, false, false);
    const Mat<double> nt = matmul_nt(a, bt);
    const Mat<double> ref_nt = naive_matmul(a, bt, false, true);
    const Mat<double> tn = matmul_tn(at, b);
    const Mat<double> ref_tn = naive_matmul(at, b, true, false);
    for (size_t i = 0; i < nn.size(); ++i) CHECK(nn.data()[i] == doctest::Approx(ref_nn.data()[i]));
    for (size_t i = 0; i < nt.size(); ++i) CHECK(nt.data()[i] == doctest::Approx(ref_nt.data()[i]));
    for (size_t i = 0; i < tn.size(); ++i) CHECK(tn.data()[i] == doctest::Approx(ref_tn.data()[i]));
  }
}

TEST_CASE("per-op gradients match central finite differences") {
  Rng rng(202);

  SUBCASE("matmul") {
    Mat<double> a = random_mat(4, 5, rng), b = random_mat(5, 3, rng);
    auto report = grad_check({&a, &b},
                             [&](Graph<double>& g, const std::vector<int>& ids) {
                               Rng probe(1);
                               return scalarize(g, g.matmul(ids[0], ids[1]), probe);
                             },
                             rng, 20);
    CHECK(report.max_rel_err < 1e-6);
  }

  SUBCASE("matmul_transposed") {
    Mat<double> a = random_mat(4, 5, rng), b = random_mat(6, 5, rng);
    auto report = grad_check({&a, &b},
                             [&](Graph<double>& g, const std::vector<int>& ids) {
                               Rng probe(2);
                               return scalarize(g, g.matmul_transposed(ids[0], ids[1]), probe);
                             },
                             rng, 20);
    CHECK(report.max_rel_err < 1e-6);
  }

  SUBCASE("linear with bias") {
    Mat<double> x = random_mat(4, 5, rng), w = random_mat(5, 3, rng), b = random_mat(1, 3, rng);
    auto report = grad_check({&x, &w, &b},
                             [&](Graph<double>& g, const std::vector<int>& ids) {
                               Rng probe(3);
                               return scalarize(g, g.linear(ids[0], ids[1], ids[2]), probe);
                             },
                             rng, 20);
    CHECK(report.max_rel_err < 1e-6);
  }

  SUBCASE("layer_norm") {
    Mat<double> x = random_mat(5, 8, rng), gamma = random_mat(1, 8, rng, 0.5),
                beta = random_mat(1, 8, rng, 0.5);
    for (size_t i = 0; i < gamma.size(); ++i) gamma.data()[i] += 1.0;
    auto report = grad_check({&x, &gamma, &beta},
                             [&](Graph<double>& g, const std::vector<int>& ids) {
                               Rng probe(4);
                               return scalarize(g, g.layer_norm(ids[0], ids[1], ids[2]), probe);
                             },
                             rng, 30);
    CHECK(report.max_rel_err < 1e-5);
  }

  SUBCASE("gelu") {
    Mat<double> x = random_mat(6, 7, rng);
    auto report = grad_check({&x},
                             [&](Graph<double>& g, const std::vector<int>& ids) {
                               Rng probe(5);
                               return scalarize(g, g.gelu(ids[0]), probe);
                             },
                             rng, 20);
    CHECK(report.max_rel_err < 1e-6);
  }

  SUBCASE("softmax_rows full and causal") {
    for (const bool causal : {false, true}) {
      Mat<double> x = random_mat(6, 6, rng);
      auto report = grad_check({&x},
                               [&](Graph<double>& g, const std::vector<int>& ids) {
                                 Rng probe(6);
                                 return scalarize(g, g.softmax_rows(ids[0], causal), probe);
                               },
                               rng, 20);
      CHECK(report.max_rel_err < 1e-5);
    }
  }

  SUBCASE("conv1d") {
    Mat<double> x = random_mat(14, 3, rng);
    Mat<double> w = random_mat(4 * 3, 5, rng);
    Mat<double> b = random_mat(1, 5, rng);
    auto report = grad_check({&x, &w, &b},
                             [&](Graph<double>& g, const std::vector<int>& ids) {
                               Rng probe(7);
                               return scalarize(g, g.conv1d(ids[0], ids[1], ids[2], 4, 2), probe);
                             },
                             rng, 30);
    CHECK(report.max_rel_err < 1e-6);
  }

  SUBCASE("embedding + cross_entropy_rows") {
    Mat<double> table = random_mat(9, 6, rng);
    Mat<double> head = random_mat(6, 9, rng);
    const std::vector<int> ids_in = {0, 3, 8, 3, 1};
    const std::vector<int> targets = {3, 8, 3};
    auto report = grad_check({&table, &head},
                             [&](Graph<double>& g, const std::vector<int>& ids) {
                               auto x = g.embedding(ids[0], ids_in);
                               auto logits = g.matmul(x, ids[1]);
                               return g.cross_entropy_rows(logits, targets, 1);
                             },
                             rng, 25);
    CHECK(report.max_rel_err < 1e-6);
  }

  SUBCASE("slices and concats") {
    Mat<double> a = random_mat(6, 8, rng), b = random_mat(3, 8, rng);
    auto report = grad_check({&a, &b},
                             [&](Graph<double>& g, const std::vector<int>& ids) {
                               Rng probe(8);
                               auto rows = g.concat_rows({g.slice_rows(ids[0], 1, 4), ids[1]});
                               auto cols = g.concat_cols(
                                   {g.slice_cols(rows, 0, 3), g.slice_cols(rows, 3, 5)});
                               return scalarize(g, cols, probe);
                             },
                             rng, 20);
    CHECK(report.max_rel_err < 1e-6);
  }

  SUBCASE("multi-head attention composite") {
    const int dim = 8, T = 5;
    ParamSet<double> ps;
    Rng init(11);
    const AttnHandles attn = make_attention(ps, ParamGroup::encoder, "t.attn", dim, init);
    Mat<double> x = random_mat(T, dim, rng);
    std::vector<Mat<double>*> params = {&x};
    for (int i = 0; i < ps.count(); ++i) params.push_back(&ps.value(i));
    auto report = grad_check(params,
                             [&](Graph<double>& g, const std::vector<int>& ids) {
                               BoundParams<double> bp;
                               bp.ids.assign(ids.begin() + 1, ids.end());
                               Rng probe(9);
                               auto out = multi_head_attention(g, ids[0], ids[0], bp, attn, 2,
                                                               true);
                               return scalarize(g, out, probe);
                             },
                             rng, 40);
    CHECK(report.max_rel_err < 1e-4);
  }
}

TEST_CASE("cross entropy equals a manual log-softmax oracle") {
  Rng rng(303);
  Mat<double> logits_mat = random_mat(5, 7, rng);
  Graph<double> g;
  const auto logits = g.leaf(logits_mat, false);
  const std::vector<int> targets = {2, 6, 0};
  const auto loss = g.cross_entropy_rows(logits, targets, 1);

  double manual = 0.0;
  for (size_t i = 0; i < targets.size(); ++i) {
    const int row = 1 + static_cast<int>(i);
    double mx = logits_mat(row, 0);
    for (int j = 1; j < 7; ++j) mx = std::max(mx, logits_mat(row, j));
    double denom = 0.0;
    for (int j = 0; j < 7; ++j) denom += std::exp(logits_mat(row, j) - mx);
    manual -= logits_mat(row, targets[i]) - mx - std::log(denom);
  }
  manual /= static_cast<double>(targets.size());
  CHECK(g.val(loss)(0, 0) == doctest::Approx(manual).epsilon(1e-12));
}

TEST_CASE("conv1d with unit-impulse kernel copies strided input") {
  // Single layer, one channel: kernel picks the first sample of each window,
  // so a ramp input comes out as strided copies of itself.
  const int n = 23, kernel = 4, stride = 3;
  Mat<double> x(n, 1);
  for (int i = 0; i < n; ++i) x(i, 0) = i;
  Mat<double> w(kernel, 1);
  w.fill(0.0);
  w(0, 0) = 1.0;
  Graph<double> g;
  const auto out = g.conv1d(g.leaf(x, false), g.leaf(w, false), -1, kernel, stride);
  const Mat<double>& v = g.val(out);
  const int t_out = (n - kernel) / stride + 1;
  REQUIRE(v.rows() == t_out);
  REQUIRE(v.cols() == 1);
  // direct convolution oracle
  for (int t = 0; t < t_out; ++t) {
    double acc = 0.0;
    for (int k = 0; k < kernel; ++k) acc += w(k, 0) * x(t * stride + k, 0);
    CHECK(v(t, 0) == doctest::Approx(acc));
    CHECK(v(t, 0) == doctest::Approx(static_cast<double>(t * stride)));
  }
}

TEST_CASE("softmax rows sum to one over the allowed span") {
  Rng rng(404);
  Mat<double> x = random_mat(7, 7, rng, 3.0);
  Graph<double> g;
  const auto full = g.softmax_rows(g.leaf(x, false), false);
  const auto causal = g.softmax_rows(g.leaf(x, false), true);
  for (int i = 0; i < 7; ++i) {
    double s_full = 0.0, s_causal = 0.0;
    for (int j = 0; j < 7; ++j) {
      s_full += g.val(full)(i, j);
      s_causal += g.val(causal)(i, j);
      if (j > i) CHECK(g.val(causal)(i, j) == 0.0);
    }
    CHECK(s_full == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s_causal == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("graph leaves without needs_grad receive no gradient") {
  Rng rng(505);
  Mat<double> a = random_mat(3, 3, rng), b = random_mat(3, 3, rng);
  Graph<double> g;
  const auto av = g.leaf(a, true);
  const auto bv = g.leaf(b, false);
  const auto loss = g.sum(g.matmul(av, bv));
  g.backward(loss);
  CHECK(!g.grad(av).empty());
  CHECK(g.grad(bv).empty());
}
