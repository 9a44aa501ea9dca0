#include <vector>

#include "doctest.h"

#include "capt/adapter.hpp"
#include "test_util.hpp"

using namespace capt;
using capt_test::grad_check;
using capt_test::random_mat;

namespace {

template <typename T>
FeatureSequence<T> features_of(Mat<T> values) {
  FeatureSequence<T> fs;
  fs.values = std::move(values);
  fs.frame_stride_samples = 20;
  fs.sample_rate = 2000;
  return fs;
}

}  // namespace

TEST_CASE("pooled length law") {
  AdapterConfig cfg;
  CHECK(cfg.pooled_length(10) == 5);
  CHECK(cfg.pooled_length(5) == 2);
  for (int t = 2; t <= 512; ++t) CHECK(cfg.pooled_length(t) == t / 2);
  CHECK_THROWS_AS(cfg.pooled_length(1), Error);
}

TEST_CASE("averaging pool weights average adjacent rows") {
  AdapterConfig cfg;
  cfg.in_dim = 4;
  cfg.out_dim = 6;
  cfg.n_heads = 2;
  ParamSet<double> ps;
  auto handles = make_adapter_params(ps, cfg, 3);
  // kernel-position weights (0.5, 0.5) on the diagonal: out = (x_2t + x_2t+1)/2
  Mat<double>& pool_w = ps.value(handles.pool_w);
  pool_w.fill(0.0);
  for (int d = 0; d < cfg.in_dim; ++d) {
    pool_w(0 * cfg.in_dim + d, d) = 0.5;
    pool_w(1 * cfg.in_dim + d, d) = 0.5;
  }
  Rng rng(17);
  const Mat<double> x = random_mat(4, 4, rng);
  const FeatureSequence<double> pooled = shared_pool(features_of(x), cfg, ps, handles);
  REQUIRE(pooled.values.rows() == 2);
  for (int t = 0; t < 2; ++t)
    for (int d = 0; d < 4; ++d) {
      // direct strided-convolution oracle
      const double expect = 0.5 * (x(2 * t, d) + x(2 * t + 1, d));
      CHECK(pooled.values(t, d) == doctest::Approx(expect).epsilon(1e-12));
    }
  CHECK(pooled.frame_stride_samples == 40);
}

TEST_CASE("adapt shape arithmetic") {
  AdapterConfig cfg;  // in 64, out 128
  ParamSet<float> ps;
  const auto handles = make_adapter_params(ps, cfg, 4);
  Rng rng(5);
  Mat<float> x(99, 64);
  fill_normal(x, rng, 0.0, 1.0);
  const FeatureSequence<float> out = adapt(features_of(x), cfg, ps, handles);
  CHECK(out.values.rows() == 49);
  CHECK(out.values.cols() == 128);
  CHECK(out.values.all_finite());

  Mat<float> tiny(2, 64);
  fill_normal(tiny, rng, 0.0, 1.0);
  const FeatureSequence<float> minimal = adapt(features_of(tiny), cfg, ps, handles);
  CHECK(minimal.values.rows() == 1);
  CHECK(minimal.values.cols() == 128);

  Mat<float> too_short(1, 64);
  CHECK_THROWS_AS(adapt(features_of(too_short), cfg, ps, handles), Error);
}

TEST_CASE("MSA softmax rows sum to one and pooling runs exactly once") {
  AdapterConfig cfg;
  cfg.in_dim = 8;
  cfg.out_dim = 12;
  cfg.n_heads = 2;
  ParamSet<double> ps;
  const auto handles = make_adapter_params(ps, cfg, 6);
  Rng rng(8);
  Mat<double> x = random_mat(10, 8, rng);

  Graph<double> g;
  const auto bound = bind_params(g, ps, {false, false, false});
  const auto in = g.leaf(x, false);
  adapter_forward(g, in, bound, handles, cfg);

  CHECK(g.count_tagged("adapter.pool") == 1);
  const auto softmaxes = g.find_tagged("adapter.msa.softmax");
  CHECK(static_cast<int>(softmaxes.size()) == cfg.n_heads);
  for (const auto id : softmaxes) {
    const Mat<double>& p = g.val(id);
    for (int i = 0; i < p.rows(); ++i) {
      double s = 0.0;
      for (int j = 0; j < p.cols(); ++j) s += p(i, j);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("adapter gradients match finite differences") {
  AdapterConfig cfg;
  cfg.in_dim = 8;
  cfg.out_dim = 10;
  cfg.n_heads = 2;
  ParamSet<double> ps;
  const auto handles = make_adapter_params(ps, cfg, 12);
  Rng rng(31);
  Mat<double> x = random_mat(9, 8, rng);

  std::vector<Mat<double>*> params = {&x};
  for (int i = 0; i < ps.count(); ++i) params.push_back(&ps.value(i));

  auto report = grad_check(params,
                           [&](Graph<double>& g, const std::vector<int>& ids) {
                             BoundParams<double> bp;
                             bp.ids.assign(ids.begin() + 1, ids.end());
                             const auto out = adapter_forward(g, ids[0], bp, handles, cfg);
                             Rng probe(9);
                             Mat<double> weights(g.val(out).rows(), g.val(out).cols());
                             fill_normal(weights, probe, 0.0, 1.0);
                             return g.sum(g.mul_elem(out, g.constant(std::move(weights))));
                           },
                           rng, 25);
  CHECK(report.checked >= 20);
  CHECK(report.max_rel_err < 1e-4);
}
