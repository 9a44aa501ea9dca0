#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "capt/graph.hpp"
#include "capt/mat.hpp"
#include "capt/rng.hpp"

namespace capt_test {

// Relative error with a floor so near-zero gradient pairs compare absolutely.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1e-6, std::abs(a) + std::abs(b));
}

struct GradCheckReport {
  double max_rel_err = 0.0;
  int checked = 0;
};

// Central finite differences against the tape gradients, on n_coords random
// parameter coordinates. BuildLoss: (Graph<double>&, leaf ids) -> loss VarId.
template <typename BuildLoss>
GradCheckReport grad_check(std::vector<capt::Mat<double>*> params, BuildLoss build_loss,
                           capt::Rng& rng, int n_coords, double h = 1e-5) {
  using Graph = capt::Graph<double>;

  auto loss_and_grads = [&](std::vector<capt::Mat<double>>* grads_out) {
    Graph g;
    std::vector<Graph::VarId> ids;
    for (auto* p : params) ids.push_back(g.leaf(*p, true));
    const Graph::VarId loss = build_loss(g, ids);
    if (grads_out) {
      g.backward(loss);
      grads_out->clear();
      for (size_t i = 0; i < params.size(); ++i) {
        const capt::Mat<double>& grad = g.grad(ids[i]);
        grads_out->push_back(grad.empty() ? capt::Mat<double>::zeros(params[i]->rows(),
                                                                     params[i]->cols())
                                          : grad);
      }
    }
    return g.val(loss)(0, 0);
  };

  std::vector<capt::Mat<double>> analytic;
  loss_and_grads(&analytic);

  GradCheckReport report;
  for (int c = 0; c < n_coords; ++c) {
    const int pi = rng.uniform_int(0, static_cast<int>(params.size()) - 1);
    capt::Mat<double>& p = *params[static_cast<size_t>(pi)];
    const int elem = rng.uniform_int(0, static_cast<int>(p.size()) - 1);
    const double orig = p.data()[elem];
    const double step = h * std::max(1.0, std::abs(orig));
    p.data()[elem] = orig + step;
    const double up = loss_and_grads(nullptr);
    p.data()[elem] = orig - step;
    const double down = loss_and_grads(nullptr);
    p.data()[elem] = orig;
    const double fd = (up - down) / (2.0 * step);
    const double an = analytic[static_cast<size_t>(pi)].data()[elem];
    report.max_rel_err = std::max(report.max_rel_err, rel_err(an, fd));
    ++report.checked;
  }
  return report;
}

inline capt::Mat<double> random_mat(int rows, int cols, capt::Rng& rng, double scale = 1.0) {
  capt::Mat<double> m(rows, cols);
  capt::fill_normal(m, rng, 0.0, scale);
  return m;
}

}  // namespace capt_test
