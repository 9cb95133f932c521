#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "graph.hpp"

namespace rx {

using ScalarFn = std::function<Var<double>(Graph<double>&, Var<double>)>;

struct GradCheckResult {
  double max_rel_error = 0;
  std::int64_t checked = 0;
  // Coordinates whose +-h probes changed a relu mask or maxpool winner; the
  // function is not differentiable across those probes.
  std::int64_t skipped_kinks = 0;
};

// Compares backward() against central differences, coordinate by
// coordinate: |analytic - numeric| / max(1e-8, |numeric|).
inline GradCheckResult finite_difference_check(const ScalarFn& f, const Tensor<double>& x, double h = 1e-3,
                                               bool skip_kinks = true) {
  Graph<double> g;
  Var<double> xv = g.input(x, true);
  Var<double> y = f(g, xv);
  const auto grads = g.backward(y);
  const Tensor<double> analytic = grads.has(xv) ? grads.at(xv) : Tensor<double>::zeros_like(x);
  const std::uint64_t pattern = g.branch_pattern();

  auto probe = [&](const Tensor<double>& p, std::uint64_t& pat) {
    Graph<double> pg(false);
    const double v = f(pg, pg.input(p, false)).value()[0];
    pat = pg.branch_pattern();
    return v;
  };

  GradCheckResult r;
  Tensor<double> p = x;
  for (std::int64_t i = 0; i < x.size(); ++i) {
    std::uint64_t pp = 0, pm = 0;
    p[i] = x[i] + h;
    const double fp = probe(p, pp);
    p[i] = x[i] - h;
    const double fm = probe(p, pm);
    p[i] = x[i];
    if (skip_kinks && (pp != pattern || pm != pattern)) {
      ++r.skipped_kinks;
      continue;
    }
    const double numeric = (fp - fm) / (2 * h);
    const double rel = std::abs(analytic[i] - numeric) / std::max(1e-8, std::abs(numeric));
    r.max_rel_error = std::max(r.max_rel_error, rel);
    ++r.checked;
  }
  return r;
}

}  // namespace rx
