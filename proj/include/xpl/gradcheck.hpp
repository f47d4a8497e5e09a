#pragma once

#include <functional>
#include <span>
#include <vector>

#include "xpl/autodiff.hpp"

namespace xpl::ad {

/// Builds a scalar-valued graph from a set of parameter leaves.
using GraphFn = std::function<Var(Graph&, std::span<const Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares backward() against central differences at step h, coordinate by
/// coordinate. Error per coordinate is |analytic - numeric| / max(1, |analytic|).
GradCheckResult finite_diff_check(const GraphFn& f, std::span<const Tensor> params, double h = 1e-5);

/// Single-tensor form.
double finite_diff_check(const std::function<Var(Graph&, Var)>& f, const Tensor& theta, double h = 1e-5);

}  // namespace xpl::ad
