#include "xpl/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace xpl::ad {

namespace {

double evaluate(const GraphFn& f, std::span<const Tensor> params) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(params.size());
  for (const auto& p : params) leaves.push_back(g.leaf(p));
  return f(g, leaves).value().item();
}

}  // namespace

GradCheckResult finite_diff_check(const GraphFn& f, std::span<const Tensor> params, double h) {
  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<Var> leaves;
    for (const auto& p : params) leaves.push_back(g.leaf(p));
    Var root = f(g, leaves);
    auto grads = backward(g, root);
    for (Var leaf : leaves) analytic.push_back(grads.of_or_zero(leaf));
  }

  GradCheckResult result;
  std::vector<Tensor> probe(params.begin(), params.end());
  for (std::size_t t = 0; t < probe.size(); ++t) {
    for (std::size_t i = 0; i < probe[t].size(); ++i) {
      const double orig = probe[t][i];
      probe[t][i] = orig + h;
      const double up = evaluate(f, probe);
      probe[t][i] = orig - h;
      const double down = evaluate(f, probe);
      probe[t][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[t][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      if (err > result.max_rel_error) {
        result = {err, t, i, a, numeric};
      }
    }
  }
  return result;
}

double finite_diff_check(const std::function<Var(Graph&, Var)>& f, const Tensor& theta, double h) {
  GraphFn wrapped = [&f](Graph& g, std::span<const Var> leaves) { return f(g, leaves[0]); };
  return finite_diff_check(wrapped, std::span<const Tensor>(&theta, 1), h).max_rel_error;
}

}  // namespace xpl::ad
