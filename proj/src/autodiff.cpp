#include "xpl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace xpl::ad {

namespace {

const Node& node_of(Var v) { return v.graph().node(v.id()); }

void same_graph(Var a, Var b) {
  if (&a.graph() != &b.graph()) throw std::invalid_argument("autodiff: operands from different graphs");
}

void same_shape(Var a, Var b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

void require_rank(Var a, std::size_t rank, const char* op) {
  if (a.value().rank() != rank) {
    throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                ", got " + shape_str(a.shape()));
  }
}

Var emit(Op op, std::initializer_list<Var> inputs, Tensor value, Node extra = {}) {
  Graph& g = inputs.begin()->graph();
  extra.op = op;
  extra.value = std::move(value);
  extra.inputs.clear();
  extra.requires_grad = false;
  for (Var in : inputs) {
    same_graph(*inputs.begin(), in);
    extra.inputs.push_back(in.id());
    extra.requires_grad = extra.requires_grad || node_of(in).requires_grad;
  }
  return g.record(std::move(extra));
}

template <class F>
Tensor map_values(const Tensor& x, F f) {
  std::vector<double> out(x.size());
  auto in = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return Tensor(x.shape(), std::move(out));
}

template <class F>
Tensor zip_values(const Tensor& a, const Tensor& b, F f) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
  return Tensor(a.shape(), std::move(out));
}

// m x k times k x n, optionally with either operand transposed.
std::vector<double> gemm(std::span<const double> a, std::span<const double> b, std::size_t m,
                         std::size_t k, std::size_t n, bool ta, bool tb) {
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstMap = Eigen::Map<const RowMat>;
  std::vector<double> c(m * n);
  Eigen::Map<RowMat> cm(c.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  const auto em = static_cast<Eigen::Index>(m), ek = static_cast<Eigen::Index>(k), en = static_cast<Eigen::Index>(n);
  if (ta && tb) {
    cm.noalias() = ConstMap(a.data(), ek, em).transpose() * ConstMap(b.data(), en, ek).transpose();
  } else if (ta) {
    cm.noalias() = ConstMap(a.data(), ek, em).transpose() * ConstMap(b.data(), ek, en);
  } else if (tb) {
    cm.noalias() = ConstMap(a.data(), em, ek) * ConstMap(b.data(), en, ek).transpose();
  } else {
    cm.noalias() = ConstMap(a.data(), em, ek) * ConstMap(b.data(), ek, en);
  }
  return c;
}

double norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double clamp_unit(double c) { return std::clamp(c, -1.0, 1.0); }

void accumulate(std::optional<Tensor>& slot, Tensor g) {
  if (!slot) {
    slot = std::move(g);
    return;
  }
  auto dst = slot->mutable_values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Leaf: return "leaf";
    case Op::Constant: return "constant";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::ScalarMul: return "scalar_mul";
    case Op::AddScalar: return "add_scalar";
    case Op::MatMul: return "matmul";
    case Op::AddBias: return "add_bias";
    case Op::Relu: return "relu";
    case Op::Sigmoid: return "sigmoid";
    case Op::Log: return "log";
    case Op::Exp: return "exp";
    case Op::Clamp: return "clamp";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::CosineSim: return "cosine_sim";
    case Op::CosineRows: return "cosine_rows";
    case Op::ReduceMax: return "reduce_max";
    case Op::LogSumExp: return "log_sum_exp";
    case Op::Row: return "row";
    case Op::Element: return "element";
    case Op::StackRows: return "stack_rows";
    case Op::Transpose: return "transpose";
  }
  return "?";
}

const Tensor& Var::value() const { return graph_->node(id_).value; }

Var Graph::leaf(Tensor value) {
  Node n;
  n.op = Op::Leaf;
  n.value = std::move(value);
  n.requires_grad = true;
  return record(std::move(n));
}

Var Graph::constant(Tensor value) {
  Node n;
  n.op = Op::Constant;
  n.value = std::move(value);
  n.requires_grad = false;
  return record(std::move(n));
}

Var Graph::record(Node node) {
  for (auto in : node.inputs) {
    if (in >= nodes_.size()) throw std::logic_error("autodiff: input id not yet recorded");
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Gradients::of(Var v) const {
  if (!has(v)) throw std::out_of_range("autodiff: no gradient for node " + std::to_string(v.id()));
  return *grads_[v.id()];
}

Tensor Gradients::of_or_zero(Var v) const {
  return has(v) ? *grads_[v.id()] : Tensor::zeros(v.shape());
}

// ---------------------------------------------------------------------------
// forward ops

Var add(Var a, Var b) {
  same_shape(a, b, "add");
  return emit(Op::Add, {a, b}, zip_values(a.value(), b.value(), [](double x, double y) { return x + y; }));
}

Var sub(Var a, Var b) {
  same_shape(a, b, "sub");
  return emit(Op::Sub, {a, b}, zip_values(a.value(), b.value(), [](double x, double y) { return x - y; }));
}

Var mul(Var a, Var b) {
  same_shape(a, b, "mul");
  return emit(Op::Mul, {a, b}, zip_values(a.value(), b.value(), [](double x, double y) { return x * y; }));
}

Var scale(Var a, double s) {
  Node extra;
  extra.lo = s;
  return emit(Op::ScalarMul, {a}, map_values(a.value(), [s](double x) { return s * x; }), std::move(extra));
}

Var add_scalar(Var a, double s) {
  Node extra;
  extra.lo = s;
  return emit(Op::AddScalar, {a}, map_values(a.value(), [s](double x) { return x + s; }), std::move(extra));
}

Var matmul(Var a, Var b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const auto m = a.value().dim(0), k = a.value().dim(1), n = b.value().dim(1);
  if (b.value().dim(0) != k) {
    throw std::invalid_argument("matmul: inner dims " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  auto c = gemm(a.value().values(), b.value().values(), m, k, n, false, false);
  return emit(Op::MatMul, {a, b}, Tensor({m, n}, std::move(c)));
}

Var add_bias(Var x, Var b) {
  require_rank(x, 2, "add_bias");
  require_rank(b, 1, "add_bias");
  const auto m = x.value().dim(0), n = x.value().dim(1);
  if (b.value().dim(0) != n) throw std::invalid_argument("add_bias: bias length mismatch");
  std::vector<double> out(x.value().data());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += b.value()[j];
  return emit(Op::AddBias, {x, b}, Tensor(x.shape(), std::move(out)));
}

Var relu(Var x) {
  return emit(Op::Relu, {x}, map_values(x.value(), [](double v) { return v > 0.0 ? v : 0.0; }));
}

Var sigmoid(Var x) {
  return emit(Op::Sigmoid, {x}, map_values(x.value(), [](double v) {
                return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
              }));
}

Var log(Var x) {
  for (double v : x.value().values()) {
    if (!(v > 0.0)) throw std::domain_error("log: non-positive input");
  }
  return emit(Op::Log, {x}, map_values(x.value(), [](double v) { return std::log(v); }));
}

Var exp(Var x) {
  return emit(Op::Exp, {x}, map_values(x.value(), [](double v) { return std::exp(v); }));
}

Var clamp(Var x, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
  Node extra;
  extra.lo = lo;
  extra.hi = hi;
  return emit(Op::Clamp, {x}, map_values(x.value(), [lo, hi](double v) { return std::clamp(v, lo, hi); }),
              std::move(extra));
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return emit(Op::Sum, {x}, Tensor::scalar(s));
}

Var mean(Var x) {
  double s = 0.0;
  for (double v : x.value().values()) s += v;
  return emit(Op::Mean, {x}, Tensor::scalar(s / static_cast<double>(x.value().size())));
}

Var cosine_sim(Var u, Var v) {
  require_rank(u, 1, "cosine_sim");
  same_shape(u, v, "cosine_sim");
  const double nu = norm(u.value().values()), nv = norm(v.value().values());
  if (nu == 0.0 || nv == 0.0) throw std::domain_error("cosine_sim: zero-norm embedding");
  const double c = clamp_unit(dot(u.value().values(), v.value().values()) / (nu * nv));
  return emit(Op::CosineSim, {u, v}, Tensor::scalar(c));
}

Var cosine_rows(Var x, Var u) {
  require_rank(x, 2, "cosine_rows");
  require_rank(u, 1, "cosine_rows");
  const auto m = x.value().dim(0), d = x.value().dim(1);
  if (u.value().dim(0) != d) throw std::invalid_argument("cosine_rows: embedding width mismatch");
  const double nu = norm(u.value().values());
  if (nu == 0.0) throw std::domain_error("cosine_rows: zero-norm reference embedding");
  std::vector<double> out(m);
  auto xs = x.value().values();
  for (std::size_t r = 0; r < m; ++r) {
    auto xr = xs.subspan(r * d, d);
    const double nx = norm(xr);
    if (nx == 0.0) throw std::domain_error("cosine_rows: zero-norm embedding at row " + std::to_string(r));
    out[r] = clamp_unit(dot(xr, u.value().values()) / (nx * nu));
  }
  return emit(Op::CosineRows, {x, u}, Tensor::vector(std::move(out)));
}

Var reduce_max(Var x, Axis axis) {
  const Tensor& t = x.value();
  Node extra;
  extra.axis = axis;
  if (axis == Axis::All) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < t.size(); ++i)
      if (t[i] > t[best]) best = i;
    extra.argmax = {best};
    return emit(Op::ReduceMax, {x}, Tensor::scalar(t[best]), std::move(extra));
  }
  require_rank(x, 2, "reduce_max");
  const auto m = t.dim(0), n = t.dim(1);
  const bool over_rows = axis == Axis::Rows;
  const auto outer = over_rows ? n : m;
  const auto inner = over_rows ? m : n;
  std::vector<double> out(outer);
  extra.argmax.resize(outer);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t best = over_rows ? o : o * n;
    for (std::size_t i = 1; i < inner; ++i) {
      const std::size_t idx = over_rows ? i * n + o : o * n + i;
      if (t[idx] > t[best]) best = idx;
    }
    extra.argmax[o] = best;
    out[o] = t[best];
  }
  return emit(Op::ReduceMax, {x}, Tensor::vector(std::move(out)), std::move(extra));
}

Var log_sum_exp(Var x) {
  const Tensor& t = x.value();
  const double mx = *std::max_element(t.values().begin(), t.values().end());
  double s = 0.0;
  for (double v : t.values()) s += std::exp(v - mx);
  return emit(Op::LogSumExp, {x}, Tensor::scalar(mx + std::log(s)));
}

Var row(Var x, std::size_t r) {
  require_rank(x, 2, "row");
  const auto m = x.value().dim(0), n = x.value().dim(1);
  if (r >= m) throw std::out_of_range("row: index out of range");
  auto vals = x.value().values().subspan(r * n, n);
  Node extra;
  extra.index = r;
  return emit(Op::Row, {x}, Tensor::vector({vals.begin(), vals.end()}), std::move(extra));
}

Var element(Var x, std::size_t flat_index) {
  if (flat_index >= x.value().size()) throw std::out_of_range("element: index out of range");
  Node extra;
  extra.index = flat_index;
  return emit(Op::Element, {x}, Tensor::scalar(x.value()[flat_index]), std::move(extra));
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no rows");
  Graph& g = rows.front().graph();
  const auto n = rows.front().value().size();
  Node node;
  node.op = Op::StackRows;
  std::vector<double> out;
  out.reserve(rows.size() * n);
  for (Var r : rows) {
    same_graph(rows.front(), r);
    require_rank(r, 1, "stack_rows");
    if (r.value().size() != n) throw std::invalid_argument("stack_rows: ragged rows");
    out.insert(out.end(), r.value().values().begin(), r.value().values().end());
    node.inputs.push_back(r.id());
    node.requires_grad = node.requires_grad || node_of(r).requires_grad;
  }
  node.value = Tensor({rows.size(), n}, std::move(out));
  return g.record(std::move(node));
}

Var transpose(Var x) {
  require_rank(x, 2, "transpose");
  const auto m = x.value().dim(0), n = x.value().dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.value()[i * n + j];
  return emit(Op::Transpose, {x}, Tensor({n, m}, std::move(out)));
}

// ---------------------------------------------------------------------------
// backward

namespace {

// Cosine gradient of c = <x,u>/(|x||u|) with respect to x, scaled by g.
void cosine_grad_into(std::span<const double> x, std::span<const double> u, double nx, double nu, double c,
                      double g, std::span<double> out) {
  const double inv = 1.0 / (nx * nu);
  const double cx = c / (nx * nx);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] += g * (u[i] * inv - cx * x[i]);
}

std::vector<Tensor> input_grads(const Graph& graph, const Node& n, const Tensor& g) {
  auto in = [&](std::size_t k) -> const Tensor& { return graph.node(n.inputs[k]).value; };
  switch (n.op) {
    case Op::Leaf:
    case Op::Constant:
      return {};
    case Op::Add:
      return {g, g};
    case Op::Sub:
      return {g, map_values(g, [](double v) { return -v; })};
    case Op::Mul:
      return {zip_values(g, in(1), [](double a, double b) { return a * b; }),
              zip_values(g, in(0), [](double a, double b) { return a * b; })};
    case Op::ScalarMul: {
      const double s = n.lo;
      return {map_values(g, [s](double v) { return s * v; })};
    }
    case Op::AddScalar:
      return {g};
    case Op::MatMul: {
      const auto m = in(0).dim(0), k = in(0).dim(1), nn = in(1).dim(1);
      // dA = g * B^T, dB = A^T * g
      auto da = gemm(g.values(), in(1).values(), m, nn, k, false, true);
      auto db = gemm(in(0).values(), g.values(), k, m, nn, true, false);
      return {Tensor({m, k}, std::move(da)), Tensor({k, nn}, std::move(db))};
    }
    case Op::AddBias: {
      const auto m = g.dim(0), cols = g.dim(1);
      std::vector<double> db(cols, 0.0);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < cols; ++j) db[j] += g[i * cols + j];
      return {g, Tensor::vector(std::move(db))};
    }
    case Op::Relu:
      return {zip_values(g, in(0), [](double gv, double x) { return x > 0.0 ? gv : 0.0; })};
    case Op::Sigmoid:
      return {zip_values(g, n.value, [](double gv, double y) { return gv * y * (1.0 - y); })};
    case Op::Log:
      return {zip_values(g, in(0), [](double gv, double x) { return gv / x; })};
    case Op::Exp:
      return {zip_values(g, n.value, [](double gv, double y) { return gv * y; })};
    case Op::Clamp: {
      const double lo = n.lo, hi = n.hi;
      return {zip_values(g, in(0), [lo, hi](double gv, double x) { return (x >= lo && x <= hi) ? gv : 0.0; })};
    }
    case Op::Sum:
      return {Tensor::filled(in(0).shape(), g.item())};
    case Op::Mean:
      return {Tensor::filled(in(0).shape(), g.item() / static_cast<double>(in(0).size()))};
    case Op::CosineSim: {
      const auto u = in(0).values(), v = in(1).values();
      const double nu = norm(u), nv = norm(v), c = n.value.item();
      Tensor du = Tensor::zeros(in(0).shape()), dv = Tensor::zeros(in(1).shape());
      cosine_grad_into(u, v, nu, nv, c, g.item(), du.mutable_values());
      cosine_grad_into(v, u, nv, nu, c, g.item(), dv.mutable_values());
      return {std::move(du), std::move(dv)};
    }
    case Op::CosineRows: {
      const auto m = in(0).dim(0), d = in(0).dim(1);
      const auto xs = in(0).values(), u = in(1).values();
      const double nu = norm(u);
      Tensor dx = Tensor::zeros(in(0).shape()), du = Tensor::zeros(in(1).shape());
      auto dxs = dx.mutable_values();
      for (std::size_t r = 0; r < m; ++r) {
        if (g[r] == 0.0) continue;
        auto xr = xs.subspan(r * d, d);
        const double nx = norm(xr), c = n.value[r];
        cosine_grad_into(xr, u, nx, nu, c, g[r], dxs.subspan(r * d, d));
        cosine_grad_into(u, xr, nu, nx, c, g[r], du.mutable_values());
      }
      return {std::move(dx), std::move(du)};
    }
    case Op::ReduceMax: {
      Tensor dx = Tensor::zeros(in(0).shape());
      for (std::size_t o = 0; o < n.argmax.size(); ++o) dx[n.argmax[o]] += g[o];
      return {std::move(dx)};
    }
    case Op::LogSumExp: {
      const double lse = n.value.item(), gv = g.item();
      return {map_values(in(0), [lse, gv](double x) { return gv * std::exp(x - lse); })};
    }
    case Op::Row: {
      Tensor dx = Tensor::zeros(in(0).shape());
      const auto cols = in(0).dim(1);
      for (std::size_t j = 0; j < cols; ++j) dx[n.index * cols + j] = g[j];
      return {std::move(dx)};
    }
    case Op::Element: {
      Tensor dx = Tensor::zeros(in(0).shape());
      dx[n.index] = g.item();
      return {std::move(dx)};
    }
    case Op::StackRows: {
      const auto cols = g.dim(1);
      std::vector<Tensor> out;
      out.reserve(n.inputs.size());
      for (std::size_t r = 0; r < n.inputs.size(); ++r) {
        auto vals = g.values().subspan(r * cols, cols);
        out.push_back(Tensor::vector({vals.begin(), vals.end()}));
      }
      return out;
    }
    case Op::Transpose: {
      const auto m = g.dim(0), cols = g.dim(1);
      std::vector<double> out(m * cols);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[j * m + i] = g[i * cols + j];
      return {Tensor({cols, m}, std::move(out))};
    }
  }
  throw std::logic_error("backward: unhandled op");
}

}  // namespace

Gradients backward(const Graph& graph, Var root) {
  if (&root.graph() != &graph) throw std::invalid_argument("backward: root from another graph");
  if (root.value().size() != 1) {
    throw std::invalid_argument("backward: root must be scalar, got " + shape_str(root.shape()));
  }
  Gradients grads(graph.size());
  if (!graph.node(root.id()).requires_grad) return grads;
  grads.slot(root.id()) = Tensor::filled(root.shape(), 1.0);
  for (NodeId id = root.id() + 1; id-- > 0;) {
    auto& slot = grads.slot(id);
    if (!slot) continue;
    const Node& n = graph.node(id);
    if (n.op == Op::Leaf || n.op == Op::Constant) continue;
    auto parts = input_grads(graph, n, *slot);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!graph.node(n.inputs[k]).requires_grad) continue;
      accumulate(grads.slot(n.inputs[k]), std::move(parts[k]));
    }
  }
  return grads;
}

}  // namespace xpl::ad
