#include "disgenib/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "disgenib/errors.hpp"

namespace dgib {

// ---- Array ----------------------------------------------------------------

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ", ";
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Array::Array(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("array shape " + shape_to_string(shape_) + " does not match " +
                     std::to_string(data_.size()) + " values");
  }
}

Array Array::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Array Array::filled(Shape shape, double value) {
  const std::size_t n = shape_size(shape);
  return Array(std::move(shape), std::vector<double>(n, value));
}

Array Array::scalar(double value) { return Array(Shape{}, {value}); }

Array Array::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Array({n}, std::move(values));
}

Array Array::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return Array({0, 0}, {});
  const std::size_t cols = rows.front().size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError("ragged rows in Array::from_rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Array({rows.size(), cols}, std::move(data));
}

std::size_t Array::rows() const {
  if (rank() != 2) throw ShapeError("rows() needs a rank-2 array, got " + shape_to_string(shape_));
  return shape_[0];
}

std::size_t Array::cols() const {
  if (rank() != 2) throw ShapeError("cols() needs a rank-2 array, got " + shape_to_string(shape_));
  return shape_[1];
}

double Array::item() const {
  if (data_.size() != 1) throw ContractError("item() on array of shape " + shape_to_string(shape_));
  return data_[0];
}

std::span<const double> Array::row(std::size_t r) const {
  const std::size_t c = cols();
  return std::span<const double>(data_).subspan(r * c, c);
}

std::span<double> Array::row(std::size_t r) {
  const std::size_t c = cols();
  return std::span<double>(data_).subspan(r * c, c);
}

bool Array::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Array Array::reshaped(Shape shape) const {
  if (shape_size(shape) != size()) {
    throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  return Array(std::move(shape), data_);
}

// ---- graph ----------------------------------------------------------------

namespace detail {

using BackwardFn = std::function<void(const Node& self, std::span<Array* const> input_grads)>;

struct Node {
  Array value;
  Array grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  std::string op;
  std::uint64_t id = 0;
};

}  // namespace detail

namespace {

using detail::Node;

std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

std::shared_ptr<Node> new_node(Array value, bool requires_grad, std::string op) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  node->op = std::move(op);
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return node;
}

Tensor make_result(const char* op, Array value, std::initializer_list<const Tensor*> inputs,
                   detail::BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError(std::string("primitive '") + op + "' produced a non-finite value");
  }
  bool needs_grad = false;
  if (t_grad_enabled) {
    for (const Tensor* t : inputs) needs_grad = needs_grad || t->requires_grad();
  }
  auto node = new_node(std::move(value), needs_grad, op);
  if (needs_grad) {
    node->inputs.reserve(inputs.size());
    for (const Tensor* t : inputs) node->inputs.push_back(t->node());
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

Tensor make_result_n(const char* op, Array value, const std::vector<Tensor>& inputs, detail::BackwardFn fn) {
  if (!value.all_finite()) {
    throw NumericError(std::string("primitive '") + op + "' produced a non-finite value");
  }
  bool needs_grad = false;
  if (t_grad_enabled) {
    for (const Tensor& t : inputs) needs_grad = needs_grad || t.requires_grad();
  }
  auto node = new_node(std::move(value), needs_grad, op);
  if (needs_grad) {
    for (const Tensor& t : inputs) node->inputs.push_back(t.node());
    node->backward = std::move(fn);
  }
  return Tensor(std::move(node));
}

void require_defined(const Tensor& t, const char* op) {
  if (!t.defined()) throw ContractError(std::string("undefined tensor passed to '") + op + "'");
}

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ShapeError(std::string("'") + op + "': cannot broadcast " + shape_to_string(a) + " with " +
                       shape_to_string(b));
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// For each flat index of `out`, the flat index into an input of shape `in`
// that broadcasts to it. Empty when `in == out` (identity).
std::vector<std::size_t> broadcast_map(const Shape& in, const Shape& out) {
  if (in == out) return {};
  const std::size_t r = out.size();
  const std::size_t offset = r - in.size();
  std::vector<std::size_t> strides(r, 0);
  std::size_t stride = 1;
  for (std::size_t d = in.size(); d-- > 0;) {
    if (in[d] != 1) strides[d + offset] = stride;
    stride *= in[d];
  }
  const std::size_t n = shape_size(out);
  std::vector<std::size_t> map(n);
  std::vector<std::size_t> idx(r, 0);
  std::size_t pos = 0;
  for (std::size_t i = 0; i < n; ++i) {
    map[i] = pos;
    for (std::size_t d = r; d-- > 0;) {
      ++idx[d];
      pos += strides[d];
      if (idx[d] < out[d]) break;
      pos -= strides[d] * out[d];
      idx[d] = 0;
    }
  }
  return map;
}

inline std::size_t mapped(const std::vector<std::size_t>& map, std::size_t i) {
  return map.empty() ? i : map[i];
}

// out = f(a, b); da = ∂out/∂a, db = ∂out/∂b, all evaluated elementwise.
template <class F, class DA, class DB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  require_defined(a, op);
  require_defined(b, op);
  const Array& av = a.value();
  const Array& bv = b.value();
  Shape out_shape = broadcast_shapes(av.shape(), bv.shape(), op);
  auto ma = broadcast_map(av.shape(), out_shape);
  auto mb = broadcast_map(bv.shape(), out_shape);
  const std::size_t n = shape_size(out_shape);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(av[mapped(ma, i)], bv[mapped(mb, i)]);
  return make_result(op, Array(std::move(out_shape), std::move(out)), {&a, &b},
                     [ma = std::move(ma), mb = std::move(mb), da, db](const Node& self, std::span<Array* const> g) {
                       const Array& x = self.inputs[0]->value;
                       const Array& y = self.inputs[1]->value;
                       const Array& go = self.grad;
                       for (std::size_t i = 0; i < go.size(); ++i) {
                         const std::size_t ia = mapped(ma, i);
                         const std::size_t ib = mapped(mb, i);
                         if (g[0]) (*g[0])[ia] += go[i] * da(x[ia], y[ib], self.value[i]);
                         if (g[1]) (*g[1])[ib] += go[i] * db(x[ia], y[ib], self.value[i]);
                       }
                     });
}

// out = f(a); d = ∂out/∂a given (input, output).
template <class F, class D>
Tensor unary(const char* op, const Tensor& a, F f, D d) {
  require_defined(a, op);
  const Array& av = a.value();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return make_result(op, Array(av.shape(), std::move(out)), {&a}, [d](const Node& self, std::span<Array* const> g) {
    if (!g[0]) return;
    const Array& x = self.inputs[0]->value;
    for (std::size_t i = 0; i < x.size(); ++i) (*g[0])[i] += self.grad[i] * d(x[i], self.value[i]);
  });
}

// C[m,n] += A[m,k] B[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C[m,k] += G[m,n] B[k,n]^T
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double* bp = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += gi[j] * bp[j];
      c[i * k + p] += acc;
    }
  }
}

// C[k,n] += A[m,k]^T G[m,n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* gi = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += aip * gi[j];
    }
  }
}

struct AxisSplit {
  std::size_t outer;
  std::size_t len;
  std::size_t inner;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
  for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
  return r;
}

}  // namespace

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Array value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("tensor created with a non-finite value");
  node_ = new_node(std::move(value), requires_grad, "leaf");
}

const Array& Tensor::value() const {
  if (!node_) throw ContractError("access to an undefined tensor");
  return node_->value;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && node_->has_grad; }

const Array& Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (!node_) return;
  node_->grad = Array();
  node_->has_grad = false;
}

Array& Tensor::mutable_value() {
  if (!node_) throw ContractError("access to an undefined tensor");
  return node_->value;
}

const std::string& Tensor::op_name() const {
  if (!node_) throw ContractError("access to an undefined tensor");
  return node_->op;
}

std::uint64_t Tensor::id() const { return node_ ? node_->id : 0; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined(a, "matmul");
  require_defined(b, "matmul");
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw ShapeError("'matmul': incompatible shapes " + shape_to_string(av.shape()) + " x " +
                     shape_to_string(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Array out = Array::zeros({m, n});
  gemm_nn(av.data().data(), bv.data().data(), out.data().data(), m, k, n);
  return make_result("matmul", std::move(out), {&a, &b}, [m, k, n](const Node& self, std::span<Array* const> g) {
    const Array& x = self.inputs[0]->value;
    const Array& y = self.inputs[1]->value;
    if (g[0]) gemm_nt(self.grad.data().data(), y.data().data(), g[0]->data().data(), m, n, k);
    if (g[1]) gemm_tn(x.data().data(), self.grad.data().data(), g[1]->data().data(), m, k, n);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Tensor scale(const Tensor& a, double s) {
  return unary(
      "scalar_mul", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor tanh(const Tensor& a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& a) {
  return unary(
      "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  if (!(lo <= hi)) throw ContractError("'clamp': lo > hi");
  return unary(
      "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor sum(const Tensor& a) {
  require_defined(a, "sum");
  const Array& av = a.value();
  double total = 0.0;
  for (double v : av.data()) total += v;
  return make_result("sum", Array::scalar(total), {&a}, [](const Node& self, std::span<Array* const> g) {
    if (!g[0]) return;
    const double go = self.grad[0];
    for (double& v : g[0]->data()) v += go;
  });
}

Tensor sum(const Tensor& a, std::size_t axis) {
  require_defined(a, "sum");
  const Array& av = a.value();
  if (axis >= av.rank()) throw ShapeError("'sum': axis out of range for " + shape_to_string(av.shape()));
  const AxisSplit s = split_axis(av.shape(), axis);
  Shape out_shape = av.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t l = 0; l < s.len; ++l)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += av[(o * s.len + l) * s.inner + i];
  return make_result("sum", Array(std::move(out_shape), std::move(out)), {&a},
                     [s](const Node& self, std::span<Array* const> g) {
                       if (!g[0]) return;
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t l = 0; l < s.len; ++l)
                           for (std::size_t i = 0; i < s.inner; ++i)
                             (*g[0])[(o * s.len + l) * s.inner + i] += self.grad[o * s.inner + i];
                     });
}

Tensor mean(const Tensor& a) {
  require_defined(a, "mean");
  if (a.size() == 0) throw ShapeError("'mean' of an empty tensor");
  const double n = static_cast<double>(a.size());
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return make_result("mean", Array::scalar(total / n), {&a}, [n](const Node& self, std::span<Array* const> g) {
    if (!g[0]) return;
    const double go = self.grad[0] / n;
    for (double& v : g[0]->data()) v += go;
  });
}

Tensor mean(const Tensor& a, std::size_t axis) {
  require_defined(a, "mean");
  if (axis >= a.value().rank()) throw ShapeError("'mean': axis out of range");
  const std::size_t len = a.value().dim(axis);
  if (len == 0) throw ShapeError("'mean' over an empty axis");
  return scale(sum(a, axis), 1.0 / static_cast<double>(len));
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("'concat_last' needs at least one input");
  for (const auto& p : parts) require_defined(p, "concat_last");
  const Shape& first = parts.front().shape();
  if (first.empty()) throw ShapeError("'concat_last' on scalars");
  const std::size_t lead = shape_size(first) / first.back();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin())) {
      throw ShapeError("'concat_last': leading dims differ: " + shape_to_string(first) + " vs " +
                       shape_to_string(s));
    }
    widths.push_back(s.back());
    total += s.back();
  }
  Shape out_shape = first;
  out_shape.back() = total;
  std::vector<double> out(lead * total);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Array& pv = parts[k].value();
    for (std::size_t r = 0; r < lead; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) out[r * total + col + c] = pv[r * widths[k] + c];
    col += widths[k];
  }
  return make_result_n("concat_last", Array(std::move(out_shape), std::move(out)), parts,
                       [widths, lead, total](const Node& self, std::span<Array* const> g) {
                         std::size_t col0 = 0;
                         for (std::size_t k = 0; k < widths.size(); ++k) {
                           if (g[k]) {
                             for (std::size_t r = 0; r < lead; ++r)
                               for (std::size_t c = 0; c < widths[k]; ++c)
                                 (*g[k])[r * widths[k] + c] += self.grad[r * total + col0 + c];
                           }
                           col0 += widths[k];
                         }
                       });
}

Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end) {
  require_defined(a, "slice_last");
  const Array& av = a.value();
  if (av.rank() == 0 || begin > end || end > av.shape().back()) {
    throw ShapeError("'slice_last': range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for " + shape_to_string(av.shape()));
  }
  const std::size_t width = av.shape().back();
  const std::size_t lead = av.size() / std::max<std::size_t>(width, 1);
  const std::size_t w = end - begin;
  Shape out_shape = av.shape();
  out_shape.back() = w;
  std::vector<double> out(lead * w);
  for (std::size_t r = 0; r < lead; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = av[r * width + begin + c];
  return make_result("slice_last", Array(std::move(out_shape), std::move(out)), {&a},
                     [lead, width, begin, w](const Node& self, std::span<Array* const> g) {
                       if (!g[0]) return;
                       for (std::size_t r = 0; r < lead; ++r)
                         for (std::size_t c = 0; c < w; ++c) (*g[0])[r * width + begin + c] += self.grad[r * w + c];
                     });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined(a, "reshape");
  Array out = a.value().reshaped(std::move(shape));
  return make_result("reshape", std::move(out), {&a}, [](const Node& self, std::span<Array* const> g) {
    if (!g[0]) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) (*g[0])[i] += self.grad[i];
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_defined(a, "gather_rows");
  const Array& av = a.value();
  if (av.rank() != 2) throw ShapeError("'gather_rows' needs a rank-2 input, got " + shape_to_string(av.shape()));
  const std::size_t n = av.dim(0), d = av.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * d);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) {
      throw ContractError("'gather_rows': row " + std::to_string(idx[r]) + " out of range for " +
                          std::to_string(n) + " rows");
    }
    std::copy_n(av.data().begin() + static_cast<std::ptrdiff_t>(idx[r] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(r * d));
  }
  Array value({idx.size(), d}, std::move(out));
  return make_result("gather_rows", std::move(value), {&a},
                     [idx = std::move(idx), d](const Node& self, std::span<Array* const> g) {
                       if (!g[0]) return;
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::size_t c = 0; c < d; ++c) (*g[0])[idx[r] * d + c] += self.grad[r * d + c];
                     });
}

Tensor logsumexp(const Tensor& a) {
  require_defined(a, "logsumexp");
  const Array& av = a.value();
  if (av.rank() == 0 || av.shape().back() == 0) throw ShapeError("'logsumexp' needs a non-empty last axis");
  const std::size_t width = av.shape().back();
  const std::size_t lead = av.size() / width;
  Shape out_shape(av.shape().begin(), av.shape().end() - 1);
  std::vector<double> out(lead);
  for (std::size_t r = 0; r < lead; ++r) {
    const double* x = av.data().data() + r * width;
    const double m = *std::max_element(x, x + width);
    double acc = 0.0;
    for (std::size_t c = 0; c < width; ++c) acc += std::exp(x[c] - m);
    out[r] = m + std::log(acc);
  }
  return make_result("logsumexp", Array(std::move(out_shape), std::move(out)), {&a},
                     [lead, width](const Node& self, std::span<Array* const> g) {
                       if (!g[0]) return;
                       const Array& x = self.inputs[0]->value;
                       for (std::size_t r = 0; r < lead; ++r)
                         for (std::size_t c = 0; c < width; ++c)
                           (*g[0])[r * width + c] += self.grad[r] * std::exp(x[r * width + c] - self.value[r]);
                     });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_defined(logits, "softmax_cross_entropy");
  const Array& lv = logits.value();
  if (lv.rank() != 2 || lv.dim(0) != labels.size()) {
    throw ShapeError("'softmax_cross_entropy': logits " + shape_to_string(lv.shape()) + " vs " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = lv.dim(0), c = lv.dim(1);
  std::vector<std::size_t> ys(labels.begin(), labels.end());
  std::vector<double> lse(b), out(b);
  for (std::size_t r = 0; r < b; ++r) {
    if (ys[r] >= c) {
      throw ContractError("label " + std::to_string(ys[r]) + " out of range for " + std::to_string(c) + " classes");
    }
    const double* x = lv.data().data() + r * c;
    const double m = *std::max_element(x, x + c);
    double acc = 0.0;
    for (std::size_t k = 0; k < c; ++k) acc += std::exp(x[k] - m);
    lse[r] = m + std::log(acc);
    out[r] = lse[r] - x[ys[r]];
  }
  return make_result("softmax_cross_entropy", Array({b}, std::move(out)), {&logits},
                     [ys = std::move(ys), lse = std::move(lse), c](const Node& self, std::span<Array* const> g) {
                       if (!g[0]) return;
                       const Array& x = self.inputs[0]->value;
                       for (std::size_t r = 0; r < ys.size(); ++r) {
                         for (std::size_t k = 0; k < c; ++k) {
                           const double p = std::exp(x[r * c + k] - lse[r]);
                           (*g[0])[r * c + k] += self.grad[r] * (p - (k == ys[r] ? 1.0 : 0.0));
                         }
                       }
                     });
}

Tensor detach(const Tensor& a) {
  require_defined(a, "detach");
  return Tensor(new_node(a.value(), false, "detach"));
}

// ---- dispatcher -----------------------------------------------------------

const std::vector<Primitive>& all_primitives() {
  static const std::vector<Primitive> ops = {
      Primitive::matmul, Primitive::add,       Primitive::sub,         Primitive::mul,
      Primitive::scalar_mul, Primitive::tanh,  Primitive::relu,        Primitive::exp,
      Primitive::log,    Primitive::square,    Primitive::sum,         Primitive::mean,
      Primitive::concat_last, Primitive::slice_last, Primitive::logsumexp, Primitive::softmax_cross_entropy,
  };
  return ops;
}

std::string primitive_name(Primitive op) {
  switch (op) {
    case Primitive::matmul: return "matmul";
    case Primitive::add: return "add";
    case Primitive::sub: return "sub";
    case Primitive::mul: return "elementwise-mul";
    case Primitive::scalar_mul: return "scalar-mul";
    case Primitive::tanh: return "tanh";
    case Primitive::relu: return "relu";
    case Primitive::exp: return "exp";
    case Primitive::log: return "log";
    case Primitive::square: return "square";
    case Primitive::sum: return "sum";
    case Primitive::mean: return "mean";
    case Primitive::concat_last: return "concat-last-axis";
    case Primitive::slice_last: return "slice";
    case Primitive::logsumexp: return "log-sum-exp";
    case Primitive::softmax_cross_entropy: return "softmax-cross-entropy-with-logits";
  }
  return "unknown";
}

Tensor apply_primitive(Primitive op, std::span<const Tensor> inputs, const PrimitiveArgs& args) {
  auto arity = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw ContractError("primitive '" + primitive_name(op) + "' takes " + std::to_string(n) + " inputs, got " +
                          std::to_string(inputs.size()));
    }
  };
  switch (op) {
    case Primitive::matmul: arity(2); return matmul(inputs[0], inputs[1]);
    case Primitive::add: arity(2); return add(inputs[0], inputs[1]);
    case Primitive::sub: arity(2); return sub(inputs[0], inputs[1]);
    case Primitive::mul: arity(2); return mul(inputs[0], inputs[1]);
    case Primitive::scalar_mul: arity(1); return scale(inputs[0], args.scalar);
    case Primitive::tanh: arity(1); return tanh(inputs[0]);
    case Primitive::relu: arity(1); return relu(inputs[0]);
    case Primitive::exp: arity(1); return exp(inputs[0]);
    case Primitive::log: arity(1); return log(inputs[0]);
    case Primitive::square: arity(1); return square(inputs[0]);
    case Primitive::sum: arity(1); return sum(inputs[0]);
    case Primitive::mean: arity(1); return mean(inputs[0]);
    case Primitive::concat_last:
      if (inputs.empty()) throw ContractError("concat-last-axis takes at least one input");
      return concat_last(std::vector<Tensor>(inputs.begin(), inputs.end()));
    case Primitive::slice_last: arity(1); return slice_last(inputs[0], args.begin, args.end);
    case Primitive::logsumexp: arity(1); return logsumexp(inputs[0]);
    case Primitive::softmax_cross_entropy: arity(1); return softmax_cross_entropy(inputs[0], args.labels);
  }
  throw ContractError("unknown primitive");
}

// ---- backward -------------------------------------------------------------

void backward(const Tensor& loss) {
  require_defined(loss, "backward");
  if (loss.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " + shape_to_string(loss.shape()));
  }
  const auto& root = loss.node();
  if (!root->requires_grad) return;

  // Owning handles: releasing the tape below drops interior nodes that are
  // still listed here.
  std::vector<std::shared_ptr<Node>> order;
  std::vector<std::shared_ptr<Node>> stack{root};
  std::unordered_set<const Node*> visited{root.get()};
  while (!stack.empty()) {
    std::shared_ptr<Node> n = std::move(stack.back());
    stack.pop_back();
    for (const auto& in : n->inputs) {
      if (in->requires_grad && visited.insert(in.get()).second) stack.push_back(in);
    }
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a->id > b->id; });

  auto ensure_grad = [](Node* n) {
    if (!n->has_grad) {
      n->grad = Array::zeros(n->value.shape());
      n->has_grad = true;
    }
  };
  ensure_grad(root.get());
  root->grad[0] += 1.0;

  std::vector<Array*> slots;
  for (const auto& n : order) {
    if (!n->backward || !n->has_grad) continue;
    slots.assign(n->inputs.size(), nullptr);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      Node* in = n->inputs[i].get();
      if (in->requires_grad) {
        ensure_grad(in);
        slots[i] = &in->grad;
      }
    }
    n->backward(*n, slots);
  }
  for (const auto& n : order) {
    if (n->backward) {
      n->backward = nullptr;
      n->inputs.clear();
    }
  }
}

void zero_grads(std::span<Tensor> tensors) {
  for (auto& t : tensors) t.zero_grad();
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Array& point, double eps) {
  if (!(eps > 0.0)) throw ContractError("grad_check: eps must be positive");
  Tensor x = Tensor::parameter(point);
  Tensor y = f(x);
  if (y.size() != 1) throw ContractError("grad_check: function returned shape " + shape_to_string(y.shape()));
  backward(y);
  const Array analytic = x.has_grad() ? x.grad() : Array::zeros(point.shape());

  NoGradGuard no_grad;
  double worst = 0.0;
  Array probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + eps;
    const double up = f(Tensor::constant(probe)).item();
    probe[i] = point[i] - eps;
    const double down = f(Tensor::constant(probe)).item();
    probe[i] = point[i];
    const double numeric = (up - down) / (2.0 * eps);
    const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

double grad_check_params(const std::function<Tensor()>& loss, std::span<Tensor> params, double eps) {
  if (!(eps > 0.0)) throw ContractError("grad_check_params: eps must be positive");
  zero_grads(params);
  const Tensor y = loss();
  if (y.size() != 1) throw ContractError("grad_check_params: loss has shape " + shape_to_string(y.shape()));
  backward(y);
  std::vector<Array> analytic;
  for (const auto& p : params) analytic.push_back(p.has_grad() ? p.grad() : Array::zeros(p.shape()));
  zero_grads(params);

  NoGradGuard no_grad;
  double worst = 0.0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    Array& w = params[t].mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + eps;
      const double up = loss().item();
      w[i] = saved - eps;
      const double down = loss().item();
      w[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[t][i] - numeric) / std::max(1.0, std::abs(analytic[t][i]));
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace dgib
