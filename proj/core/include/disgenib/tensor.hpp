#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dgib {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Dense row-major array of doubles. Plain value type; the autodiff graph is
// built from Tensor handles that wrap an Array.
class Array {
 public:
  Array() : shape_{0} {}
  Array(Shape shape, std::vector<double> data);

  static Array zeros(Shape shape);
  static Array filled(Shape shape, double value);
  static Array scalar(double value);
  static Array from_rows(const std::vector<std::vector<double>>& rows);
  static Array vector(std::vector<double> values);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
  double item() const;

  std::span<const double> row(std::size_t r) const;
  std::span<double> row(std::size_t r);

  bool all_finite() const;
  Array reshaped(Shape shape) const;

  friend bool operator==(const Array& a, const Array& b) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

namespace detail {
struct Node;
}

// Handle to a value on the reverse-mode tape. Copies share the node.
//
// The tape is implicit: every node records its inputs together with a
// creation id drawn from a global counter. Inputs always exist before their
// outputs, so descending id order over the nodes reachable from a loss is a
// valid reverse topological order. backward() walks that order and then
// releases the interior nodes (the tape is consumed).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Array value, bool requires_grad = false);

  static Tensor constant(Array value) { return Tensor(std::move(value), false); }
  static Tensor parameter(Array value) { return Tensor(std::move(value), true); }

  bool defined() const { return node_ != nullptr; }
  const Array& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  double item() const { return value().item(); }
  bool requires_grad() const;

  bool has_grad() const;
  const Array& grad() const;
  void zero_grad();

  // Parameters are the only tensors mutated after creation (optimizer
  // updates and checkpoint loading).
  Array& mutable_value();

  const std::string& op_name() const;
  std::uint64_t id() const;

  // Internal: used by primitives to build the graph.
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

// Disables tape recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// ---- primitives -----------------------------------------------------------
//
// Binary elementwise ops broadcast with numpy rules. Every primitive checks
// its output for NaN/Inf and throws NumericError naming the op.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::size_t axis);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::size_t axis);
Tensor concat_last(const std::vector<Tensor>& parts);
Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& a, Shape shape);
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
// Reduces the last axis.
Tensor logsumexp(const Tensor& a);
// logits [B, C], one label per row -> per-row cross-entropy [B].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);
// Same value, cut from the tape.
Tensor detach(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator-(const Tensor& a) { return scale(a, -1.0); }

enum class Primitive {
  matmul,
  add,
  sub,
  mul,
  scalar_mul,
  tanh,
  relu,
  exp,
  log,
  square,
  sum,
  mean,
  concat_last,
  slice_last,
  logsumexp,
  softmax_cross_entropy,
};

const std::vector<Primitive>& all_primitives();
std::string primitive_name(Primitive op);

struct PrimitiveArgs {
  double scalar = 1.0;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::vector<std::size_t> labels;
};

// Uniform entry point over the primitive set; arity and shapes are checked.
Tensor apply_primitive(Primitive op, std::span<const Tensor> inputs, const PrimitiveArgs& args = {});

// Accumulates d(loss)/d(t) into every requires_grad tensor reachable from
// `loss`. The loss must hold exactly one element.
void backward(const Tensor& loss);

void zero_grads(std::span<Tensor> tensors);

// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Array& point, double eps = 1e-5);

// Same measure for a loss closure over existing parameters: every
// coordinate of every tensor in `params` is perturbed in place (and
// restored). `loss` must be deterministic.
double grad_check_params(const std::function<Tensor()>& loss, std::span<Tensor> params, double eps = 1e-5);

}  // namespace dgib
