#include "disgenib/gauss.hpp"

#include <cmath>
#include <numbers>

#include "disgenib/errors.hpp"

namespace dgib {

namespace {

Tensor as_rows(const Tensor& t) {
  if (t.shape().size() == 1) return reshape(t, {1, t.shape()[0]});
  if (t.shape().size() != 2) throw ShapeError("Gaussian parameters must be rank 1 or 2, got " + shape_to_string(t.shape()));
  return t;
}

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

}  // namespace

DiagGaussian::DiagGaussian(Tensor mu, Tensor log_var)
    : mu_(as_rows(mu)), log_var_(clamp(as_rows(log_var), kLogVarMin, kLogVarMax)) {
  if (mu_.shape() != log_var_.shape()) {
    throw ShapeError("DiagGaussian: mu " + shape_to_string(mu_.shape()) + " vs log_var " +
                     shape_to_string(log_var_.shape()));
  }
}

DiagGaussian DiagGaussian::detached() const { return DiagGaussian(detach(mu_), detach(log_var_)); }

DiagGaussian standard_normal(std::size_t dim, std::size_t batch) {
  return DiagGaussian(Tensor::constant(Array::zeros({batch, dim})), Tensor::constant(Array::zeros({batch, dim})));
}

Tensor sample_reparam(const DiagGaussian& g, const Array& noise) {
  Array eps = noise.rank() == 1 ? noise.reshaped({1, noise.size()}) : noise;
  if (eps.shape() != g.mu().shape()) {
    throw ShapeError("sample_reparam: noise " + shape_to_string(noise.shape()) + " vs distribution " +
                     shape_to_string(g.mu().shape()));
  }
  return g.mu() + exp(0.5 * g.log_var()) * Tensor::constant(std::move(eps));
}

Tensor log_prob(const DiagGaussian& g, const Tensor& x) {
  const Tensor xr = as_rows(x);
  if (xr.shape()[1] != g.dim() || (xr.shape()[0] != g.batch() && xr.shape()[0] != 1 && g.batch() != 1)) {
    throw ShapeError("log_prob: x " + shape_to_string(x.shape()) + " vs distribution " +
                     shape_to_string(g.mu().shape()));
  }
  const Tensor quad = square(xr - g.mu()) / exp(g.log_var());
  const Tensor per_dim = -0.5 * (g.log_var() + quad) - kHalfLog2Pi;
  return sum(per_dim, 1);
}

Tensor kl_to_standard(const DiagGaussian& g) {
  const Tensor per_dim = exp(g.log_var()) + square(g.mu()) - 1.0 - g.log_var();
  return 0.5 * sum(per_dim, 1);
}

Tensor kl_between(const DiagGaussian& p, const DiagGaussian& q) {
  if (p.dim() != q.dim() || (p.batch() != q.batch() && q.batch() != 1)) {
    throw ShapeError("kl_between: " + shape_to_string(p.mu().shape()) + " vs " + shape_to_string(q.mu().shape()));
  }
  // (var_p + (mu_p - mu_q)^2) / var_q is exactly 1 when p == q.
  const Tensor ratio = (exp(p.log_var()) + square(p.mu() - q.mu())) / exp(q.log_var());
  const Tensor per_dim = (q.log_var() - p.log_var()) + ratio - 1.0;
  return 0.5 * sum(per_dim, 1);
}

}  // namespace dgib
