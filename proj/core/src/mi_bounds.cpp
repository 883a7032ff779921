#include "disgenib/mi_bounds.hpp"

#include "disgenib/errors.hpp"

namespace dgib {

std::string to_string(BoundKind kind) {
  switch (kind) {
    case BoundKind::lower: return "lower-bound";
    case BoundKind::upper: return "upper-bound";
    case BoundKind::exact: return "exact";
  }
  return "unknown";
}

Tensor recon_lower_bound(const Tensor& x, const DiagGaussian& reconstruction) {
  if (x.shape().size() != 2 || x.shape()[0] == 0) throw ShapeError("recon_lower_bound: empty or non-matrix batch");
  if (x.shape() != reconstruction.mu().shape()) {
    throw ShapeError("recon_lower_bound: batch " + shape_to_string(x.shape()) + " vs reconstruction " +
                     shape_to_string(reconstruction.mu().shape()));
  }
  return mean(log_prob(reconstruction, x));
}

Tensor class_lower_bound(const Tensor& logits, std::span<const std::size_t> labels) {
  if (labels.empty()) throw ShapeError("class_lower_bound: empty batch");
  return -mean(softmax_cross_entropy(logits, labels));
}

Tensor vclub_upper_bound(const DiagGaussian& conditional, const Tensor& v) {
  const std::size_t n = conditional.batch();
  if (n < 2) throw ContractError("vclub_upper_bound needs at least 2 pairs, got " + std::to_string(n));
  if (v.shape() != conditional.mu().shape()) {
    throw ShapeError("vclub_upper_bound: samples " + shape_to_string(v.shape()) + " vs conditional " +
                     shape_to_string(conditional.mu().shape()));
  }
  // Both terms carry the same -0.5 (log 2 pi + log_var) normalizers, which
  // cancel. What is left per coordinate is the squared distance scaled by
  // the conditional's precision, and the all-pairs average of it expands as
  //   mean_j (v_j - mu_i)^2 = mean_j v_j^2 - 2 mu_i mean_j v_j + mu_i^2,
  // so the N x N matrix never has to be formed.
  const Tensor precision = exp(-conditional.log_var());
  const Tensor paired = square(v - conditional.mu());
  const Tensor v_mean = mean(v, 0);
  const Tensor v_sq_mean = mean(square(v), 0);
  const Tensor unpaired = v_sq_mean - 2.0 * conditional.mu() * v_mean + square(conditional.mu());
  return 0.5 * mean(sum((unpaired - paired) * precision, 1));
}

Tensor kl_marginal_upper_bound(const DiagGaussian& posterior, const DiagGaussian& prior) {
  return mean(kl_between(posterior, prior));
}

double approximator_ll_step(const ConditionalGaussian& approximator, const Array& x, const Array& v,
                            AdamState& state) {
  if (x.rank() != 2 || x.rows() == 0) throw ContractError("approximator_ll_step: empty batch");
  std::vector<Tensor> params = approximator.parameters();
  zero_grads(params);
  const DiagGaussian q = approximator.condition(Tensor::constant(x));
  const Tensor nll = -mean(log_prob(q, Tensor::constant(v)));
  backward(nll);
  adam_step(params, state);
  zero_grads(params);
  return nll.item();
}

}  // namespace dgib
