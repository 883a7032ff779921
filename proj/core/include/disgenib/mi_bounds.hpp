#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "disgenib/gauss.hpp"
#include "disgenib/optim.hpp"
#include "disgenib/tensor.hpp"

namespace dgib {

enum class BoundKind { lower, upper, exact };

std::string to_string(BoundKind kind);

// A mutual-information value in nats together with what kind of quantity it
// is. `exact` is reserved for enumeration and closed forms.
struct MIEstimate {
  double value = 0.0;
  BoundKind kind = BoundKind::exact;
  std::string estimator;
};

// Network mapping a batch of conditioning inputs to a batch of Gaussians.
class ConditionalGaussian {
 public:
  virtual ~ConditionalGaussian() = default;
  virtual DiagGaussian condition(const Tensor& x) const = 0;
  virtual std::vector<Tensor> parameters() const = 0;
};

// Batch mean of log q(x_i | reps_i); the constant H(X) is dropped.
Tensor recon_lower_bound(const Tensor& x, const DiagGaussian& reconstruction);

// Batch mean of log softmax(logits_i)[y_i] (negative cross-entropy); the
// constant H(Y) is dropped.
Tensor class_lower_bound(const Tensor& logits, std::span<const std::size_t> labels);

// vCLUB with the all-pairs negative term:
//   (1/N) sum_i log q(v_i|x_i) - (1/N^2) sum_{i,j} log q(v_j|x_i),
// where row i of `conditional` is q(.|x_i). Requires N >= 2. Gradients flow
// through whatever is attached to the tape; callers detach `conditional`
// when only the samples should receive gradient.
Tensor vclub_upper_bound(const DiagGaussian& conditional, const Tensor& v);

// Batch mean of KL(q(z|x_i) || prior) >= I(X;Z).
Tensor kl_marginal_upper_bound(const DiagGaussian& posterior, const DiagGaussian& prior);

// One Adam step maximizing sum_i log q(v_i|x_i) over the approximator's
// parameters. Returns the mean negative log-likelihood before the step.
double approximator_ll_step(const ConditionalGaussian& approximator, const Array& x, const Array& v,
                            AdamState& state);

}  // namespace dgib
