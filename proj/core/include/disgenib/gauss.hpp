#pragma once

#include <cstddef>

#include "disgenib/tensor.hpp"

namespace dgib {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

// Batch of diagonal Gaussians: row i is N(mu[i], diag(exp(log_var[i]))).
// Both parameters are [batch, dim]; rank-1 inputs are read as a single row.
// log_var is clamped to [kLogVarMin, kLogVarMax] on construction.
class DiagGaussian {
 public:
  DiagGaussian(Tensor mu, Tensor log_var);

  const Tensor& mu() const { return mu_; }
  const Tensor& log_var() const { return log_var_; }
  std::size_t batch() const { return mu_.shape()[0]; }
  std::size_t dim() const { return mu_.shape()[1]; }

  // Same parameters, cut from the tape.
  DiagGaussian detached() const;

 private:
  Tensor mu_;
  Tensor log_var_;
};

DiagGaussian standard_normal(std::size_t dim, std::size_t batch = 1);

// mu + exp(log_var / 2) * noise, differentiable in mu and log_var.
Tensor sample_reparam(const DiagGaussian& g, const Array& noise);

// Per-row log density, shape [batch]. A single-row x broadcasts over the batch.
Tensor log_prob(const DiagGaussian& g, const Tensor& x);

// Per-row KL(g || N(0, I)), shape [batch].
Tensor kl_to_standard(const DiagGaussian& g);

// Per-row KL(p || q), shape [batch]. A single-row q broadcasts.
Tensor kl_between(const DiagGaussian& p, const DiagGaussian& q);

}  // namespace dgib
