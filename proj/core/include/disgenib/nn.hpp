#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "disgenib/gauss.hpp"
#include "disgenib/mi_bounds.hpp"
#include "disgenib/rng.hpp"
#include "disgenib/tensor.hpp"

namespace dgib {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Affine layer y = x W + b with W [in, out], b [1, out].
// Weights ~ U(-1/sqrt(in), 1/sqrt(in)), bias zero.
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  Tensor forward(const Tensor& x) const;
  std::size_t in_features() const { return weight_.shape()[0]; }
  std::size_t out_features() const { return weight_.shape()[1]; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;

 private:
  Tensor weight_;
  Tensor bias_;
};

// tanh hidden layers, linear output.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t layers, std::size_t out, Rng& rng);

  Tensor forward(const Tensor& x) const;
  std::size_t in_features() const { return layers_.front().in_features(); }
  std::size_t out_features() const { return layers_.back().out_features(); }
  const std::vector<Linear>& layers() const { return layers_; }

  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
  std::vector<Tensor> parameters() const;

 private:
  std::vector<Linear> layers_;
};

// MLP whose 2*dim outputs are split into (mu, log_var).
class GaussianMlp : public ConditionalGaussian {
 public:
  GaussianMlp() = default;
  GaussianMlp(std::size_t in, std::size_t hidden, std::size_t layers, std::size_t dim, Rng& rng);

  DiagGaussian condition(const Tensor& x) const override;
  std::vector<Tensor> parameters() const override { return net_.parameters(); }
  std::size_t dim() const { return dim_; }
  const Mlp& net() const { return net_; }

  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const { net_.collect(prefix, out); }

 private:
  Mlp net_;
  std::size_t dim_ = 0;
};

}  // namespace dgib
