#include "disgenib/nn.hpp"

#include <cmath>

#include "disgenib/errors.hpp"

namespace dgib {

Linear::Linear(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = Tensor::parameter(rng.uniform_array({in, out}, -bound, bound));
  bias_ = Tensor::parameter(Array::zeros({1, out}));
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.shape().size() != 2 || x.shape()[1] != in_features()) {
    throw ShapeError("Linear: input " + shape_to_string(x.shape()) + " vs weight " +
                     shape_to_string(weight_.shape()));
  }
  return matmul(x, weight_) + bias_;
}

void Linear::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".weight", weight_});
  out.push_back({prefix + ".bias", bias_});
}

Mlp::Mlp(std::size_t in, std::size_t hidden, std::size_t layers, std::size_t out, Rng& rng) {
  std::size_t width = in;
  for (std::size_t i = 0; i < layers; ++i) {
    layers_.emplace_back(width, hidden, rng);
    width = hidden;
  }
  layers_.emplace_back(width, out, rng);
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) h = tanh(layers_[i].forward(h));
  return layers_.back().forward(h);
}

void Mlp::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + "." + std::to_string(i), out);
}

std::vector<Tensor> Mlp::parameters() const {
  std::vector<NamedTensor> named;
  collect("", named);
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (auto& n : named) out.push_back(n.tensor);
  return out;
}

GaussianMlp::GaussianMlp(std::size_t in, std::size_t hidden, std::size_t layers, std::size_t dim, Rng& rng)
    : net_(in, hidden, layers, 2 * dim, rng), dim_(dim) {}

DiagGaussian GaussianMlp::condition(const Tensor& x) const {
  const Tensor out = net_.forward(x);
  return DiagGaussian(slice_last(out, 0, dim_), slice_last(out, dim_, 2 * dim_));
}

}  // namespace dgib
