#include "disgenib/optim.hpp"

#include <cmath>

#include "disgenib/errors.hpp"

namespace dgib {

AdamState::AdamState(AdamConfig config, std::span<const Tensor> params) : config_(config) {
  first_.reserve(params.size());
  second_.reserve(params.size());
  for (const auto& p : params) {
    first_.push_back(Array::zeros(p.shape()));
    second_.push_back(Array::zeros(p.shape()));
  }
}

void AdamState::restore(std::size_t step, std::vector<Array> first, std::vector<Array> second) {
  if (first.size() != first_.size() || second.size() != second_.size()) {
    throw ContractError("optimizer restore: accumulator count mismatch");
  }
  for (std::size_t i = 0; i < first.size(); ++i) {
    if (first[i].shape() != first_[i].shape() || second[i].shape() != second_[i].shape()) {
      throw ShapeError("optimizer restore: accumulator " + std::to_string(i) + " has shape " +
                       shape_to_string(first[i].shape()) + ", expected " + shape_to_string(first_[i].shape()));
    }
  }
  step_ = step;
  first_ = std::move(first);
  second_ = std::move(second);
}

void adam_step(std::span<Tensor> params, AdamState& state) {
  if (params.size() != state.first_.size()) {
    throw ContractError("adam_step: " + std::to_string(params.size()) + " params but state tracks " +
                        std::to_string(state.first_.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) throw ContractError("adam_step: parameter " + std::to_string(i) + " has no gradient");
    if (params[i].shape() != state.first_[i].shape()) {
      throw ShapeError("adam_step: parameter " + std::to_string(i) + " shape changed");
    }
  }
  const AdamConfig& c = state.config_;
  state.step_ += 1;
  const double t = static_cast<double>(state.step_);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Array& g = params[i].grad();
    Array& w = params[i].mutable_value();
    Array& m = state.first_[i];
    Array& v = state.second_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

}  // namespace dgib
