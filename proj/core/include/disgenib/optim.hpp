#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "disgenib/tensor.hpp"

namespace dgib {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment accumulators for one parameter list, in list order.
class AdamState {
 public:
  AdamState() = default;
  AdamState(AdamConfig config, std::span<const Tensor> params);

  const AdamConfig& config() const { return config_; }
  AdamConfig& config() { return config_; }
  std::size_t step() const { return step_; }
  std::size_t size() const { return first_.size(); }

  const std::vector<Array>& first_moments() const { return first_; }
  const std::vector<Array>& second_moments() const { return second_; }

  // Checkpoint restore; shapes must match the current accumulators.
  void restore(std::size_t step, std::vector<Array> first, std::vector<Array> second);

 private:
  friend void adam_step(std::span<Tensor> params, AdamState& state);

  AdamConfig config_;
  std::size_t step_ = 0;
  std::vector<Array> first_;
  std::vector<Array> second_;
};

// Bias-corrected Adam update applied in place. Every parameter must carry a
// gradient (ContractError otherwise). Gradients are left untouched.
void adam_step(std::span<Tensor> params, AdamState& state);

}  // namespace dgib
