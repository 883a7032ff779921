#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "disgenib/data.hpp"
#include "disgenib/model.hpp"

namespace dgib {

struct ProbeConfig {
  double train_fraction = 0.7;  // per class, the rest is held out
  std::size_t steps = 300;      // full-batch Adam steps
  double lr = 0.05;
};

// Multinomial logistic regression on standardized features, trained on a
// stratified split; returns held-out accuracy.
double linear_probe_accuracy(const Array& features, std::span<const std::size_t> labels, std::size_t classes,
                             const ProbeConfig& cfg, std::uint64_t seed);

struct ProbeResult {
  double acc_from_a = 0.0;
  double acc_from_z = 0.0;
  double chance = 0.0;
};

nlohmann::json to_json(const ProbeResult& r);

// Probes on the encoder means of A and of Z over all rows of `ds`.
ProbeResult probe_disentanglement(const DisGenModel& model, const Dataset& ds, const ProbeConfig& cfg,
                                  std::uint64_t seed);

}  // namespace dgib
