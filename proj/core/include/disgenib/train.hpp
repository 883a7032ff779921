#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <vector>

#include <nlohmann/json.hpp>

#include "disgenib/data.hpp"
#include "disgenib/model.hpp"
#include "disgenib/objective.hpp"
#include "disgenib/optim.hpp"

namespace dgib {

struct TrainConfig {
  std::size_t batch_size = 128;
  AdamConfig adam;
  // Learning rate of the approximator log-likelihood steps. The vCLUB
  // approximators are the encoders themselves, so these steps move the
  // same weights as the main step.
  double approximator_lr = 1e-4;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::size_t batches = 0;
  LossBreakdown loss;     // batch means
  double approximator_nll = 0.0;
  double wall_clock_s = 0.0;
};

// One trace line: every LossBreakdown field plus epoch, seed, config echo
// and wall-clock seconds.
nlohmann::json trace_line(const EpochRecord& rec, std::uint64_t seed, const nlohmann::json& config_echo);

// Alternating schedule per batch: cfg.approximator_steps log-likelihood
// steps for each vCLUB approximator in use, then one Adam step on the
// objective over all model parameters.
//
// Epoch k (1-based) shuffles rows and draws reparameterization noise from
// the substream ("epoch", k) of the seed, so training resumed from the
// state after epoch k reproduces the uninterrupted run.
class Trainer {
 public:
  Trainer(DisGenModel& model, const Dataset& data, ObjectiveConfig objective, TrainConfig train, std::uint64_t seed,
          std::optional<PriorTable> priors = std::nullopt);

  EpochRecord run_epoch();

  // Runs `epochs` more epochs. `on_epoch` (optional) sees every record.
  std::vector<EpochRecord> run(std::size_t epochs, const std::function<void(const EpochRecord&)>& on_epoch = {});

  std::size_t epochs_done() const { return epoch_; }
  const ObjectiveConfig& objective() const { return objective_; }

  // Optimizer state as named arrays plus scalar metadata, for checkpoints.
  std::vector<NamedArray> state_arrays() const;
  nlohmann::json state_meta() const;
  // Restores optimizer state and the epoch counter; model parameters are
  // loaded separately.
  void restore_state(const nlohmann::json& meta, const std::vector<NamedArray>& arrays);

 private:
  DisGenModel& model_;
  const Dataset& data_;
  ObjectiveConfig objective_;
  TrainConfig train_;
  std::uint64_t seed_;
  std::optional<PriorTable> priors_;
  std::vector<Tensor> params_;
  AdamState main_;
  AdamState approx_a_;
  AdamState approx_z_;
  std::size_t epoch_ = 0;

  bool uses_approx_a() const;
  bool uses_approx_z() const;
};

// Convenience wrapper: fresh trainer, `epochs` epochs, returns the trace.
std::vector<EpochRecord> train(DisGenModel& model, const Dataset& data, const ObjectiveConfig& objective,
                               const TrainConfig& cfg, std::size_t epochs, std::uint64_t seed,
                               const std::optional<PriorTable>& priors = std::nullopt);

}  // namespace dgib
