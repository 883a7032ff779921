#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "disgenib/model.hpp"
#include "disgenib/rng.hpp"
#include "disgenib/tensor.hpp"

namespace dgib {

enum class ObjectiveMode { disgenib, disgenib_prior, cvae, avae, disenib };

std::string to_string(ObjectiveMode mode);
// Accepts "disgenib", "disgenib-prior", "cvae", "avae", "disenib".
ObjectiveMode parse_objective_mode(const std::string& name);
bool needs_prior(ObjectiveMode mode);

// Upper bound used for I(X;Z) in the prior-conditioned objectives.
enum class PriorBound { kl_marginal, vclub };

std::string to_string(PriorBound bound);
PriorBound parse_prior_bound(const std::string& name);

struct ObjectiveConfig {
  ObjectiveMode mode = ObjectiveMode::disgenib;
  double alpha = 1.0;
  double beta = 0.5;
  double sigma_rec = 0.5;
  std::size_t approximator_steps = 1;

  // Ablation switches. Off removes the whole term (weight 0, not computed):
  // compression is beta * vCLUB(X;A); disentanglement is
  // (1 + alpha) * (vCLUB(X;Z) - I(X;Y,Z) lower bound).
  bool use_compression = true;
  bool use_disentanglement = true;

  // Set by configure_disenib so reports can flag the correspondence.
  bool disenib = false;

  PriorBound prior_bound = PriorBound::kl_marginal;

  // When on, vCLUB gradients reach the encoders through the samples only.
  // The approximators here are the encoders themselves, and with the
  // stop-gradient the sample path alone rewards shrinking the encoder
  // variance without bound, so the default differentiates through both.
  bool stop_gradient = false;

  void validate() const;
};

nlohmann::json to_json(const ObjectiveConfig& cfg);

// (1 + alpha) / (2 + alpha). ConfigError for negative or non-finite alpha.
double alpha_prime(double alpha);

// DisGenIB objective with alpha = 0, beta = 1 and the disenib flag set.
ObjectiveConfig configure_disenib(ObjectiveConfig cfg);

// Per-term values of an objective. Every component is stored as a loss
// (recon_* and class_term are negated lower bounds), and
//   total = sum_k weight_k * component_k
// over the six components. Unused components have value 0 and weight 0.
struct LossBreakdown {
  double total = 0.0;
  double recon_az = 0.0;
  double class_term = 0.0;
  double club_xa = 0.0;
  double club_xz = 0.0;
  double kl_xz = 0.0;
  double recon_yz = 0.0;

  double w_recon_az = 0.0;
  double w_class_term = 0.0;
  double w_club_xa = 0.0;
  double w_club_xz = 0.0;
  double w_kl_xz = 0.0;
  double w_recon_yz = 0.0;

  double recompute_total() const;
};

nlohmann::json to_json(const LossBreakdown& b);

struct LossResult {
  Tensor total;
  LossBreakdown breakdown;
};

// All losses take a batch x [B, d_x] with one label per row. Reparameterized
// noise is drawn from `rng`; identical rng state gives identical values.

// x-reconstruction from (A, Z), class term on A, beta-weighted compression
// of A, and the (1 + alpha)-weighted disentanglement surrogate on Z.
LossResult loss_disgenib(const DisGenModel& model, const Array& x, std::span<const std::size_t> labels,
                         const ObjectiveConfig& cfg, Rng& rng);

// A ~ N(a_y, sigma_A^2 I) from the prior table, Z from enc_z:
//   total = recon_az + alpha' * bound(I(X;Z)).
// Noise order: Z first, then A.
LossResult loss_disgenib_prior(const DisGenModel& model, const Array& x, std::span<const std::size_t> labels,
                               const PriorTable& priors, const ObjectiveConfig& cfg, Rng& rng);

// A := label_embed(y) through dec_yz; total = recon_yz + alpha' * KL(q(Z|x) || N(0, I)).
LossResult loss_cvae(const DisGenModel& model, const Array& x, std::span<const std::size_t> labels,
                     const ObjectiveConfig& cfg, Rng& rng);

// A := a_y exactly; total = recon_az + alpha' * KL(q(Z|x) || N(0, I)).
LossResult loss_avae(const DisGenModel& model, const Array& x, std::span<const std::size_t> labels,
                     const PriorTable& priors, const ObjectiveConfig& cfg, Rng& rng);

// Dispatch on cfg.mode. Prior modes require `priors`.
LossResult objective_loss(const DisGenModel& model, const Array& x, std::span<const std::size_t> labels,
                          const ObjectiveConfig& cfg, const PriorTable* priors, Rng& rng);

}  // namespace dgib
