#include "disgenib/objective.hpp"

#include <cmath>

#include "disgenib/errors.hpp"
#include "disgenib/gauss.hpp"
#include "disgenib/mi_bounds.hpp"

namespace dgib {

std::string to_string(ObjectiveMode mode) {
  switch (mode) {
    case ObjectiveMode::disgenib: return "disgenib";
    case ObjectiveMode::disgenib_prior: return "disgenib-prior";
    case ObjectiveMode::cvae: return "cvae";
    case ObjectiveMode::avae: return "avae";
    case ObjectiveMode::disenib: return "disenib";
  }
  return "unknown";
}

ObjectiveMode parse_objective_mode(const std::string& name) {
  for (auto m : {ObjectiveMode::disgenib, ObjectiveMode::disgenib_prior, ObjectiveMode::cvae, ObjectiveMode::avae,
                 ObjectiveMode::disenib}) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown objective mode '" + name +
                    "' (expected disgenib, disgenib-prior, cvae, avae or disenib)");
}

bool needs_prior(ObjectiveMode mode) {
  return mode == ObjectiveMode::disgenib_prior || mode == ObjectiveMode::avae;
}

std::string to_string(PriorBound bound) { return bound == PriorBound::vclub ? "vclub" : "kl"; }

PriorBound parse_prior_bound(const std::string& name) {
  if (name == "kl") return PriorBound::kl_marginal;
  if (name == "vclub") return PriorBound::vclub;
  throw ConfigError("unknown prior bound '" + name + "' (expected kl or vclub)");
}

void ObjectiveConfig::validate() const {
  if (!std::isfinite(alpha) || alpha < 0.0) throw ConfigError("objective.alpha must be >= 0");
  if (!std::isfinite(beta) || beta < 0.0) throw ConfigError("objective.beta must be >= 0");
  if (!std::isfinite(sigma_rec) || sigma_rec <= 0.0) throw ConfigError("objective.sigma_rec must be > 0");
  if (approximator_steps < 1) throw ConfigError("objective.approximator_steps must be >= 1");
}

nlohmann::json to_json(const ObjectiveConfig& cfg) {
  return {
      {"mode", to_string(cfg.mode)},
      {"alpha", cfg.alpha},
      {"beta", cfg.beta},
      {"sigma_rec", cfg.sigma_rec},
      {"approximator_steps", cfg.approximator_steps},
      {"use_compression", cfg.use_compression},
      {"use_disentanglement", cfg.use_disentanglement},
      {"disenib", cfg.disenib},
      {"prior_bound", to_string(cfg.prior_bound)},
      {"stop_gradient", cfg.stop_gradient},
  };
}

double alpha_prime(double alpha) {
  if (!std::isfinite(alpha) || alpha < 0.0) throw ConfigError("alpha must be finite and >= 0");
  return (1.0 + alpha) / (2.0 + alpha);
}

ObjectiveConfig configure_disenib(ObjectiveConfig cfg) {
  cfg.mode = ObjectiveMode::disenib;
  cfg.alpha = 0.0;
  cfg.beta = 1.0;
  cfg.use_compression = true;
  cfg.use_disentanglement = true;
  cfg.disenib = true;
  return cfg;
}

double LossBreakdown::recompute_total() const {
  return w_recon_az * recon_az + w_class_term * class_term + w_club_xa * club_xa + w_club_xz * club_xz +
         w_kl_xz * kl_xz + w_recon_yz * recon_yz;
}

nlohmann::json to_json(const LossBreakdown& b) {
  return {
      {"total", b.total},
      {"recon_az", b.recon_az},
      {"class_term", b.class_term},
      {"club_xa", b.club_xa},
      {"club_xz", b.club_xz},
      {"kl_xz", b.kl_xz},
      {"recon_yz", b.recon_yz},
      {"weights",
       {{"recon_az", b.w_recon_az},
        {"class_term", b.w_class_term},
        {"club_xa", b.w_club_xa},
        {"club_xz", b.w_club_xz},
        {"kl_xz", b.w_kl_xz},
        {"recon_yz", b.w_recon_yz}}},
  };
}

namespace {

// Evaluates one loss component; NumericError from anywhere inside is
// re-raised with the component name in front.
template <typename Fn>
auto component(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const NumericError& e) {
    throw NumericError(std::string("loss component '") + name + "': " + e.what());
  }
}

void check_batch(const DisGenModel& model, const Array& x, std::span<const std::size_t> labels) {
  if (x.rank() != 2 || x.cols() != model.dims().d_x) {
    throw ShapeError("batch shape " + shape_to_string(x.shape()) + " does not match model d_x " +
                     std::to_string(model.dims().d_x));
  }
  if (labels.size() != x.rows()) throw ContractError("batch has " + std::to_string(x.rows()) + " rows and " +
                                                     std::to_string(labels.size()) + " labels");
  if (x.rows() == 0) throw ContractError("empty batch");
}

DiagGaussian approximator_view(const DiagGaussian& q, const ObjectiveConfig& cfg) {
  return cfg.stop_gradient ? q.detached() : q;
}

// Combines weighted component tensors into the differentiable total and
// fills the breakdown values.
struct Assembly {
  LossBreakdown parts;
  std::vector<Tensor> terms;

  void add(double weight, const Tensor& value, double& slot, double& weight_slot) {
    slot = value.item();
    weight_slot = weight;
    if (weight != 0.0) terms.push_back(weight == 1.0 ? value : scale(value, weight));
  }

  LossResult finish() {
    Tensor total = component("total", [&] {
      Tensor acc = terms.empty() ? Tensor::constant(Array::scalar(0.0)) : terms.front();
      for (std::size_t i = 1; i < terms.size(); ++i) acc = acc + terms[i];
      return acc;
    });
    parts.total = total.item();
    return {total, parts};
  }
};

Tensor kl_to_unit(const DiagGaussian& qz) {
  return kl_marginal_upper_bound(qz, standard_normal(qz.dim()));
}

}  // namespace

LossResult loss_disgenib(const DisGenModel& model, const Array& x, std::span<const std::size_t> labels,
                         const ObjectiveConfig& cfg, Rng& rng) {
  cfg.validate();
  check_batch(model, x, labels);
  const Tensor xt = Tensor::constant(x);
  const std::size_t n = x.rows();

  const DiagGaussian qa = component("enc_a", [&] { return model.encode_a(xt); });
  const DiagGaussian qz = component("enc_z", [&] { return model.encode_z(xt); });
  const Array noise_a = rng.normal_array({n, model.dims().d_a});
  const Array noise_z = rng.normal_array({n, model.dims().d_z});
  const Tensor a = component("sample_a", [&] { return sample_reparam(qa, noise_a); });
  const Tensor z = component("sample_z", [&] { return sample_reparam(qz, noise_z); });

  Assembly as;
  as.add(1.0, component("recon_az", [&] { return -recon_lower_bound(xt, model.decode_az(a, z, cfg.sigma_rec)); }),
         as.parts.recon_az, as.parts.w_recon_az);
  as.add(1.0, component("class_term", [&] { return -class_lower_bound(model.classify(a), labels); }),
         as.parts.class_term, as.parts.w_class_term);
  if (cfg.use_compression) {
    as.add(cfg.beta, component("club_xa", [&] { return vclub_upper_bound(approximator_view(qa, cfg), a); }),
           as.parts.club_xa, as.parts.w_club_xa);
  }
  if (cfg.use_disentanglement) {
    const double w = 1.0 + cfg.alpha;
    as.add(w, component("club_xz", [&] { return vclub_upper_bound(approximator_view(qz, cfg), z); }),
           as.parts.club_xz, as.parts.w_club_xz);
    as.add(w,
           component("recon_yz",
                     [&] { return -recon_lower_bound(xt, model.decode_yz(labels, z, cfg.sigma_rec)); }),
           as.parts.recon_yz, as.parts.w_recon_yz);
  }
  return as.finish();
}

LossResult loss_disgenib_prior(const DisGenModel& model, const Array& x, std::span<const std::size_t> labels,
                               const PriorTable& priors, const ObjectiveConfig& cfg, Rng& rng) {
  cfg.validate();
  check_batch(model, x, labels);
  priors.validate();
  if (priors.dim() != model.dims().d_a) {
    throw ContractError("prior width " + std::to_string(priors.dim()) + " differs from model d_a " +
                        std::to_string(model.dims().d_a));
  }
  const Tensor xt = Tensor::constant(x);
  const std::size_t n = x.rows();

  const DiagGaussian qz = component("enc_z", [&] { return model.encode_z(xt); });
  const Array noise_z = rng.normal_array({n, model.dims().d_z});
  const Tensor z = component("sample_z", [&] { return sample_reparam(qz, noise_z); });
  const Tensor a = Tensor::constant(priors.sample(labels, rng));

  const double w = alpha_prime(cfg.alpha);
  Assembly as;
  as.add(1.0, component("recon_az", [&] { return -recon_lower_bound(xt, model.decode_az(a, z, cfg.sigma_rec)); }),
         as.parts.recon_az, as.parts.w_recon_az);
  if (cfg.prior_bound == PriorBound::vclub) {
    as.add(w, component("club_xz", [&] { return vclub_upper_bound(approximator_view(qz, cfg), z); }),
           as.parts.club_xz, as.parts.w_club_xz);
  } else {
    as.add(w, component("kl_xz", [&] { return kl_to_unit(qz); }), as.parts.kl_xz, as.parts.w_kl_xz);
  }
  return as.finish();
}

LossResult loss_cvae(const DisGenModel& model, const Array& x, std::span<const std::size_t> labels,
                     const ObjectiveConfig& cfg, Rng& rng) {
  cfg.validate();
  check_batch(model, x, labels);
  const Tensor xt = Tensor::constant(x);
  const std::size_t n = x.rows();

  const DiagGaussian qz = component("enc_z", [&] { return model.encode_z(xt); });
  const Array noise_z = rng.normal_array({n, model.dims().d_z});
  const Tensor z = component("sample_z", [&] { return sample_reparam(qz, noise_z); });

  // The label-side decoder is the DisGenIB decoder with A := label_embed(y);
  // the compression and class terms have nothing to act on here.
  Assembly as;
  as.add(1.0,
         component("recon_yz", [&] { return -recon_lower_bound(xt, model.decode_yz(labels, z, cfg.sigma_rec)); }),
         as.parts.recon_yz, as.parts.w_recon_yz);
  as.add(alpha_prime(cfg.alpha), component("kl_xz", [&] { return kl_to_unit(qz); }), as.parts.kl_xz,
         as.parts.w_kl_xz);
  return as.finish();
}

LossResult loss_avae(const DisGenModel& model, const Array& x, std::span<const std::size_t> labels,
                     const PriorTable& priors, const ObjectiveConfig& cfg, Rng& rng) {
  cfg.validate();
  check_batch(model, x, labels);
  priors.validate();
  const std::size_t n = x.rows();
  const std::size_t d_a = model.dims().d_a;
  if (priors.dim() != d_a) {
    throw ContractError("prior width " + std::to_string(priors.dim()) + " differs from model d_a " +
                        std::to_string(d_a));
  }
  const Tensor xt = Tensor::constant(x);

  const DiagGaussian qz = component("enc_z", [&] { return model.encode_z(xt); });
  const Array noise_z = rng.normal_array({n, model.dims().d_z});
  const Tensor z = component("sample_z", [&] { return sample_reparam(qz, noise_z); });

  Array attrs = Array::zeros({n, d_a});
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= priors.classes()) {
      throw ContractError("no prior attributes for class " + std::to_string(labels[i]));
    }
    for (std::size_t k = 0; k < d_a; ++k) attrs.at(i, k) = priors.attributes.at(labels[i], k);
  }
  const Tensor a = Tensor::constant(std::move(attrs));

  Assembly as;
  as.add(1.0, component("recon_az", [&] { return -recon_lower_bound(xt, model.decode_az(a, z, cfg.sigma_rec)); }),
         as.parts.recon_az, as.parts.w_recon_az);
  as.add(alpha_prime(cfg.alpha), component("kl_xz", [&] { return kl_to_unit(qz); }), as.parts.kl_xz,
         as.parts.w_kl_xz);
  return as.finish();
}

LossResult objective_loss(const DisGenModel& model, const Array& x, std::span<const std::size_t> labels,
                          const ObjectiveConfig& cfg, const PriorTable* priors, Rng& rng) {
  if (needs_prior(cfg.mode) && priors == nullptr) {
    throw ConfigError("objective mode '" + to_string(cfg.mode) + "' needs a prior table");
  }
  switch (cfg.mode) {
    case ObjectiveMode::disgenib:
    case ObjectiveMode::disenib: return loss_disgenib(model, x, labels, cfg, rng);
    case ObjectiveMode::disgenib_prior: return loss_disgenib_prior(model, x, labels, *priors, cfg, rng);
    case ObjectiveMode::cvae: return loss_cvae(model, x, labels, cfg, rng);
    case ObjectiveMode::avae: return loss_avae(model, x, labels, *priors, cfg, rng);
  }
  throw ConfigError("unhandled objective mode");
}

}  // namespace dgib
