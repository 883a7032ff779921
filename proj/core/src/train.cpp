#include "disgenib/train.hpp"

#include <chrono>
#include <cmath>

#include "disgenib/errors.hpp"
#include "disgenib/gauss.hpp"
#include "disgenib/mi_bounds.hpp"
#include "disgenib/rng.hpp"

namespace dgib {

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("train.batch_size must be >= 2 (vCLUB needs pairs)");
  if (!(adam.lr > 0.0) || !std::isfinite(adam.lr)) throw ConfigError("train.lr must be > 0");
  if (!(approximator_lr >= 0.0) || !std::isfinite(approximator_lr)) {
    throw ConfigError("train.approximator_lr must be >= 0");
  }
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"batch_size", cfg.batch_size},
          {"lr", cfg.adam.lr},
          {"beta1", cfg.adam.beta1},
          {"beta2", cfg.adam.beta2},
          {"eps", cfg.adam.eps},
          {"approximator_lr", cfg.approximator_lr}};
}

nlohmann::json trace_line(const EpochRecord& rec, std::uint64_t seed, const nlohmann::json& config_echo) {
  nlohmann::json j = to_json(rec.loss);
  j["epoch"] = rec.epoch;
  j["batches"] = rec.batches;
  j["approximator_nll"] = rec.approximator_nll;
  j["seed"] = seed;
  j["config"] = config_echo;
  j["wall_clock_s"] = rec.wall_clock_s;
  return j;
}

namespace {

// Parameter groups each mode's objective reaches.
bool trains(const ObjectiveConfig& cfg, const std::string& name) {
  auto has = [&](const char* prefix) { return name.rfind(prefix, 0) == 0; };
  switch (cfg.mode) {
    case ObjectiveMode::disgenib:
    case ObjectiveMode::disenib:
      if (has("dec_yz") || has("label_embed")) return cfg.use_disentanglement;
      return true;
    case ObjectiveMode::disgenib_prior:
    case ObjectiveMode::avae: return has("enc_z") || has("dec_az");
    case ObjectiveMode::cvae: return has("enc_z") || has("dec_yz") || has("label_embed");
  }
  return false;
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b) {
  acc.total += b.total;
  acc.recon_az += b.recon_az;
  acc.class_term += b.class_term;
  acc.club_xa += b.club_xa;
  acc.club_xz += b.club_xz;
  acc.kl_xz += b.kl_xz;
  acc.recon_yz += b.recon_yz;
  acc.w_recon_az = b.w_recon_az;
  acc.w_class_term = b.w_class_term;
  acc.w_club_xa = b.w_club_xa;
  acc.w_club_xz = b.w_club_xz;
  acc.w_kl_xz = b.w_kl_xz;
  acc.w_recon_yz = b.w_recon_yz;
}

void divide(LossBreakdown& acc, double n) {
  for (double* v : {&acc.total, &acc.recon_az, &acc.class_term, &acc.club_xa, &acc.club_xz, &acc.kl_xz,
                    &acc.recon_yz}) {
    *v /= n;
  }
}

}  // namespace

Trainer::Trainer(DisGenModel& model, const Dataset& data, ObjectiveConfig objective, TrainConfig train,
                 std::uint64_t seed, std::optional<PriorTable> priors)
    : model_(model),
      data_(data),
      objective_(objective),
      train_(train),
      seed_(seed),
      priors_(std::move(priors)) {
  objective_.validate();
  train_.validate();
  data_.validate();
  if (data_.dim() != model_.dims().d_x) {
    throw ContractError("dataset d_x " + std::to_string(data_.dim()) + " differs from model d_x " +
                        std::to_string(model_.dims().d_x));
  }
  if (data_.classes() > model_.dims().classes) {
    throw ContractError("dataset has " + std::to_string(data_.classes()) + " classes, model was built for " +
                        std::to_string(model_.dims().classes));
  }
  if (needs_prior(objective_.mode)) {
    if (!priors_) throw ConfigError("objective mode '" + to_string(objective_.mode) + "' needs a prior table");
    priors_->validate();
  }
  for (const auto& np : model_.named_parameters()) {
    if (trains(objective_, np.name)) params_.push_back(np.tensor);
  }
  main_ = AdamState(train_.adam, params_);
  AdamConfig approx = train_.adam;
  approx.lr = train_.approximator_lr;
  const auto pa = model_.enc_a().parameters();
  const auto pz = model_.enc_z().parameters();
  approx_a_ = AdamState(approx, pa);
  approx_z_ = AdamState(approx, pz);
}

bool Trainer::uses_approx_a() const {
  return (objective_.mode == ObjectiveMode::disgenib || objective_.mode == ObjectiveMode::disenib) &&
         objective_.use_compression && train_.approximator_lr > 0.0;
}

bool Trainer::uses_approx_z() const {
  if (train_.approximator_lr <= 0.0) return false;
  switch (objective_.mode) {
    case ObjectiveMode::disgenib:
    case ObjectiveMode::disenib: return objective_.use_disentanglement;
    case ObjectiveMode::disgenib_prior: return objective_.prior_bound == PriorBound::vclub;
    default: return false;
  }
}

EpochRecord Trainer::run_epoch() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t k = epoch_ + 1;
  Rng rng = Rng(seed_).substream("epoch", k);

  const std::size_t n = data_.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

  EpochRecord rec;
  rec.epoch = k;
  double approx_nll = 0.0;
  std::size_t approx_count = 0;
  const PriorTable* priors = priors_ ? &*priors_ : nullptr;

  for (std::size_t start = 0; start < n; start += train_.batch_size) {
    const std::size_t end = std::min(n, start + train_.batch_size);
    if (end - start < 2) break;  // a lone trailing row has no vCLUB pairs
    const std::span<const std::size_t> rows(order.data() + start, end - start);
    const Array x = data_.gather(rows);
    std::vector<std::size_t> labels(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) labels[i] = data_.labels[rows[i]];

    for (std::size_t s = 0; s < objective_.approximator_steps; ++s) {
      // Each approximator is fitted to fresh samples of its own representation.
      if (uses_approx_a()) {
        Array samples;
        {
          NoGradGuard guard;
          const DiagGaussian q = model_.encode_a(Tensor::constant(x));
          samples = sample_reparam(q, rng.normal_array(q.mu().shape())).value();
        }
        approx_nll += approximator_ll_step(model_.enc_a(), x, samples, approx_a_);
        ++approx_count;
      }
      if (uses_approx_z()) {
        Array samples;
        {
          NoGradGuard guard;
          const DiagGaussian q = model_.encode_z(Tensor::constant(x));
          samples = sample_reparam(q, rng.normal_array(q.mu().shape())).value();
        }
        approx_nll += approximator_ll_step(model_.enc_z(), x, samples, approx_z_);
        ++approx_count;
      }
    }

    zero_grads(params_);
    LossResult loss = objective_loss(model_, x, labels, objective_, priors, rng);
    backward(loss.total);
    adam_step(params_, main_);
    zero_grads(params_);

    accumulate(rec.loss, loss.breakdown);
    ++rec.batches;
  }
  if (rec.batches > 0) divide(rec.loss, static_cast<double>(rec.batches));
  if (approx_count > 0) rec.approximator_nll = approx_nll / static_cast<double>(approx_count);
  if (!std::isfinite(rec.loss.total)) throw NumericError("loss component 'total': non-finite epoch mean");
  epoch_ = k;
  rec.wall_clock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rec;
}

std::vector<EpochRecord> Trainer::run(std::size_t epochs, const std::function<void(const EpochRecord&)>& on_epoch) {
  std::vector<EpochRecord> trace;
  trace.reserve(epochs);
  for (std::size_t e = 0; e < epochs; ++e) {
    trace.push_back(run_epoch());
    if (on_epoch) on_epoch(trace.back());
  }
  return trace;
}

namespace {

void append_state(const std::string& tag, const AdamState& st, const std::vector<std::string>& names,
                  std::vector<NamedArray>& out) {
  for (std::size_t i = 0; i < st.size(); ++i) {
    out.push_back({"optim/" + tag + "/m/" + names[i], st.first_moments()[i]});
    out.push_back({"optim/" + tag + "/v/" + names[i], st.second_moments()[i]});
  }
}

void restore_one(const std::string& tag, AdamState& st, const std::vector<std::string>& names, std::size_t step,
                 const std::vector<NamedArray>& arrays) {
  auto find = [&](const std::string& name) -> const Array& {
    for (const auto& a : arrays) {
      if (a.name == name) return a.value;
    }
    throw FormatError("checkpoint lacks optimizer array '" + name + "'");
  };
  std::vector<Array> first, second;
  for (const auto& n : names) {
    first.push_back(find("optim/" + tag + "/m/" + n));
    second.push_back(find("optim/" + tag + "/v/" + n));
  }
  st.restore(step, std::move(first), std::move(second));
}

std::vector<std::string> names_with_prefix(const DisGenModel& model, const std::string& prefix) {
  std::vector<std::string> names;
  for (const auto& np : model.named_parameters()) {
    if (np.name.rfind(prefix, 0) == 0) names.push_back(np.name);
  }
  return names;
}

}  // namespace

std::vector<NamedArray> Trainer::state_arrays() const {
  std::vector<std::string> main_names;
  for (const auto& np : model_.named_parameters()) {
    if (trains(objective_, np.name)) main_names.push_back(np.name);
  }
  std::vector<NamedArray> out;
  append_state("main", main_, main_names, out);
  append_state("approx_a", approx_a_, names_with_prefix(model_, "enc_a"), out);
  append_state("approx_z", approx_z_, names_with_prefix(model_, "enc_z"), out);
  return out;
}

nlohmann::json Trainer::state_meta() const {
  return {{"epoch", epoch_},
          {"steps", {{"main", main_.step()}, {"approx_a", approx_a_.step()}, {"approx_z", approx_z_.step()}}}};
}

void Trainer::restore_state(const nlohmann::json& meta, const std::vector<NamedArray>& arrays) {
  try {
    std::vector<std::string> main_names;
    for (const auto& np : model_.named_parameters()) {
      if (trains(objective_, np.name)) main_names.push_back(np.name);
    }
    const auto& steps = meta.at("steps");
    restore_one("main", main_, main_names, steps.at("main").get<std::size_t>(), arrays);
    restore_one("approx_a", approx_a_, names_with_prefix(model_, "enc_a"), steps.at("approx_a").get<std::size_t>(),
                arrays);
    restore_one("approx_z", approx_z_, names_with_prefix(model_, "enc_z"), steps.at("approx_z").get<std::size_t>(),
                arrays);
    epoch_ = meta.at("epoch").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("trainer state metadata: ") + e.what());
  }
}

std::vector<EpochRecord> train(DisGenModel& model, const Dataset& data, const ObjectiveConfig& objective,
                               const TrainConfig& cfg, std::size_t epochs, std::uint64_t seed,
                               const std::optional<PriorTable>& priors) {
  Trainer trainer(model, data, objective, cfg, seed, priors);
  return trainer.run(epochs);
}

}  // namespace dgib
