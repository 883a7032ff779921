#include "disgenib/probe.hpp"

#include <cmath>

#include "disgenib/errors.hpp"
#include "disgenib/gauss.hpp"
#include "disgenib/nn.hpp"
#include "disgenib/optim.hpp"
#include "disgenib/rng.hpp"

namespace dgib {

nlohmann::json to_json(const ProbeResult& r) {
  return {{"acc_from_A", r.acc_from_a}, {"acc_from_Z", r.acc_from_z}, {"chance", r.chance}};
}

namespace {

Array take_rows(const Array& m, std::span<const std::size_t> rows) {
  Array out = Array::zeros({rows.size(), m.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(m.row(rows[i]).begin(), m.cols(), out.row(i).begin());
  return out;
}

}  // namespace

double linear_probe_accuracy(const Array& features, std::span<const std::size_t> labels, std::size_t classes,
                             const ProbeConfig& cfg, std::uint64_t seed) {
  if (features.rank() != 2 || features.rows() != labels.size()) {
    throw ShapeError("probe features " + shape_to_string(features.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) throw ConfigError("probe train_fraction must be in (0,1)");
  Rng rng(seed);
  const Rng split_rng = rng.substream("split");
  Rng shuffle = split_rng;

  // Stratified split: shuffle each class, first train_fraction to training.
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw ContractError("probe label out of range");
    by_class[labels[i]].push_back(i);
  }
  std::vector<std::size_t> train_rows, test_rows;
  for (auto& rows : by_class) {
    for (std::size_t i = rows.size(); i > 1; --i) std::swap(rows[i - 1], rows[shuffle.index(i)]);
    const auto n_train = static_cast<std::size_t>(std::lround(cfg.train_fraction * static_cast<double>(rows.size())));
    for (std::size_t i = 0; i < rows.size(); ++i) (i < n_train ? train_rows : test_rows).push_back(rows[i]);
  }
  if (train_rows.empty() || test_rows.empty()) throw ContractError("probe split left an empty side");

  // Standardize with training statistics.
  const std::size_t d = features.cols();
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (std::size_t r : train_rows)
    for (std::size_t k = 0; k < d; ++k) mu[k] += features.at(r, k);
  for (double& m : mu) m /= static_cast<double>(train_rows.size());
  for (std::size_t r : train_rows)
    for (std::size_t k = 0; k < d; ++k) sd[k] += (features.at(r, k) - mu[k]) * (features.at(r, k) - mu[k]);
  for (double& s : sd) s = std::sqrt(s / static_cast<double>(train_rows.size())) + 1e-8;
  auto standardize = [&](Array m) {
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t k = 0; k < d; ++k) m.at(r, k) = (m.at(r, k) - mu[k]) / sd[k];
    return m;
  };
  const Tensor x_train = Tensor::constant(standardize(take_rows(features, train_rows)));
  const Array x_test = standardize(take_rows(features, test_rows));
  std::vector<std::size_t> y_train, y_test;
  for (std::size_t r : train_rows) y_train.push_back(labels[r]);
  for (std::size_t r : test_rows) y_test.push_back(labels[r]);

  Rng init = rng.substream("init");
  Linear head(d, classes, init);
  std::vector<NamedTensor> named;
  head.collect("probe", named);
  std::vector<Tensor> params;
  for (auto& nt : named) params.push_back(nt.tensor);
  AdamConfig ac;
  ac.lr = cfg.lr;
  AdamState state(ac, params);
  for (std::size_t s = 0; s < cfg.steps; ++s) {
    zero_grads(params);
    const Tensor loss = mean(softmax_cross_entropy(head.forward(x_train), y_train));
    backward(loss);
    adam_step(params, state);
  }
  zero_grads(params);

  NoGradGuard guard;
  const Array logits = head.forward(Tensor::constant(x_test)).value();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < y_test.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (logits.at(i, c) > logits.at(i, best)) best = c;
    hits += best == y_test[i];
  }
  return static_cast<double>(hits) / static_cast<double>(y_test.size());
}

ProbeResult probe_disentanglement(const DisGenModel& model, const Dataset& ds, const ProbeConfig& cfg,
                                  std::uint64_t seed) {
  ds.validate();
  if (ds.dim() != model.dims().d_x) {
    throw ContractError("dataset d_x " + std::to_string(ds.dim()) + " differs from model d_x " +
                        std::to_string(model.dims().d_x));
  }
  Array a_mean, z_mean;
  {
    NoGradGuard guard;
    const Tensor x = Tensor::constant(ds.features);
    a_mean = model.encode_a(x).mu().value();
    z_mean = model.encode_z(x).mu().value();
  }
  ProbeResult r;
  // Same seed for both probes: identical splits and head initialization.
  r.acc_from_a = linear_probe_accuracy(a_mean, ds.labels, ds.classes(), cfg, seed);
  r.acc_from_z = linear_probe_accuracy(z_mean, ds.labels, ds.classes(), cfg, seed);
  r.chance = 1.0 / static_cast<double>(ds.classes());
  return r;
}

}  // namespace dgib
