#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "disgenib/data.hpp"
#include "disgenib/errors.hpp"
#include "disgenib/mi_bounds.hpp"
#include "disgenib/objective.hpp"
#include "disgenib/probe.hpp"
#include "disgenib/rng.hpp"
#include "disgenib/train.hpp"

namespace dgib {
namespace {

ModelDims tiny_dims() {
  ModelDims d;
  d.d_x = 6;
  d.d_a = 3;
  d.d_z = 2;
  d.hidden = 8;
  d.layers = 1;
  d.classes = 4;
  return d;
}

struct Batch {
  Array x;
  std::vector<std::size_t> labels;
};

Batch random_batch(std::size_t n, std::size_t d_x, std::size_t classes, std::uint64_t seed) {
  Rng rng(seed);
  Batch b{rng.normal_array({n, d_x}), std::vector<std::size_t>(n)};
  for (auto& y : b.labels) y = rng.index(classes);
  return b;
}

void zero_decoders(DisGenModel& m) {
  auto snap = m.snapshot();
  for (auto& p : snap)
    if (p.name.rfind("dec_", 0) == 0)
      for (double& v : p.value.data()) v = 0.0;
  m.load(snap);
}

double standard_density(const Array& x) {
  double s = 0.0;
  for (double v : x.data()) s += -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * v * v;
  return s / x.rows();
}

TEST(AlphaPrime, PublishedValues) {
  EXPECT_EQ(alpha_prime(0.0), 0.5);
  EXPECT_EQ(alpha_prime(1.0), 2.0 / 3.0);
}

TEST(AlphaPrime, IncreasesTowardOne) {
  double prev = alpha_prime(0.0);
  for (int i = 1; i <= 100; ++i) {
    const double v = alpha_prime(0.5 * i);
    EXPECT_GT(v, prev);
    EXPECT_LT(v, 1.0);
    prev = v;
  }
  EXPECT_GT(alpha_prime(1e9), 0.999999);
}

TEST(AlphaPrime, NegativeAlphaIsConfigError) { EXPECT_THROW(alpha_prime(-0.1), ConfigError); }

TEST(ObjectiveConfig, ValidatesRanges) {
  ObjectiveConfig c;
  c.sigma_rec = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ObjectiveConfig{};
  c.beta = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ObjectiveConfig{};
  c.approximator_steps = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_objective_mode("disgenib-prior"), ObjectiveMode::disgenib_prior);
  EXPECT_THROW(parse_objective_mode("vae"), ConfigError);
}

TEST(LossDisgenib, TotalIsTheWeightedSumOfComponents) {
  const DisGenModel m = DisGenModel::init(tiny_dims(), 1);
  const Batch b = random_batch(8, 6, 4, 1);
  ObjectiveConfig cfg;
  cfg.alpha = 1.5;
  cfg.beta = 0.3;
  Rng rng(2);
  const LossResult r = loss_disgenib(m, b.x, b.labels, cfg, rng);
  const LossBreakdown& p = r.breakdown;
  EXPECT_NEAR(p.total, p.recompute_total(), 1e-10);
  EXPECT_NEAR(p.total, r.total.item(), 0.0);
  EXPECT_EQ(p.w_club_xa, 0.3);
  EXPECT_EQ(p.w_club_xz, 2.5);
  EXPECT_EQ(p.w_recon_yz, 2.5);
  EXPECT_NEAR(p.total,
              p.recon_az + p.class_term + 0.3 * p.club_xa + 2.5 * (p.club_xz + p.recon_yz), 1e-10);
}

TEST(LossDisgenib, NoRegularizerAblationDropsBothTerms) {
  const DisGenModel m = DisGenModel::init(tiny_dims(), 1);
  const Batch b = random_batch(8, 6, 4, 1);
  ObjectiveConfig cfg;
  cfg.use_compression = false;
  cfg.use_disentanglement = false;
  Rng rng(2);
  const LossBreakdown p = loss_disgenib(m, b.x, b.labels, cfg, rng).breakdown;
  EXPECT_EQ(p.w_club_xa, 0.0);
  EXPECT_EQ(p.w_club_xz, 0.0);
  EXPECT_EQ(p.w_recon_yz, 0.0);
  EXPECT_NEAR(p.total, p.recon_az + p.class_term, 1e-12);
}

TEST(LossDisgenib, ZeroDecodersGiveStandardDensity) {
  DisGenModel m = DisGenModel::init(tiny_dims(), 3);
  zero_decoders(m);
  const Batch b = random_batch(16, 6, 4, 3);
  ObjectiveConfig cfg;
  cfg.sigma_rec = 1.0;
  Rng rng(3);
  const LossBreakdown p = loss_disgenib(m, b.x, b.labels, cfg, rng).breakdown;
  EXPECT_NEAR(-p.recon_az, standard_density(b.x), 1e-12);
  EXPECT_NEAR(-p.recon_yz, standard_density(b.x), 1e-12);
}

TEST(LossDisgenib, SameRngStateSameValue) {
  const DisGenModel m = DisGenModel::init(tiny_dims(), 4);
  const Batch b = random_batch(8, 6, 4, 4);
  Rng r1(9), r2(9);
  EXPECT_EQ(loss_disgenib(m, b.x, b.labels, ObjectiveConfig{}, r1).breakdown.total,
            loss_disgenib(m, b.x, b.labels, ObjectiveConfig{}, r2).breakdown.total);
}

TEST(LossDisgenib, SingleClassBatchIsAccepted) {
  const DisGenModel m = DisGenModel::init(tiny_dims(), 4);
  Batch b = random_batch(5, 6, 4, 5);
  for (auto& y : b.labels) y = 2;
  Rng rng(1);
  EXPECT_NO_THROW(loss_disgenib(m, b.x, b.labels, ObjectiveConfig{}, rng));
}

TEST(LossDisgenib, StopGradientKeepsApproximatorRoleOutOfTheGradient) {
  // With the stop-gradient on, the vCLUB term only reaches enc_z through z,
  // so its gradient differs from the full-gradient version.
  const DisGenModel m = DisGenModel::init(tiny_dims(), 6);
  const Batch b = random_batch(8, 6, 4, 6);
  auto grad_of = [&](bool stop) {
    ObjectiveConfig cfg;
    cfg.stop_gradient = stop;
    auto params = m.parameters();
    zero_grads(params);
    Rng rng(7);
    backward(loss_disgenib(m, b.x, b.labels, cfg, rng).total);
    Array g = params.front().grad();  // enc_a first layer
    zero_grads(params);
    return g;
  };
  EXPECT_NE(grad_of(true), grad_of(false));
}

TEST(LossPrior, ZeroSigmaConditionsOnAttributes) {
  const DisGenModel m = DisGenModel::init(tiny_dims(), 7);
  const Batch b = random_batch(6, 6, 4, 7);
  Rng arng(1);
  const PriorTable t{arng.normal_array({4, 3}), 0.0};
  ObjectiveConfig cfg;
  cfg.mode = ObjectiveMode::disgenib_prior;
  cfg.alpha = 0.0;
  Rng rng(3);
  const LossBreakdown p = loss_disgenib_prior(m, b.x, b.labels, t, cfg, rng).breakdown;
  EXPECT_EQ(p.w_kl_xz, 0.5);
  EXPECT_EQ(p.w_class_term, 0.0);
  EXPECT_NEAR(p.total, p.recon_az + 0.5 * p.kl_xz, 1e-12);
}

TEST(LossPrior, MissingClassIsContractError) {
  const DisGenModel m = DisGenModel::init(tiny_dims(), 7);
  Batch b = random_batch(3, 6, 4, 7);
  b.labels = {0, 1, 3};
  const PriorTable t{Array::zeros({3, 3}), 0.1};
  Rng rng(3);
  EXPECT_THROW(loss_disgenib_prior(m, b.x, b.labels, t, ObjectiveConfig{}, rng), ContractError);
}

TEST(LossPrior, VclubBoundVariant) {
  const DisGenModel m = DisGenModel::init(tiny_dims(), 7);
  const Batch b = random_batch(6, 6, 4, 8);
  const PriorTable t{Array::zeros({4, 3}), 0.2};
  ObjectiveConfig cfg;
  cfg.mode = ObjectiveMode::disgenib_prior;
  cfg.prior_bound = PriorBound::vclub;
  Rng rng(3);
  const LossBreakdown p = loss_disgenib_prior(m, b.x, b.labels, t, cfg, rng).breakdown;
  EXPECT_EQ(p.w_kl_xz, 0.0);
  EXPECT_EQ(p.w_club_xz, alpha_prime(cfg.alpha));
  EXPECT_NEAR(p.total, p.recompute_total(), 1e-10);
}

// Conditional-VAE objective assembled from raw model pieces: decoder on
// (label embedding, z) plus alpha' times the KL of q(z|x) to N(0, I).
double cvae_reference(const DisGenModel& m, const Batch& b, double alpha, double sigma_rec, Rng& rng) {
  const Tensor x = Tensor::constant(b.x);
  const DiagGaussian qz = m.encode_z(x);
  const Array noise = rng.normal_array({b.x.rows(), m.dims().d_z});
  const Tensor z = qz.mu() + exp(scale(qz.log_var(), 0.5)) * Tensor::constant(noise);
  const Tensor mean_x = m.decode_yz_mean(b.labels, z);
  const double var = sigma_rec * sigma_rec;
  double ll = 0.0;
  for (std::size_t i = 0; i < b.x.rows(); ++i)
    for (std::size_t k = 0; k < b.x.cols(); ++k) {
      const double d = b.x.at(i, k) - mean_x.value().at(i, k);
      ll += -0.5 * std::log(2.0 * std::numbers::pi * var) - d * d / (2.0 * var);
    }
  double kl = 0.0;
  for (std::size_t i = 0; i < qz.mu().value().size(); ++i) {
    const double mu = qz.mu().value()[i], lv = qz.log_var().value()[i];
    kl += 0.5 * (std::exp(lv) + mu * mu - 1.0 - lv);
  }
  const double n = static_cast<double>(b.x.rows());
  return -ll / n + (1.0 + alpha) / (2.0 + alpha) * kl / n;
}

TEST(LossCvae, EqualsIndependentAssembly) {
  const DisGenModel m = DisGenModel::init(tiny_dims(), 8);
  for (std::uint64_t t = 0; t < 50; ++t) {
    const Batch b = random_batch(2 + t % 9, 6, 4, 100 + t);
    ObjectiveConfig cfg;
    cfg.mode = ObjectiveMode::cvae;
    cfg.alpha = 0.1 * t;
    cfg.sigma_rec = 0.4 + 0.02 * t;
    Rng r1(t), r2(t);
    EXPECT_NEAR(loss_cvae(m, b.x, b.labels, cfg, r1).breakdown.total,
                cvae_reference(m, b, cfg.alpha, cfg.sigma_rec, r2), 1e-10)
        << "batch " << t;
  }
}

TEST(LossCvae, EncoderAIsOutOfTheGraph) {
  const DisGenModel m = DisGenModel::init(tiny_dims(), 9);
  const Batch b = random_batch(4, 6, 4, 9);
  ObjectiveConfig cfg;
  cfg.mode = ObjectiveMode::cvae;
  Rng rng(1);
  auto params = m.parameters();
  zero_grads(params);
  backward(loss_cvae(m, b.x, b.labels, cfg, rng).total);
  for (const auto& p : m.named_parameters()) {
    if (p.name.rfind("enc_a", 0) != 0) continue;
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad().data()) EXPECT_EQ(g, 0.0) << p.name;
  }
  zero_grads(params);
}

TEST(LossAvae, EqualsPriorModeWithZeroSigma) {
  const DisGenModel m = DisGenModel::init(tiny_dims(), 10);
  Rng arng(10);
  const PriorTable t{arng.normal_array({4, 3}), 0.0};
  for (std::uint64_t i = 0; i < 50; ++i) {
    const Batch b = random_batch(3 + i % 7, 6, 4, 200 + i);
    ObjectiveConfig cfg;
    cfg.alpha = 0.2 * i;
    Rng r1(i), r2(i);
    cfg.mode = ObjectiveMode::avae;
    const double avae = loss_avae(m, b.x, b.labels, t, cfg, r1).breakdown.total;
    cfg.mode = ObjectiveMode::disgenib_prior;
    const double prior = loss_disgenib_prior(m, b.x, b.labels, t, cfg, r2).breakdown.total;
    EXPECT_NEAR(avae, prior, 1e-10) << "batch " << i;
  }
}

TEST(LossAvae, DeterministicPerSeed) {
  const DisGenModel m = DisGenModel::init(tiny_dims(), 10);
  const PriorTable t{Array::zeros({4, 3}), 0.0};
  const Batch b = random_batch(5, 6, 4, 11);
  Rng r1(4), r2(4);
  EXPECT_EQ(loss_avae(m, b.x, b.labels, t, ObjectiveConfig{}, r1).breakdown.total,
            loss_avae(m, b.x, b.labels, t, ObjectiveConfig{}, r2).breakdown.total);
}

TEST(ConfigureDisenib, SetsAlphaZeroBetaOne) {
  const ObjectiveConfig c = configure_disenib(ObjectiveConfig{});
  EXPECT_EQ(c.alpha, 0.0);
  EXPECT_EQ(c.beta, 1.0);
  EXPECT_TRUE(c.disenib);
  EXPECT_EQ(alpha_prime(c.alpha), 0.5);
  EXPECT_EQ(to_json(c).at("disenib"), true);
}

TEST(ObjectiveLoss, PriorModesNeedATable) {
  const DisGenModel m = DisGenModel::init(tiny_dims(), 12);
  const Batch b = random_batch(4, 6, 4, 12);
  ObjectiveConfig cfg;
  cfg.mode = ObjectiveMode::avae;
  Rng rng(1);
  EXPECT_THROW(objective_loss(m, b.x, b.labels, cfg, nullptr, rng), ConfigError);
}

TEST(ObjectiveLoss, NonFiniteInputIsNumericError) {
  const DisGenModel m = DisGenModel::init(tiny_dims(), 12);
  Batch b = random_batch(4, 6, 4, 12);
  b.x[0] = std::numeric_limits<double>::infinity();
  Rng rng(1);
  EXPECT_THROW(loss_disgenib(m, b.x, b.labels, ObjectiveConfig{}, rng), NumericError);
}

TEST(ObjectiveLoss, OverflowNamesTheComponent) {
  DisGenModel m = DisGenModel::init(tiny_dims(), 12);
  auto snap = m.snapshot();
  for (auto& p : snap)
    if (p.name.rfind("dec_az", 0) == 0)
      for (double& v : p.value.data()) v = 1e300;
  m.load(snap);
  const Batch b = random_batch(4, 6, 4, 12);
  Rng rng(1);
  try {
    loss_disgenib(m, b.x, b.labels, ObjectiveConfig{}, rng);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("loss component 'recon_az'"), std::string::npos) << e.what();
  }
}

// ---- training loop ------------------------------------------------------

struct Fixture {
  Dataset base;
  Dataset novel;
};

Fixture small_fixture(std::uint64_t seed) {
  SynthConfig sc;
  sc.classes = 8;
  sc.n_per_class = 40;
  sc.d_x = 16;
  sc.d_a = 4;
  sc.d_z = 4;
  auto split = split_base_novel(synth_make(sc, seed), last_classes(8, 3));
  return {std::move(split.base), std::move(split.novel)};
}

ModelDims dims_for(const Dataset& ds) {
  ModelDims d;
  d.d_x = ds.dim();
  d.d_a = 4;
  d.d_z = 4;
  d.hidden = 32;
  d.layers = 2;
  d.classes = ds.classes();
  return d;
}

TEST(Train, ZeroEpochsLeavesModelUnchanged) {
  const Fixture f = small_fixture(0);
  DisGenModel m = DisGenModel::init(dims_for(f.base), 0);
  const auto before = m.snapshot();
  Trainer t(m, f.base, ObjectiveConfig{}, TrainConfig{}, 0);
  EXPECT_TRUE(t.run(0).empty());
  const auto after = m.snapshot();
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i].value, after[i].value);
}

TEST(Train, SameSeedSameTrace) {
  const Fixture f = small_fixture(1);
  auto run = [&] {
    DisGenModel m = DisGenModel::init(dims_for(f.base), 1);
    ObjectiveConfig oc;
    oc.stop_gradient = false;
    Trainer t(m, f.base, oc, TrainConfig{}, 1);
    std::vector<double> totals;
    for (const auto& r : t.run(3)) totals.push_back(r.loss.total);
    return std::make_pair(totals, m.snapshot().front().value);
  };
  EXPECT_EQ(run(), run());
}

TEST(Train, TraceLineCarriesEveryComponent) {
  EpochRecord rec;
  rec.epoch = 2;
  rec.loss.total = 1.5;
  const auto j = trace_line(rec, 7, {{"k", 1}});
  for (const char* key : {"epoch", "seed", "config", "total", "recon_az", "class_term", "club_xa", "club_xz", "kl_xz",
                          "recon_yz", "wall_clock_s"})
    EXPECT_TRUE(j.contains(key)) << key;
  EXPECT_EQ(j.at("seed"), 7);
}

TEST(Train, EveryModeRunsAndStaysFinite) {
  const Fixture f = small_fixture(2);
  ModelDims d = dims_for(f.base);
  d.d_a = f.base.attributes->cols();
  const PriorTable priors{*f.base.attributes, 0.1};
  for (auto mode : {ObjectiveMode::disgenib, ObjectiveMode::disgenib_prior, ObjectiveMode::cvae,
                    ObjectiveMode::avae, ObjectiveMode::disenib}) {
    DisGenModel m = DisGenModel::init(d, 2);
    ObjectiveConfig oc;
    if (mode == ObjectiveMode::disenib) oc = configure_disenib(oc);
    oc.mode = mode;
    Trainer t(m, f.base, oc, TrainConfig{}, 2, priors);
    const auto recs = t.run(2);
    ASSERT_EQ(recs.size(), 2u);
    EXPECT_TRUE(std::isfinite(recs.back().loss.total)) << to_string(mode);
  }
}

TEST(Train, DisenibConfigurationTrainsAllFiveNetworks) {
  const Fixture f = small_fixture(3);
  DisGenModel m = DisGenModel::init(dims_for(f.base), 3);
  const auto before = m.snapshot();
  Trainer t(m, f.base, configure_disenib(ObjectiveConfig{}), TrainConfig{}, 3);
  t.run(1);
  const auto after = m.snapshot();
  for (const char* prefix : {"enc_a", "enc_z", "dec_az", "dec_yz", "classifier"}) {
    bool moved = false;
    for (std::size_t i = 0; i < before.size(); ++i)
      if (before[i].name.rfind(prefix, 0) == 0 && before[i].value != after[i].value) moved = true;
    EXPECT_TRUE(moved) << prefix;
  }
}

TEST(Train, LossFallsOverTwentyEpochsOnDefaultFixture) {
  const Dataset ds = synth_make(SynthConfig{}, 0);
  const auto split = split_base_novel(ds, last_classes(ds.classes(), 5));
  ModelDims d;
  d.d_x = ds.dim();
  d.classes = split.base.classes();
  DisGenModel m = DisGenModel::init(d, 0);
  Trainer t(m, split.base, ObjectiveConfig{}, TrainConfig{}, 0);
  const auto recs = t.run(20);
  EXPECT_LT(recs[19].loss.total, recs[0].loss.total);
}

TEST(Train, ZProbeFallsWithTraining) {
  const Dataset ds = synth_make(SynthConfig{}, 0);
  const auto split = split_base_novel(ds, last_classes(ds.classes(), 5));
  ModelDims d;
  d.d_x = ds.dim();
  d.d_a = 8;
  d.d_z = 8;
  d.classes = split.base.classes();
  DisGenModel m = DisGenModel::init(d, 0);
  const double z0 = probe_disentanglement(m, split.base, ProbeConfig{}, 0).acc_from_z;
  ObjectiveConfig oc;
  oc.stop_gradient = false;
  Trainer t(m, split.base, oc, TrainConfig{}, 0);
  t.run(20);
  EXPECT_LT(probe_disentanglement(m, split.base, ProbeConfig{}, 0).acc_from_z, z0);
}

TEST(Train, ResumeReproducesTheNextEpoch) {
  const Fixture f = small_fixture(4);
  ObjectiveConfig oc;
  oc.stop_gradient = false;
  DisGenModel full = DisGenModel::init(dims_for(f.base), 4);
  Trainer tf(full, f.base, oc, TrainConfig{}, 4);
  tf.run(2);
  const double third = tf.run_epoch().loss.total;

  DisGenModel first = DisGenModel::init(dims_for(f.base), 4);
  Trainer t1(first, f.base, oc, TrainConfig{}, 4);
  t1.run(2);
  DisGenModel resumed = DisGenModel::init(dims_for(f.base), 99);
  resumed.load(first.snapshot());
  Trainer t2(resumed, f.base, oc, TrainConfig{}, 4);
  t2.restore_state(t1.state_meta(), t1.state_arrays());
  EXPECT_EQ(t2.epochs_done(), 2u);
  EXPECT_EQ(t2.run_epoch().loss.total, third);
}

}  // namespace
}  // namespace dgib
