#include "selfcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "disgenib/discrete.hpp"
#include "disgenib/errors.hpp"
#include "disgenib/gauss.hpp"
#include "disgenib/mi_bounds.hpp"
#include "disgenib/model.hpp"
#include "disgenib/nn.hpp"
#include "disgenib/objective.hpp"
#include "disgenib/rng.hpp"

namespace dgib::cli {

using nlohmann::json;

Mutation parse_mutation(const std::string& name) {
  if (name == "none") return Mutation::none;
  if (name == "vclub-sign") return Mutation::vclub_sign;
  throw ConfigError("unknown mutation '" + name + "'");
}

const std::vector<std::string>& selfcheck_suites() {
  static const std::vector<std::string> names{"gradients", "kl-oracle",  "chain-identity", "nuisance-slack",
                                              "vclub-gaussian", "reductions", "alpha-prime"};
  return names;
}

namespace {

constexpr double kGradTol = 1e-4;

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

void fail(SuiteReport& r, json detail) {
  r.passed = false;
  r.failures.push_back(std::move(detail));
}

// ---- gradients ------------------------------------------------------------

// Inputs for one primitive. Values are kept away from kinks (relu at 0) and
// outside the log domain's edge.
std::vector<Array> primitive_inputs(Primitive op, Rng& rng, PrimitiveArgs& args) {
  auto normal = [&](Shape s) { return rng.normal_array(std::move(s)); };
  switch (op) {
    case Primitive::matmul: return {normal({4, 3}), normal({3, 5})};
    case Primitive::add:
    case Primitive::sub:
    case Primitive::mul: return {normal({4, 3}), normal({1, 3})};  // exercises broadcasting
    case Primitive::scalar_mul: args.scalar = -1.7; return {normal({4, 3})};
    case Primitive::relu: {
      Array a = normal({4, 3});
      for (double& v : a.data()) v = v >= 0 ? v + 0.1 : v - 0.1;
      return {a};
    }
    case Primitive::log: return {rng.uniform_array({4, 3}, 0.5, 2.0)};
    case Primitive::concat_last: return {normal({4, 2}), normal({4, 3})};
    case Primitive::slice_last: args.begin = 1; args.end = 3; return {normal({4, 5})};
    case Primitive::softmax_cross_entropy: args.labels = {0, 2, 1, 2}; return {normal({4, 3})};
    default: return {normal({4, 3})};
  }
}

void gradient_suite(SuiteReport& r) {
  Rng rng(20240501);
  double worst = 0.0;
  for (Primitive op : all_primitives()) {
    PrimitiveArgs args;
    Rng local = rng.substream(primitive_name(op));
    std::vector<Tensor> params;
    for (Array& a : primitive_inputs(op, local, args)) params.push_back(Tensor::parameter(std::move(a)));
    // A fixed random projection keeps every output coordinate in play.
    const Shape out_shape = apply_primitive(op, params, args).shape();
    const Tensor weights = Tensor::constant(local.normal_array(out_shape));
    const double err = grad_check_params([&] { return sum(apply_primitive(op, params, args) * weights); }, params);
    ++r.cases;
    worst = std::max(worst, err);
    if (!(err < kGradTol)) fail(r, {{"case", "primitive"}, {"op", primitive_name(op)}, {"max_rel_error", err}});
  }

  ModelDims dims;
  dims.d_x = 6;
  dims.d_a = 3;
  dims.d_z = 2;
  dims.hidden = 5;
  dims.layers = 1;
  dims.classes = 3;
  const DisGenModel model = DisGenModel::init(dims, 7);
  Rng data_rng(11);
  const Array x = data_rng.normal_array({4, dims.d_x});
  const std::vector<std::size_t> labels{0, 1, 2, 1};
  const PriorTable priors{data_rng.normal_array({dims.classes, dims.d_a}), 0.3};

  struct Case {
    std::string name;
    ObjectiveConfig cfg;
  };
  std::vector<Case> cases;
  auto base = [] {
    ObjectiveConfig c;
    c.stop_gradient = false;
    return c;
  };
  {
    ObjectiveConfig c = base();
    cases.push_back({"disgenib", c});
    cases.push_back({"disenib", configure_disenib(c)});
    c.mode = ObjectiveMode::disgenib_prior;
    cases.push_back({"disgenib-prior/kl", c});
    c.prior_bound = PriorBound::vclub;
    cases.push_back({"disgenib-prior/vclub", c});
    c = base();
    c.mode = ObjectiveMode::cvae;
    cases.push_back({"cvae", c});
    c.mode = ObjectiveMode::avae;
    cases.push_back({"avae", c});
  }
  std::vector<Tensor> params = model.parameters();
  for (const Case& c : cases) {
    const double err = grad_check_params(
        [&] {
          Rng noise(99);
          return objective_loss(model, x, labels, c.cfg, &priors, noise).total;
        },
        params);
    ++r.cases;
    worst = std::max(worst, err);
    if (!(err < kGradTol)) fail(r, {{"case", "objective"}, {"mode", c.name}, {"max_rel_error", err}});
  }
  r.summary = "max rel error " + fmt("%.2e", worst);
}

// ---- KL oracle ------------------------------------------------------------

struct Mc {
  double mean = 0.0;
  double stderr_ = 0.0;
};

// Monte-Carlo KL(p || q) for diagonal Gaussians given as (mu, var) rows.
Mc mc_kl(const std::vector<double>& mp, const std::vector<double>& vp, const std::vector<double>& mq,
         const std::vector<double>& vq, std::size_t samples, Rng& rng) {
  double s = 0.0, s2 = 0.0;
  const std::size_t d = mp.size();
  for (std::size_t n = 0; n < samples; ++n) {
    double diff = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double x = mp[k] + std::sqrt(vp[k]) * rng.normal();
      const double lp = -0.5 * (std::log(vp[k]) + (x - mp[k]) * (x - mp[k]) / vp[k]);
      const double lq = -0.5 * (std::log(vq[k]) + (x - mq[k]) * (x - mq[k]) / vq[k]);
      diff += lp - lq;
    }
    s += diff;
    s2 += diff * diff;
  }
  const double m = s / static_cast<double>(samples);
  const double var = std::max(0.0, s2 / static_cast<double>(samples) - m * m);
  return {m, std::sqrt(var / static_cast<double>(samples))};
}

void kl_suite(SuiteReport& r) {
  constexpr std::size_t kSamples = 1000000;
  constexpr std::size_t kDim = 3;
  Rng rng(314159);
  double worst = 0.0;
  for (std::size_t t = 0; t < 10; ++t) {
    Rng prng = rng.substream("params", t);
    Rng srng = rng.substream("samples", t);
    const Array mp = prng.normal_array({1, kDim});
    const Array lp = prng.uniform_array({1, kDim}, -1.0, 1.0);
    const Array mq = prng.normal_array({1, kDim});
    const Array lq = prng.uniform_array({1, kDim}, -1.0, 1.0);
    auto vars = [](const Array& lv) {
      std::vector<double> v;
      for (double l : lv.data()) v.push_back(std::exp(l));
      return v;
    };
    const DiagGaussian p(Tensor::constant(mp), Tensor::constant(lp));
    const DiagGaussian q(Tensor::constant(mq), Tensor::constant(lq));

    const double closed_std = kl_to_standard(p).item();
    const Mc mc_std = mc_kl(mp.vec(), vars(lp), std::vector<double>(kDim, 0.0), std::vector<double>(kDim, 1.0),
                            kSamples, srng);
    const double closed_between = kl_between(p, q).item();
    const Mc mc_between = mc_kl(mp.vec(), vars(lp), mq.vec(), vars(lq), kSamples, srng);

    for (auto [name, closed, mc] : {std::tuple{"kl_to_standard", closed_std, mc_std},
                                    std::tuple{"kl_between", closed_between, mc_between}}) {
      ++r.cases;
      const double z = std::abs(closed - mc.mean) / mc.stderr_;
      worst = std::max(worst, z);
      if (!(z <= 3.0)) {
        fail(r, {{"case", name}, {"trial", t}, {"closed_form", closed}, {"monte_carlo", mc.mean},
                 {"stderr", mc.stderr_}});
      }
    }
  }
  r.summary = "max |closed - mc| " + fmt("%.2f", worst) + " stderr";
}

// ---- discrete identities --------------------------------------------------

std::vector<double> random_simplex(std::size_t n, Rng& rng) {
  std::vector<double> p(n);
  double s = 0.0;
  for (double& v : p) s += (v = rng.uniform(0.05, 1.0));
  for (double& v : p) v /= s;
  return p;
}

// P(X) P(Y|X) P(Z|X) with alphabets in [2, 4].
DiscreteJoint random_markov(Rng& rng) {
  const std::size_t nx = 2 + rng.index(3), ny = 2 + rng.index(3), nz = 2 + rng.index(3);
  const std::vector<double> px = random_simplex(nx, rng);
  std::vector<double> probs(nx * ny * nz);
  for (std::size_t x = 0; x < nx; ++x) {
    const auto py = random_simplex(ny, rng);
    const auto pz = random_simplex(nz, rng);
    for (std::size_t y = 0; y < ny; ++y)
      for (std::size_t z = 0; z < nz; ++z) probs[(x * ny + y) * nz + z] = px[x] * py[y] * pz[z];
  }
  return DiscreteJoint({nx, ny, nz}, std::move(probs));
}

// Joint over (Y, A, Z) with Y = f(A) for a random surjective-ish f.
DiscreteJoint random_function_of_a(Rng& rng) {
  const std::size_t na = 2 + rng.index(3), nz = 2 + rng.index(3);
  const std::size_t ny = 1 + rng.index(na);
  std::vector<std::size_t> f(na);
  for (std::size_t a = 0; a < na; ++a) f[a] = a < ny ? a : rng.index(ny);
  const std::vector<double> paz = random_simplex(na * nz, rng);
  std::vector<double> probs(ny * na * nz, 0.0);
  for (std::size_t a = 0; a < na; ++a)
    for (std::size_t z = 0; z < nz; ++z) probs[(f[a] * na + a) * nz + z] = paz[a * nz + z];
  // random_simplex rounding can leave the sum a few ulps off 1.
  double s = 0.0;
  for (double p : probs) s += p;
  for (double& p : probs) p /= s;
  return DiscreteJoint({ny, na, nz}, std::move(probs));
}

void chain_suite(SuiteReport& r) {
  Rng rng(2718);
  double worst = 0.0;
  for (std::size_t t = 0; t < 20; ++t) {
    Rng local = rng.substream("joint", t);
    const DiscreteJoint j = random_markov(local);
    const double res = chain_identity_residual(j);
    ++r.cases;
    worst = std::max(worst, res);
    if (!(res < 1e-12)) fail(r, {{"trial", t}, {"residual", res}, {"joint", json::parse(j.to_json())}});
  }
  r.summary = "max residual " + fmt("%.2e", worst);
}

void nuisance_slack_suite(SuiteReport& r) {
  Rng rng(1618);
  double lowest = 1e300;
  for (std::size_t t = 0; t < 20; ++t) {
    Rng local = rng.substream("joint", t);
    const DiscreteJoint j = random_function_of_a(local);
    const double slack = lemma2_slack(j);
    ++r.cases;
    lowest = std::min(lowest, slack);
    if (!(slack >= -1e-12)) fail(r, {{"trial", t}, {"slack", slack}, {"joint", json::parse(j.to_json())}});
  }
  r.summary = "min slack " + fmt("%.3e", lowest);
}

// ---- vCLUB Gaussian suite -------------------------------------------------

void vclub_suite(SuiteReport& r, Mutation mutation) {
  double worst = 0.0;
  for (double rho : {0.5, 0.8, 0.9}) {
    const double mi = -0.5 * std::log(1.0 - rho * rho);
    // Value of the bound once q(v|x) has converged to N(rho x, 1 - rho^2).
    const double club = rho * rho / (1.0 - rho * rho);
    for (std::uint64_t seed : {0u, 1u}) {
      const VclubRun run = vclub_gaussian_run(rho, seed, 2000, 512, mutation);
      const double tol = 0.1 + 0.1 * club;
      const double dev = std::abs(run.estimate - club);
      ++r.cases;
      worst = std::max(worst, dev / tol);
      if (!(dev <= tol) || !(run.estimate >= mi - 0.05)) {
        fail(r, {{"rho", rho}, {"seed", seed}, {"estimate", run.estimate}, {"closed_form_club", club},
                 {"tolerance", tol}, {"true_mi", mi}, {"final_nll", run.final_nll}});
      }
    }
  }
  r.summary = "max deviation " + fmt("%.2f", worst) + " of tolerance";
}

// ---- reductions -----------------------------------------------------------

// The conditional-VAE objective written out from the model's raw pieces.
double cvae_by_hand(const DisGenModel& model, const Array& x, std::span<const std::size_t> labels, double alpha,
                    double sigma_rec, Rng& rng) {
  const DiagGaussian qz = model.encode_z(Tensor::constant(x));
  const Array& mu = qz.mu().value();
  const Array& lv = qz.log_var().value();
  const std::size_t n = x.rows(), dz = mu.cols(), dx = x.cols();
  const Array noise = rng.normal_array({n, dz});
  Array z = Array::zeros({n, dz});
  double kl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < dz; ++k) {
      z.at(i, k) = mu.at(i, k) + std::exp(0.5 * lv.at(i, k)) * noise.at(i, k);
      kl += 0.5 * (std::exp(lv.at(i, k)) + mu.at(i, k) * mu.at(i, k) - 1.0 - lv.at(i, k));
    }
  }
  const Array mean = model.decode_yz_mean(labels, Tensor::constant(z)).value();
  const double var = sigma_rec * sigma_rec;
  double nll = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < dx; ++k) {
      const double d = x.at(i, k) - mean.at(i, k);
      nll += 0.5 * (d * d / var + std::log(2.0 * std::numbers::pi * var));
    }
  const double a_prime = (1.0 + alpha) / (2.0 + alpha);
  return nll / static_cast<double>(n) + a_prime * kl / static_cast<double>(n);
}

void reduction_suite(SuiteReport& r) {
  ModelDims dims;
  dims.d_x = 8;
  dims.d_a = 4;
  dims.d_z = 3;
  dims.hidden = 12;
  dims.layers = 2;
  dims.classes = 5;
  const DisGenModel model = DisGenModel::init(dims, 3);
  Rng rng(5150);
  const Array attrs = rng.normal_array({dims.classes, dims.d_a});
  double worst_cvae = 0.0, worst_avae = 0.0;
  for (std::size_t t = 0; t < 50; ++t) {
    Rng local = rng.substream("batch", t);
    const std::size_t n = 2 + local.index(15);
    const Array x = local.normal_array({n, dims.d_x});
    std::vector<std::size_t> labels(n);
    for (auto& y : labels) y = local.index(dims.classes);
    ObjectiveConfig cfg;
    cfg.alpha = local.uniform(0.0, 4.0);
    cfg.sigma_rec = local.uniform(0.3, 1.5);
    const std::uint64_t noise_seed = 1000 + t;

    cfg.mode = ObjectiveMode::cvae;
    Rng n1(noise_seed), n2(noise_seed);
    const double lib = loss_cvae(model, x, labels, cfg, n1).total.item();
    const double hand = cvae_by_hand(model, x, labels, cfg.alpha, cfg.sigma_rec, n2);
    const double d1 = std::abs(lib - hand);
    worst_cvae = std::max(worst_cvae, d1);
    ++r.cases;
    if (!(d1 <= 1e-10)) fail(r, {{"case", "cvae"}, {"batch", t}, {"library", lib}, {"by_hand", hand}});

    cfg.mode = ObjectiveMode::avae;
    const PriorTable exact{attrs, 0.0};
    Rng n3(noise_seed), n4(noise_seed);
    const double avae = loss_avae(model, x, labels, exact, cfg, n3).total.item();
    cfg.mode = ObjectiveMode::disgenib_prior;
    cfg.prior_bound = PriorBound::kl_marginal;
    const double prior = loss_disgenib_prior(model, x, labels, exact, cfg, n4).total.item();
    const double d2 = std::abs(avae - prior);
    worst_avae = std::max(worst_avae, d2);
    ++r.cases;
    if (!(d2 <= 1e-10)) fail(r, {{"case", "avae"}, {"batch", t}, {"avae", avae}, {"prior_sigma0", prior}});
  }
  const ObjectiveConfig d = configure_disenib(ObjectiveConfig{});
  ++r.cases;
  if (d.alpha != 0.0 || d.beta != 1.0 || !d.disenib) {
    fail(r, {{"case", "disenib"}, {"alpha", d.alpha}, {"beta", d.beta}, {"disenib", d.disenib}});
  }
  r.summary = "max |diff| cvae " + fmt("%.1e", worst_cvae) + ", avae " + fmt("%.1e", worst_avae);
}

void alpha_prime_suite(SuiteReport& r) {
  r.cases += 2;
  if (alpha_prime(0.0) != 0.5) fail(r, {{"alpha", 0.0}, {"alpha_prime", alpha_prime(0.0)}, {"expected", 0.5}});
  if (alpha_prime(1.0) != 2.0 / 3.0) {
    fail(r, {{"alpha", 1.0}, {"alpha_prime", alpha_prime(1.0)}, {"expected", 2.0 / 3.0}});
  }
  double prev = alpha_prime(0.0);
  for (std::size_t i = 1; i < 100; ++i) {
    const double a = 10.0 * static_cast<double>(i) / 99.0;
    const double v = alpha_prime(a);
    ++r.cases;
    if (!(v > prev)) fail(r, {{"case", "monotone"}, {"alpha", a}, {"alpha_prime", v}, {"previous", prev}});
    prev = v;
  }
  r.summary = "alpha'(0)=0.5, alpha'(1)=2/3, increasing on [0, 10]";
}

}  // namespace

VclubRun vclub_gaussian_run(double rho, std::uint64_t seed, std::size_t steps, std::size_t batch,
                            Mutation mutation) {
  const Rng root(seed);
  Rng init = root.substream("init");
  Rng draws = root.substream("pairs");
  const GaussianMlp approx(1, 16, 1, 1, init);
  AdamConfig adam;
  adam.lr = 5e-3;
  AdamState state(adam, approx.parameters());
  const double s = std::sqrt(1.0 - rho * rho);
  auto pairs = [&](Array& x, Array& v) {
    x = draws.normal_array({batch, 1});
    v = draws.normal_array({batch, 1});
    for (std::size_t i = 0; i < batch; ++i) v[i] = rho * x[i] + s * v[i];
  };
  VclubRun out;
  Array x, v;
  for (std::size_t t = 0; t < steps; ++t) {
    pairs(x, v);
    out.final_nll = approximator_ll_step(approx, x, v, state);
  }
  pairs(x, v);
  NoGradGuard guard;
  const DiagGaussian q = approx.condition(Tensor::constant(x));
  const Tensor vt = Tensor::constant(v);
  const double bound = vclub_upper_bound(q, vt).item();
  if (mutation == Mutation::vclub_sign) {
    // bound = positive - negative; rebuild it as positive + negative.
    const double positive = mean(log_prob(q, vt)).item();
    out.estimate = positive + (positive - bound);
  } else {
    out.estimate = bound;
  }
  return out;
}

SuiteReport run_selfcheck_suite(const std::string& name, Mutation mutation) {
  SuiteReport r;
  r.name = name;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    if (name == "gradients") gradient_suite(r);
    else if (name == "kl-oracle") kl_suite(r);
    else if (name == "chain-identity") chain_suite(r);
    else if (name == "nuisance-slack") nuisance_slack_suite(r);
    else if (name == "vclub-gaussian") vclub_suite(r, mutation);
    else if (name == "reductions") reduction_suite(r);
    else if (name == "alpha-prime") alpha_prime_suite(r);
    else throw ConfigError("unknown selfcheck suite '" + name + "'");
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    fail(r, {{"exception", e.what()}});
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

int cmd_selfcheck(Mutation mutation, std::ostream& out) {
  bool all = true;
  for (const std::string& name : selfcheck_suites()) {
    const SuiteReport r = run_selfcheck_suite(name, mutation);
    all = all && r.passed;
    char line[256];
    std::snprintf(line, sizeof(line), "%-4s %-15s %4zu cases %7.2fs  %s\n", r.passed ? "PASS" : "FAIL",
                  r.name.c_str(), r.cases, r.seconds, r.summary.c_str());
    out << line;
    for (const auto& f : r.failures) out << "     failing case: " << f.dump() << "\n";
    out.flush();
  }
  out << (all ? "selfcheck passed\n" : "selfcheck FAILED\n");
  return all ? 0 : 1;
}

}  // namespace dgib::cli
