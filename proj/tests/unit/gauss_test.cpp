#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "disgenib/errors.hpp"
#include "disgenib/gauss.hpp"
#include "disgenib/rng.hpp"

namespace dgib {
namespace {

DiagGaussian gaussian(std::vector<double> mu, std::vector<double> log_var) {
  const std::size_t d = mu.size();
  return DiagGaussian(Tensor::constant(Array({1, d}, std::move(mu))), Tensor::constant(Array({1, d}, std::move(log_var))));
}

Tensor row(std::vector<double> v) {
  const std::size_t d = v.size();
  return Tensor::constant(Array({1, d}, std::move(v)));
}

// -0.5 ln(2 pi), evaluated once at long double precision.
const double kHalfLog2Pi = static_cast<double>(-0.5L * std::log(2.0L * 3.14159265358979323846264338327950288L));

// Monte-Carlo E_p[log p - log q] in one dimension, with its standard error.
std::pair<double, double> mc_kl_1d(double mp, double vp, double mq, double vq, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = mp + std::sqrt(vp) * rng.normal();
    const double d = -0.5 * (std::log(vp) + (x - mp) * (x - mp) / vp) + 0.5 * (std::log(vq) + (x - mq) * (x - mq) / vq);
    s += d;
    s2 += d * d;
  }
  const double m = s / n;
  return {m, std::sqrt((s2 / n - m * m) / n)};
}

TEST(SampleReparam, StandardNormalPassesNoiseThrough) {
  EXPECT_DOUBLE_EQ(sample_reparam(gaussian({0}, {0}), Array({1, 1}, {1.3})).item(), 1.3);
}

TEST(SampleReparam, ScalesByStandardDeviation) {
  EXPECT_DOUBLE_EQ(sample_reparam(gaussian({2}, {std::log(4.0)}), Array({1, 1}, {1.0})).item(), 4.0);
}

TEST(SampleReparam, ZeroNoiseReturnsMean) {
  EXPECT_EQ(sample_reparam(gaussian({0.3, -2}, {1, -1}), Array::zeros({1, 2})).value(), Array({1, 2}, {0.3, -2}));
}

TEST(SampleReparam, NoiseShapeMismatchThrows) {
  EXPECT_THROW(sample_reparam(gaussian({0, 0}, {0, 0}), Array::zeros({1, 3})), ShapeError);
}

TEST(SampleReparam, MomentsMatchParameters) {
  const double mu = 0.7, lv = std::log(2.5);
  const std::size_t n = 100000;
  Rng rng(1);
  const DiagGaussian g(Tensor::constant(Array::filled({n, 1}, mu)), Tensor::constant(Array::filled({n, 1}, lv)));
  const Array s = sample_reparam(g, rng.normal_array({n, 1})).value();
  double m = 0.0, m2 = 0.0;
  for (double v : s.data()) m += v;
  m /= n;
  for (double v : s.data()) m2 += (v - m) * (v - m);
  m2 /= n;
  const double var = std::exp(lv);
  EXPECT_LT(std::abs(m - mu), 5.0 * std::sqrt(var / n));
  // Var of the sample variance for a Gaussian is 2 sigma^4 / n.
  EXPECT_LT(std::abs(m2 - var), 5.0 * std::sqrt(2.0 * var * var / n));
}

TEST(LogVar, ClampedAtConstruction) {
  const DiagGaussian g = gaussian({0, 0}, {-50, 50});
  EXPECT_EQ(g.log_var().value(), Array({1, 2}, {kLogVarMin, kLogVarMax}));
}

TEST(LogProb, StandardNormalAtZero) {
  EXPECT_NEAR(kHalfLog2Pi, -0.91893853320467274, 1e-16);
  EXPECT_NEAR(log_prob(gaussian({0}, {0}), row({0})).item(), -0.91893853320467274, 1e-15);
}

TEST(LogProb, AddsOverDimensions) {
  EXPECT_NEAR(log_prob(gaussian({1, -1}, {0, 0}), row({1, -1})).item(), 2.0 * kHalfLog2Pi, 1e-15);
}

TEST(LogProb, IntegratesToOne) {
  const double lo = -12.0, hi = 12.0;
  const std::size_t n = 24001;
  const double h = (hi - lo) / (n - 1);
  Array xs({n, 1}, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) xs[i] = lo + h * i;
  const DiagGaussian batch(Tensor::constant(Array::filled({n, 1}, 0.4)),
                           Tensor::constant(Array::filled({n, 1}, std::log(0.8))));
  const Array lp = log_prob(batch, Tensor::constant(xs)).value();
  double integral = 0.0;
  for (std::size_t i = 0; i < n; ++i) integral += (i == 0 || i + 1 == n ? 0.5 : 1.0) * std::exp(lp[i]) * h;
  EXPECT_NEAR(integral, 1.0, 1e-3);
}

TEST(LogProb, DimensionMismatchThrows) {
  EXPECT_THROW(log_prob(gaussian({0, 0}, {0, 0}), row({1, 2, 3})), ShapeError);
}

TEST(KlToStandard, ZeroForStandardNormal) {
  EXPECT_EQ(kl_to_standard(gaussian({0, 0}, {0, 0})).item(), 0.0);
}

TEST(KlToStandard, UnitShiftedMean) {
  const double closed = kl_to_standard(gaussian({1}, {0})).item();
  EXPECT_DOUBLE_EQ(closed, 0.5);
  const auto [mc, se] = mc_kl_1d(1.0, 1.0, 0.0, 1.0, 1000000, 11);
  EXPECT_LT(std::abs(closed - mc), 3.0 * se) << "mc " << mc << " se " << se;
}

TEST(KlToStandard, NonNegativeOnRandomDraws) {
  Rng rng(4);
  for (int t = 0; t < 100; ++t) {
    const DiagGaussian g(Tensor::constant(rng.normal_array({1, 3})),
                         Tensor::constant(rng.uniform_array({1, 3}, -3.0, 3.0)));
    EXPECT_GE(kl_to_standard(g).item(), 0.0);
  }
}

TEST(KlBetween, IdenticalIsExactlyZero) {
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    const DiagGaussian g(Tensor::constant(rng.normal_array({2, 4})),
                         Tensor::constant(rng.uniform_array({2, 4}, -3.0, 3.0)));
    const Array kl = kl_between(g, g).value();
    for (double v : kl.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(KlBetween, StandardPriorMatchesKlToStandard) {
  const DiagGaussian g = gaussian({0.3, -1.2}, {0.4, -0.9});
  EXPECT_NEAR(kl_between(g, standard_normal(2)).item(), kl_to_standard(g).item(), 1e-15);
}

TEST(KlBetween, UnitVarianceAgainstVarianceFour) {
  const double closed = kl_between(gaussian({0}, {0}), gaussian({0}, {std::log(4.0)})).item();
  EXPECT_NEAR(closed, 0.31814718055994530, 1e-15);
  EXPECT_NEAR(closed, 0.5 * (0.25 - 1.0 + std::log(4.0)), 1e-15);
  const auto [mc, se] = mc_kl_1d(0.0, 1.0, 0.0, 4.0, 1000000, 12);
  EXPECT_LT(std::abs(closed - mc), 3.0 * se) << "mc " << mc << " se " << se;
}

TEST(KlBetween, NonNegativeOnRandomDraws) {
  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    auto draw = [&] {
      return DiagGaussian(Tensor::constant(rng.normal_array({1, 3})),
                          Tensor::constant(rng.uniform_array({1, 3}, -3.0, 3.0)));
    };
    const DiagGaussian p = draw(), q = draw();
    EXPECT_GE(kl_between(p, q).item(), -1e-12);
  }
}

TEST(KlBetween, DimensionMismatchThrows) {
  EXPECT_THROW(kl_between(gaussian({0}, {0}), gaussian({0, 0}, {0, 0})), ShapeError);
}

TEST(GaussGradients, AllThreeOperationsPassGradCheck) {
  Rng rng(21);
  Tensor mu = Tensor::parameter(rng.normal_array({3, 2}));
  Tensor lv = Tensor::parameter(rng.uniform_array({3, 2}, -1.0, 1.0));
  Tensor mu2 = Tensor::parameter(rng.normal_array({3, 2}));
  Tensor lv2 = Tensor::parameter(rng.uniform_array({3, 2}, -1.0, 1.0));
  const Array x = rng.normal_array({3, 2});
  const Array noise = rng.normal_array({3, 2});
  std::vector<Tensor> params{mu, lv, mu2, lv2};
  EXPECT_LT(grad_check_params([&] { return sum(log_prob(DiagGaussian(mu, lv), Tensor::constant(x))); }, params),
            1e-4);
  EXPECT_LT(grad_check_params([&] { return sum(kl_to_standard(DiagGaussian(mu, lv))); }, params), 1e-4);
  EXPECT_LT(grad_check_params([&] { return sum(kl_between(DiagGaussian(mu, lv), DiagGaussian(mu2, lv2))); }, params),
            1e-4);
  EXPECT_LT(grad_check_params([&] { return sum(square(sample_reparam(DiagGaussian(mu, lv), noise))); }, params),
            1e-4);
}

}  // namespace
}  // namespace dgib
