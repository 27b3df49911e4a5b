#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/poisson.hpp>
#include <cmath>
#include <vector>

#include "bpmcmc/bp_core.hpp"
#include "support.hpp"

using namespace bpmcmc;
using bpmcmc::testing::GaussianProvider;

namespace {

struct MeanSe {
  double mean;
  double se;
};

MeanSe mean_se(const std::vector<double>& x) {
  double m = 0.0;
  for (double v : x) m += v;
  m /= static_cast<double>(x.size());
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  s /= static_cast<double>(x.size() - 1);
  return {m, std::sqrt(s / static_cast<double>(x.size()))};
}

double lag1_correlation(const std::vector<double>& x) {
  const double m = mean_se(x).mean;
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    den += (x[i] - m) * (x[i] - m);
    if (i + 1 < x.size()) num += (x[i] - m) * (x[i + 1] - m);
  }
  return num / den;
}

}  // namespace

TEST(BpConfig, RejectsInvalid) {
  EXPECT_THROW((BpConfig{0, 1.0}.validate()), ConfigError);
  EXPECT_THROW((BpConfig{10, 0.0}.validate()), ConfigError);
  EXPECT_THROW((BpConfig{10, -1.0}.validate()), ConfigError);
  EXPECT_NO_THROW((BpConfig{1, 0.5}.validate()));
  EXPECT_DOUBLE_EQ((BpConfig{50, 1.0}.implied_rho()), 0.98);
}

TEST(BlockRandomStore, CountsFollowPoisson) {
  const BpConfig cfg{1, 1.0};
  const int n = 100000;
  std::vector<double> observed(7, 0.0);
  for (int s = 0; s < n; ++s) {
    const auto chi = draw_store(cfg, static_cast<std::uint64_t>(s)).block(0).chi;
    observed[std::min<std::uint32_t>(chi, 6)] += 1.0;
  }
  boost::math::poisson_distribution<> pois(1.0);
  double stat = 0.0;
  double tail = 1.0;
  for (int k = 0; k < 7; ++k) {
    const double p = k < 6 ? boost::math::pdf(pois, k) : tail;
    tail -= p;
    const double e = p * n;
    stat += (observed[static_cast<std::size_t>(k)] - e) * (observed[static_cast<std::size_t>(k)] - e) / e;
  }
  const double crit = boost::math::quantile(boost::math::chi_squared_distribution<>(6), 0.99);
  EXPECT_LT(stat, crit);
}

TEST(BlockRandomStore, TotalCountMean) {
  const BpConfig cfg{10, 1.0};
  double total = 0.0;
  const int n = 20000;
  for (int s = 0; s < n; ++s) total += static_cast<double>(draw_store(cfg, 1000 + s).total_draws());
  // Sum of 10 Poisson(1): sd sqrt(10) per store.
  EXPECT_NEAR(total / n, 10.0, 4.0 * std::sqrt(10.0 / n));
}

TEST(BlockRandomStore, DeterministicAndRegenerable) {
  const BpConfig cfg{20, 2.0};
  auto a = draw_store(cfg, 77);
  const auto b = draw_store(cfg, 77);
  EXPECT_EQ(a, b);
  a.refresh(3);
  a.refresh(3);
  a.refresh(11);
  a.refresh_lower_bound();
  const auto c = BlockRandomStore::regenerate(CountMode::poisson, 2.0, 77, a.epochs(), 1);
  EXPECT_EQ(a, c);
  EXPECT_EQ(a.lower_bound_key(), c.lower_bound_key());
  EXPECT_NE(draw_store(cfg, 78), b);
}

TEST(BlockRandomStore, RefreshTouchesOnlyOneBlock) {
  const BpConfig cfg{50, 1.0};
  const auto before = draw_store(cfg, 5);
  const auto after = refresh_block(before, 3);
  for (std::size_t l = 0; l < before.n_blocks(); ++l) {
    if (l == 3) {
      EXPECT_EQ(after.block(l).epoch, before.block(l).epoch + 1);
    } else {
      EXPECT_EQ(after.block(l), before.block(l));
    }
  }
  EXPECT_EQ(after.lower_bound_key(), before.lower_bound_key());
  EXPECT_THROW(refresh_block(before, 50), std::out_of_range);
}

TEST(BlockRandomStore, RefreshedBlockUsesFreshKeys) {
  auto s = BlockRandomStore::fixed(1, 5, 9);
  const auto old = s.block(0).draw_seeds;
  s.refresh(0);
  for (auto k : s.block(0).draw_seeds)
    for (auto o : old) EXPECT_NE(k, o);
}

TEST(SoftLowerBound, Arithmetic) { EXPECT_DOUBLE_EQ(soft_lower_bound(2.0, 1.0, 1.0, 10), -12.0); }

TEST(BlockPoisson, EmptyProductsGiveExpOfShift) {
  const BpConfig cfg{7, 0.5};
  std::vector<std::vector<double>> none(7);
  const auto est = block_poisson_from_b(cfg, none, -3.0);
  EXPECT_EQ(est.sign, 1);
  EXPECT_DOUBLE_EQ(est.log_abs, -3.0 + 3.5);
  EXPECT_FALSE(est.degenerate);
}

TEST(BlockPoisson, SignParity) {
  const BpConfig cfg{3, 1.0};
  const double a = -5.0;
  // factors (b - a) / 3: b = -8 gives -1, b = -2 gives 1, b = -11 gives -2.
  std::vector<std::vector<double>> b{{-8.0}, {-2.0, -11.0}, {}};
  auto est = block_poisson_from_b(cfg, b, a);
  EXPECT_EQ(est.n_negative_factors, 2);
  EXPECT_EQ(est.sign, 1);
  EXPECT_NEAR(est.log_abs, a + 3.0 + std::log(2.0), 1e-14);
  b[2].push_back(-6.5);
  est = block_poisson_from_b(cfg, b, a);
  EXPECT_EQ(est.n_negative_factors, 3);
  EXPECT_EQ(est.sign, -1);
  EXPECT_NEAR(est.log_abs, a + 3.0 + std::log(2.0) + std::log(0.5), 1e-14);
  EXPECT_NEAR(est.value(), -std::exp(a + 3.0), 1e-14);
}

TEST(BlockPoisson, ZeroFactorIsDegenerate) {
  const BpConfig cfg{2, 1.0};
  const auto est = block_poisson_from_b(cfg, {{-1.0}, {-4.0}}, -4.0);
  EXPECT_TRUE(est.degenerate);
  EXPECT_EQ(est.value(), 0.0);
}

TEST(BlockPoisson, PooledMeanAndFallback) {
  ZDraws d;
  d.blocks = {{1.0, 2.0}, {}, {6.0}};
  d.independent = 10.0;
  d.has_independent = true;
  EXPECT_DOUBLE_EQ(d.pooled_mean(), 3.0);
  ZDraws e;
  e.blocks = {{}, {}};
  e.independent = 10.0;
  e.has_independent = true;
  EXPECT_DOUBLE_EQ(e.pooled_mean(), 10.0);
}

TEST(BlockPoisson, ConcentratedDrawsGiveUnitFactors) {
  const BpConfig cfg{10, 1.0};
  const GaussianProvider prov(2.0, 1e-9);
  const double theta[1] = {0.0};
  const auto store = draw_store(cfg, 3);
  const auto d = draw_z(store, theta, prov);
  const double a = soft_lower_bound(d.independent, 1.0, 1.0, 10);
  const auto est = block_poisson(cfg, d, 1.0, a);
  EXPECT_NEAR(est.log_abs, -2.0, 1e-6);
  EXPECT_EQ(est.sign, 1);
}

TEST(BlockPoisson, ThreadedEvaluationIsBitIdentical) {
  const BpConfig cfg{30, 2.0};
  const GaussianProvider prov(2.0, 1.5);
  const double theta[1] = {0.0};
  const auto store = draw_store(cfg, 99);
  const auto one = estimate(cfg, store, theta, 1.3, -40.0, prov, EvalPolicy{1});
  const auto four = estimate(cfg, store, theta, 1.3, -40.0, prov, EvalPolicy{4});
  EXPECT_EQ(one.sign, four.sign);
  EXPECT_EQ(one.log_abs, four.log_abs);
  EXPECT_EQ(one.z_p_bar, four.z_p_bar);
}

struct UnbiasCase {
  double m;
  int lambda;
  double sigma;
};

class Unbiasedness : public ::testing::TestWithParam<UnbiasCase> {};

TEST_P(Unbiasedness, RandomIndependentLowerBound) {
  const auto c = GetParam();
  const BpConfig cfg{c.lambda, c.m};
  const double B = -2.0;
  const GaussianProvider prov(-B, c.sigma);
  const double theta[1] = {0.0};
  const int n = 100000;
  std::vector<double> values(n);
  for (int r = 0; r < n; ++r) {
    const auto store = draw_store(cfg, substream_key(2024, {static_cast<std::uint64_t>(r)}));
    const auto d = draw_z(store, theta, prov, true);
    const double a = soft_lower_bound(d.independent, 1.0, c.m, c.lambda);
    values[static_cast<std::size_t>(r)] = block_poisson(cfg, d, 1.0, a).value();
  }
  const auto ms = mean_se(values);
  EXPECT_NEAR(ms.mean, std::exp(B), 3.0 * ms.se) << "se " << ms.se;
}

INSTANTIATE_TEST_SUITE_P(Grid, Unbiasedness,
                         ::testing::Values(UnbiasCase{1.0, 5, 1.0}, UnbiasCase{1.0, 50, 5.0},
                                           UnbiasCase{2.0, 10, 2.0}));

TEST(BlockPoisson, SecondMomentMatchesClosedForm) {
  const BpConfig cfg{10, 1.0};
  const double B = -2.0, sigma = 1.0, a = B - 10.0;
  const GaussianProvider prov(-B, sigma);
  const double theta[1] = {0.0};
  const int n = 100000;
  std::vector<double> sq(n);
  for (int r = 0; r < n; ++r) {
    const auto store = draw_store(cfg, substream_key(31, {static_cast<std::uint64_t>(r)}));
    const double v = estimate(cfg, store, theta, 1.0, a, prov).value();
    sq[static_cast<std::size_t>(r)] = v * v;
  }
  const double ml = cfg.m * cfg.lambda;
  const double second = std::exp(((B - a) * (B - a) + sigma * sigma) / ml + 2 * a + ml);
  const auto ms = mean_se(sq);
  EXPECT_NEAR(ms.mean, second, 5.0 * ms.se);
  const double var_formula = second - std::exp(2 * B);
  const double var_emp = ms.mean - std::exp(2 * B);
  EXPECT_NEAR(var_emp / var_formula, 1.0, 0.05);
}

class Correlation : public ::testing::TestWithParam<int> {};

TEST_P(Correlation, CyclicRefreshGivesOneMinusInverseLambda) {
  const int lambda = GetParam();
  const BpConfig cfg{lambda, 1.0};
  const GaussianProvider prov(2.0, 1.0);
  const double theta[1] = {0.0};
  const double a = -2.0 - lambda;
  auto store = draw_store(cfg, 11);
  std::vector<double> series;
  const int n = 40000;
  series.reserve(n);
  for (int t = 0; t < n; ++t) {
    store.refresh(static_cast<std::size_t>(t % lambda));
    series.push_back(estimate(cfg, store, theta, 1.0, a, prov).log_abs);
  }
  EXPECT_NEAR(lag1_correlation(series), (lambda - 1.0) / lambda, 0.02);
}

INSTANTIATE_TEST_SUITE_P(Lambdas, Correlation, ::testing::Values(1, 10, 50));

TEST(BlockPoisson, ReproducibleFromEpochs) {
  const BpConfig cfg{8, 1.5};
  const GaussianProvider prov(3.0, 2.0);
  const double theta[1] = {0.0};
  auto s = draw_store(cfg, 4);
  for (int i = 0; i < 13; ++i) s.refresh(static_cast<std::size_t>(i % 8));
  const auto r = BlockRandomStore::regenerate(CountMode::poisson, 1.5, 4, s.epochs(), 0);
  const auto e1 = estimate(cfg, s, theta, 0.7, -20.0, prov);
  const auto e2 = estimate(cfg, r, theta, 0.7, -20.0, prov);
  EXPECT_EQ(e1.log_abs, e2.log_abs);
  EXPECT_EQ(e1.sign, e2.sign);
}
