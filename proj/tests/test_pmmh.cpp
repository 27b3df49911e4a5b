#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "bpmcmc/diagnostics.hpp"
#include "bpmcmc/pmmh.hpp"
#include "support.hpp"

using namespace bpmcmc;
using bpmcmc::testing::ExponentialModel;
using bpmcmc::testing::GaussianTarget;

namespace {

std::vector<double> column(const std::vector<ChainSample>& chain, std::size_t p, std::size_t from) {
  std::vector<double> out;
  for (std::size_t i = from; i < chain.size(); ++i) out.push_back(chain[i].theta[p]);
  return out;
}

double acceptance(const std::vector<ChainSample>& chain, std::size_t from) {
  double a = 0.0;
  for (std::size_t i = from; i < chain.size(); ++i) a += chain[i].accepted;
  return a / static_cast<double>(chain.size() - from);
}

}  // namespace

TEST(SignCorrected, AllPositiveIsErgodicAverage) {
  const std::vector<double> psi{1.0, 2.0, 6.0};
  const std::vector<int> s{1, 1, 1};
  const auto r = sign_corrected_expectation(psi, s);
  EXPECT_DOUBLE_EQ(r.value, 3.0);
  EXPECT_EQ(r.negative_fraction, 0.0);
  EXPECT_TRUE(r.reliable);
}

TEST(SignCorrected, ConstantFunctionalIsOne) {
  const std::vector<int> s{1, -1, 1, 1, -1, 1, 1};
  const std::vector<double> ones(s.size(), 1.0);
  EXPECT_EQ(sign_corrected_expectation(ones, s).value, 1.0);
}

TEST(SignCorrected, WorkedExample) {
  const std::vector<double> psi{1.0, 2.0, 3.0, 4.0};
  const std::vector<int> s{1, 1, -1, 1};
  const auto r = sign_corrected_expectation(psi, s);
  EXPECT_EQ(r.value, 2.0);
  EXPECT_DOUBLE_EQ(r.negative_fraction, 0.25);
  EXPECT_EQ(r.sign_sum, 2.0);
}

TEST(SignCorrected, BurnInAndReliability) {
  std::vector<double> psi(100, 1.0);
  std::vector<int> s(100);
  for (std::size_t i = 0; i < 100; ++i) s[i] = i % 2 ? -1 : 1;
  s[0] = 1;
  s[1] = 1;  // sum of signs 2 over 100
  const auto r = sign_corrected_expectation(psi, s);
  EXPECT_TRUE(r.reliable);
  s[1] = -1;
  EXPECT_FALSE(sign_corrected_expectation(psi, s).reliable);
  EXPECT_THROW(sign_corrected_expectation(psi, s, 100), std::invalid_argument);
  psi[0] = 50.0;
  s[1] = 1;
  EXPECT_EQ(sign_corrected_expectation(psi, s, 1).n, 99u);
}

TEST(SignCorrected, SymmetricSignNoiseLeavesConstantAtOne) {
  Rng rng(5);
  std::vector<int> s(1000, 1);
  for (std::size_t i = 0; i + 1 < s.size(); i += 2)
    if (rng.uniform() < 0.1) s[i] = s[i + 1] = -1;
  std::vector<double> ones(s.size(), 1.0);
  EXPECT_EQ(sign_corrected_expectation(ones, s).value, 1.0);
}

TEST(Proposal, FixedStepIsConstant) {
  RandomWalkProposal q(ProposalConfig{ProposalConfig::Kind::fixed_rw, 0.07, 0.44, 200}, 1);
  const double x[1] = {0.5};
  for (int i = 0; i < 100; ++i) q.adapt(x, i % 3 == 0);
  EXPECT_EQ(q.scale(), 0.07);
}

TEST(Proposal, RejectsInvalidConfig) {
  EXPECT_THROW(RandomWalkProposal(ProposalConfig{ProposalConfig::Kind::fixed_rw, 0.0, 0.44, 200}, 1),
               ConfigError);
  EXPECT_THROW(RandomWalkProposal(ProposalConfig{ProposalConfig::Kind::fixed_rw, 0.1, 1.2, 200}, 1),
               ConfigError);
}

TEST(Chain, ReproducibleAndLengthOne) {
  const ExponentialModel model(5, 4.0, 2.0, 1.0, 0.3);
  const double init[1] = {1.0};
  const ProposalConfig prop{ProposalConfig::Kind::adaptive_rw, 0.5, 0.44, 100};
  const auto a = run_chain(model, BpConfig{10, 1.0}, prop, 500, 42, init);
  const auto b = run_chain(model, BpConfig{10, 1.0}, prop, 500, 42, init);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].theta, b[i].theta);
    EXPECT_EQ(a[i].sign, b[i].sign);
    EXPECT_EQ(a[i].nu, b[i].nu);
  }
  const auto one = run_chain(model, BpConfig{10, 1.0}, prop, 1, 42, init);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_TRUE(one[0].sign == 1 || one[0].sign == -1);
}

TEST(Chain, ThreadedEvaluationMatchesSerial) {
  const ExponentialModel model(5, 4.0, 2.0, 1.0, 0.5);
  const double init[1] = {1.0};
  BlockPoissonEstimator est(BpConfig{10, 2.0});
  PmmhConfig serial, threaded;
  threaded.eval.threads = 4;
  const ProposalConfig prop{ProposalConfig::Kind::fixed_rw, 0.5, 0.44, 100};
  const auto a = run_chain(model, est, serial, prop, 300, 8, init);
  const auto b = run_chain(model, est, threaded, prop, 300, 8, init);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].theta, b[i].theta);
    EXPECT_EQ(a[i].log_abs_like, b[i].log_abs_like);
  }
}

TEST(Chain, InitialisationOutsideSupportFails) {
  const ExponentialModel model(5, 4.0, 2.0, 1.0, 0.0);
  const double bad[1] = {-1.0};
  EXPECT_THROW(run_chain(model, BpConfig{}, ProposalConfig{}, 10, 1, bad), ConfigError);
  const double wrong_dim[2] = {1.0, 1.0};
  EXPECT_THROW(run_chain(model, BpConfig{}, ProposalConfig{}, 10, 1,
                         std::span<const double>(wrong_dim, 2)),
               ConfigError);
}

TEST(Chain, RecordedSignIsCarriedOnRejection) {
  // Large noise so negative estimates occur.
  const ExponentialModel model(5, 4.0, 2.0, 1.0, 1.5);
  const double init[1] = {1.0};
  const ProposalConfig prop{ProposalConfig::Kind::fixed_rw, 0.6, 0.44, 100};
  const auto chain = run_chain(model, BpConfig{3, 0.5}, prop, 3000, 3, init);
  int negatives = 0;
  for (std::size_t i = 1; i < chain.size(); ++i) {
    if (!chain[i].accepted) {
      EXPECT_EQ(chain[i].sign, chain[i - 1].sign);
      EXPECT_EQ(chain[i].theta, chain[i - 1].theta);
      EXPECT_EQ(chain[i].nu, chain[i - 1].nu);
    }
    negatives += chain[i].sign < 0;
  }
  EXPECT_GT(negatives, 0);
}

TEST(Chain, ExactEstimateReducesToMetropolisHastings) {
  const ExponentialModel model(5, 4.0, 2.0, 1.0, 0.0);
  const double init[1] = {1.0};
  const ProposalConfig prop{ProposalConfig::Kind::fixed_rw, 0.9, 0.44, 100};
  const auto chain = run_chain(model, BpConfig{1, 1.0}, prop, 60000, 17, init);
  for (const auto& s : chain) EXPECT_EQ(s.sign, 1);
  const auto x = column(chain, 0, 5000);
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  const double mcse = model.posterior_sd() * std::sqrt(iact(x) / static_cast<double>(x.size()));
  EXPECT_NEAR(mean, model.posterior_mean(), 4.0 * mcse) << "mcse " << mcse;
}

TEST(Chain, NoisyEstimatePosteriorMean) {
  const ExponentialModel model(5, 4.0, 2.0, 1.0, 0.3);
  const double init[1] = {1.0};
  const ProposalConfig prop{ProposalConfig::Kind::fixed_rw, 0.9, 0.44, 100};
  const auto chain = run_chain(model, BpConfig{10, 1.0}, prop, 100000, 23, init);
  const std::size_t burn = 5000;
  const auto r = sign_corrected_expectation(
      chain, [](const ChainSample& s) { return s.theta[0]; }, burn);
  std::vector<double> psi_s;
  std::vector<int> signs;
  for (std::size_t i = burn; i < chain.size(); ++i) {
    psi_s.push_back(chain[i].theta[0]);
    signs.push_back(chain[i].sign);
  }
  const double mcse =
      model.posterior_sd() * std::sqrt(signed_iact(psi_s, signs) / static_cast<double>(psi_s.size()));
  EXPECT_NEAR(r.value, model.posterior_mean(), 4.0 * mcse) << "mcse " << mcse;
  EXPECT_LT(r.negative_fraction, 0.05);
}

TEST(Proposal, AdaptiveHitsMultivariateTarget) {
  const GaussianTarget target(4);
  const std::vector<double> init(4, 0.0);
  const ProposalConfig prop{ProposalConfig::Kind::adaptive_rw, 0.1, 0.234, 500};
  const auto chain = run_chain(target, BpConfig{1, 1.0}, prop, 40000, 9, init);
  EXPECT_NEAR(acceptance(chain, 10000), 0.234, 0.05);
}

TEST(Proposal, AdaptiveHitsScalarTarget) {
  const GaussianTarget target(1);
  const double init[1] = {0.0};
  const ProposalConfig prop{ProposalConfig::Kind::adaptive_rw, 5.0, 0.44, 200};
  const auto chain = run_chain(target, BpConfig{1, 1.0}, prop, 30000, 10, init);
  EXPECT_NEAR(acceptance(chain, 10000), 0.44, 0.05);
}
