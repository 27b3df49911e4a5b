#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bpmcmc/bp_core.hpp"
#include "bpmcmc/random.hpp"

namespace bpmcmc {

/// Posterior pi(theta | y) proportional to f(y | theta) p(theta) / Z(theta)^n_aux.
/// The sampler works in unconstrained coordinates; the provider sees natural ones.
class DoublyIntractableModel {
 public:
  virtual ~DoublyIntractableModel() = default;

  virtual std::size_t dim() const = 0;
  virtual double log_f(std::span<const double> theta_u) const = 0;
  /// Log prior density in unconstrained coordinates (log-Jacobian included).
  virtual double log_prior(std::span<const double> theta_u) const = 0;
  virtual const ZHatProvider& provider() const = 0;

  virtual std::vector<double> to_natural(std::span<const double> theta_u) const {
    return {theta_u.begin(), theta_u.end()};
  }
  virtual std::vector<double> to_unconstrained(std::span<const double> theta) const {
    return {theta.begin(), theta.end()};
  }
  /// Number of exchangeable observations sharing Z(theta).
  virtual double n_auxiliary() const { return 1.0; }
  virtual std::vector<std::string> parameter_names() const;
};

/// Estimator of exp(-nu Z(theta)) built from Zhat draws laid out like a store.
class ExpEstimator {
 public:
  virtual ~ExpEstimator() = default;
  virtual BlockRandomStore initial_store(std::uint64_t seed) const = 0;
  virtual bool needs_independent() const = 0;
  virtual SignedLogEstimate finish(const ZDraws& draws, double nu) const = 0;
};

class BlockPoissonEstimator final : public ExpEstimator {
 public:
  explicit BlockPoissonEstimator(BpConfig config);
  BlockRandomStore initial_store(std::uint64_t seed) const override;
  bool needs_independent() const override { return true; }
  SignedLogEstimate finish(const ZDraws& draws, double nu) const override;
  const BpConfig& config() const { return config_; }

 private:
  BpConfig config_;
};

enum class BlockSchedule { cyclic, uniform_random };

/// When the independent draw behind the lower bound is redrawn.
enum class LowerBoundRefresh { per_chain, every_iteration };

struct PmmhConfig {
  BlockSchedule schedule = BlockSchedule::cyclic;
  LowerBoundRefresh lower_bound = LowerBoundRefresh::per_chain;
  EvalPolicy eval;
};

struct ProposalConfig {
  enum class Kind { fixed_rw, adaptive_rw };
  Kind kind = Kind::fixed_rw;
  double step = 0.07;
  double target_accept = 0.44;
  int adapt_after = 200;
};

/// Gaussian random walk. The adaptive form tunes a global scale by
/// Robbins-Monro and uses the running covariance of the chain.
class RandomWalkProposal {
 public:
  RandomWalkProposal(ProposalConfig config, std::size_t dim);

  std::vector<double> propose(std::span<const double> theta, Rng& rng) const;
  void adapt(std::span<const double> theta, bool accepted);
  double scale() const { return scale_; }
  const ProposalConfig& config() const { return config_; }

 private:
  void refactor();

  ProposalConfig config_;
  std::size_t dim_;
  double scale_;
  double rm_const_;
  long n_ = 0;
  std::vector<double> mean_;
  std::vector<double> cov_;   // row-major dim x dim, running sums
  std::vector<double> chol_;  // lower factor of the proposal shape
  bool use_cov_ = false;
};

struct PmmhState {
  std::vector<double> theta;  // unconstrained
  double nu = 0.0;
  BlockRandomStore store;
  SignedLogEstimate est;
  double log_f = 0.0;
  double log_prior = 0.0;
  std::uint64_t iteration = 0;
  Rng rng;
};

struct ChainSample {
  std::vector<double> theta;  // natural coordinates
  int sign = 1;
  bool accepted = false;
  double nu = 0.0;
  double log_abs_like = 0.0;
};

PmmhState initial_state(const DoublyIntractableModel& model, const ExpEstimator& estimator,
                        const PmmhConfig& config, std::span<const double> init_theta,
                        std::uint64_t seed);

/// One iteration of the signed block pseudo-marginal sampler.
ChainSample pmmh_step(PmmhState& state, const DoublyIntractableModel& model,
                      const ExpEstimator& estimator, const PmmhConfig& config,
                      RandomWalkProposal& proposal);

using ProgressFn = std::function<void(std::uint64_t iter, const ChainSample&)>;

std::vector<ChainSample> run_chain(const DoublyIntractableModel& model,
                                   const ExpEstimator& estimator, const PmmhConfig& config,
                                   const ProposalConfig& proposal, std::size_t n_iter,
                                   std::uint64_t seed, std::span<const double> init_theta,
                                   const ProgressFn& progress = {});

std::vector<ChainSample> run_chain(const DoublyIntractableModel& model, const BpConfig& bp,
                                   const ProposalConfig& proposal, std::size_t n_iter,
                                   std::uint64_t seed, std::span<const double> init_theta);

struct SignedExpectation {
  double value = 0.0;
  double negative_fraction = 0.0;
  double sign_sum = 0.0;
  std::size_t n = 0;
  bool reliable = true;  // false when |sum of signs| < 0.02 n
};

/// Sum psi*s / sum s over samples after `burn_in`.
SignedExpectation sign_corrected_expectation(std::span<const double> psi,
                                             std::span<const int> signs, std::size_t burn_in = 0);

SignedExpectation sign_corrected_expectation(std::span<const ChainSample> chain,
                                             const std::function<double(const ChainSample&)>& psi,
                                             std::size_t burn_in);

/// Default burn-in: first quarter of the chain.
inline std::size_t default_burn_in(std::size_t n) { return n / 4; }

}  // namespace bpmcmc
