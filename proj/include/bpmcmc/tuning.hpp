#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bpmcmc/bp_core.hpp"

namespace bpmcmc::tuning {

/// P(Lhat_B > 0) for Gaussian Bhat with sd sigma_b and the optimal lower bound.
double prob_positive(double m, int lambda, double sigma_b);
/// Same, given p = P(one factor is negative) directly.
double prob_positive_from_p(double m, int lambda, double p_negative);

struct LogAbsMoments {
  double eta = 0.0;
  double nu2 = 0.0;
  double poisson_mean = 0.0;
  bool asymptotic = false;
  double variance = 0.0;  // m * lambda * (nu2 + eta^2)
};

/// Threshold on the Poisson mean above which the large-mean expansion is used.
inline constexpr double kAsymptoticMean = 1e4;

LogAbsMoments log_abs_moments(double m, int lambda, double sigma_b);
/// Var(log |Lhat_B|) for Gaussian Bhat with the optimal lower bound.
double log_abs_variance(double m, int lambda, double sigma_b);

/// Inefficiency of the pseudo-marginal chain as a function of the log-abs
/// variance and the correlation of successive estimates.
class InefficiencyModel {
 public:
  virtual ~InefficiencyModel() = default;
  virtual double operator()(double sigma2, double rho) const = 0;
  virtual std::string name() const = 0;
};

/// Inefficiency of an independence pseudo-marginal chain with a perfect
/// parameter proposal and Gaussian log-likelihood error of variance sigma2.
double perfect_proposal_if(double sigma2);

/// Closed-form stand-in: perfect_proposal_if at k * sigma2 * (1 - c * rho).
/// The default constants put the CT-optimal lambda near 295 (rho = 0) and
/// 195 (rho = 0.99) at gamma = 500^2, M = 1000.
class SurrogateInefficiency final : public InefficiencyModel {
 public:
  explicit SurrogateInefficiency(double k = 0.972, double c = 0.368) : k_(k), c_(c) {}
  double operator()(double sigma2, double rho) const override;
  std::string name() const override { return "surrogate"; }

 private:
  double k_;
  double c_;
};

/// Integrated autocorrelation time of a simulated pilot chain: N(0,1) target,
/// perfect proposal, log-likelihood error sigma * w with w' = rho w + sqrt(1-rho^2) e.
class EmpiricalInefficiency final : public InefficiencyModel {
 public:
  explicit EmpiricalInefficiency(std::size_t pilot_length = 200000, std::uint64_t seed = 1)
      : n_(pilot_length), seed_(seed) {}
  double operator()(double sigma2, double rho) const override;
  std::string name() const override { return "empirical"; }

 private:
  std::size_t n_;
  std::uint64_t seed_;
};

std::unique_ptr<InefficiencyModel> make_inefficiency(const std::string& name);

struct CtInputs {
  double m = 1.0;
  int lambda = 10;
  double M = 100.0;
  double gamma = 1.0;
  double rho = 0.0;

  double sigma_b() const;
};

/// CT = m lambda M IF / (2 tau - 1)^2; infinite when tau <= 1/2.
double computational_time(const CtInputs& in, const InefficiencyModel& inefficiency);

struct CtPoint {
  CtInputs inputs;
  double tau = 0.0;
  double sigma2 = 0.0;
  double inefficiency = 0.0;
  double ct = 0.0;
};

CtPoint evaluate_ct(const CtInputs& in, const InefficiencyModel& inefficiency);

/// M minimising CT for fixed (m, lambda, rho, gamma).
double optimal_M(double gamma, double m, int lambda, double rho,
                 const InefficiencyModel& inefficiency, double M_max = 1e6);

/// Smallest lambda whose one-block refresh gives correlation rho, 1 - 1/lambda >= rho.
int min_lambda_for_rho(double rho);

/// Integer lambda in [max(lo, min_lambda_for_rho(rho)), hi] minimising CT at fixed M.
int optimal_lambda(double gamma, double m, double M, double rho,
                   const InefficiencyModel& inefficiency, int lo = 1, int hi = 3000);

struct GammaEstimate {
  std::vector<double> theta;
  std::vector<double> gamma;
  double gamma_max = 0.0;
  double theta_at_max = 0.0;
};

/// gamma(theta) = 2 M Var(Zhat_M) / Zhat_M^2 over a grid of scalar thetas;
/// the provider must average M particles per call.
GammaEstimate estimate_gamma(std::span<const double> theta_grid, const ZHatProvider& provider,
                             int M, int replicates, std::uint64_t seed);

struct TuningRecommendation {
  int lambda = 0;
  double m = 1.0;
  double rho = 0.0;
  int M_opt = 0;
  double gamma_max = 0.0;
  std::optional<int> low_variance_lambda;
};

TuningRecommendation recommend(double gamma_max);

/// Least-squares quadratic M_opt ~ c0 + c1 sqrt(gamma) + c2 gamma.
std::vector<double> fit_quadratic(std::span<const double> sqrt_gamma, std::span<const double> m_opt);

}  // namespace bpmcmc::tuning
