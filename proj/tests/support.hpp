#pragma once

#include <cmath>
#include <random>
#include <span>

#include "bpmcmc/bp_core.hpp"
#include "bpmcmc/pmmh.hpp"
#include "bpmcmc/random.hpp"

namespace bpmcmc::testing {

// Zhat ~ N(mean, sd^2) from the key alone; with nu = 1, Bhat = -Zhat.
class GaussianProvider final : public ZHatProvider {
 public:
  GaussianProvider(double mean, double sd) : mean_(mean), sd_(sd) {}
  double z_hat(std::span<const double>, std::uint64_t key) const override {
    Rng rng(key);
    return mean_ + sd_ * std::normal_distribution<double>()(rng);
  }

 private:
  double mean_;
  double sd_;
};

// Z(theta) = 1 / theta times an optional mean-one log-normal error.
class InverseProvider final : public ZHatProvider {
 public:
  explicit InverseProvider(double log_sd = 0.0) : s_(log_sd) {}
  double z_hat(std::span<const double> theta, std::uint64_t key) const override {
    if (s_ == 0.0) return 1.0 / theta[0];
    Rng rng(key);
    const double e = std::normal_distribution<double>(-0.5 * s_ * s_, s_)(rng);
    return std::exp(e) / theta[0];
  }

 private:
  double s_;
};

// Exponential observations with rate theta and a Gamma(a0, b0) prior; the
// sampler works on log theta. Posterior is Gamma(a0 + n, b0 + sum y).
class ExponentialModel final : public DoublyIntractableModel {
 public:
  ExponentialModel(double n, double sum_y, double a0, double b0, double log_sd)
      : n_(n), sum_(sum_y), a0_(a0), b0_(b0), provider_(log_sd) {}
  std::size_t dim() const override { return 1; }
  double log_f(std::span<const double> u) const override { return -std::exp(u[0]) * sum_; }
  double log_prior(std::span<const double> u) const override {
    return a0_ * u[0] - b0_ * std::exp(u[0]);
  }
  const ZHatProvider& provider() const override { return provider_; }
  std::vector<double> to_natural(std::span<const double> u) const override { return {std::exp(u[0])}; }
  std::vector<double> to_unconstrained(std::span<const double> t) const override {
    return {std::log(t[0])};
  }
  double n_auxiliary() const override { return n_; }
  double posterior_mean() const { return (a0_ + n_) / (b0_ + sum_); }
  double posterior_sd() const { return std::sqrt(a0_ + n_) / (b0_ + sum_); }

 private:
  double n_, sum_, a0_, b0_;
  InverseProvider provider_;
};

// Tractable target: Zhat = 1 exactly, log f a standard normal in `dim` coordinates.
class GaussianTarget final : public DoublyIntractableModel {
 public:
  explicit GaussianTarget(std::size_t d) : d_(d) {}
  std::size_t dim() const override { return d_; }
  double log_f(std::span<const double> u) const override {
    double s = 0.0;
    for (double x : u) s += x * x;
    return -0.5 * s;
  }
  double log_prior(std::span<const double>) const override { return 0.0; }
  const ZHatProvider& provider() const override { return one_; }

 private:
  class One final : public ZHatProvider {
   public:
    double z_hat(std::span<const double>, std::uint64_t) const override { return 1.0; }
  };
  std::size_t d_;
  One one_;
};

}  // namespace bpmcmc::testing
