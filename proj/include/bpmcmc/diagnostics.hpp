#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bpmcmc/pmmh.hpp"

namespace bpmcmc {

/// Integrated autocorrelation time by Geyer's initial monotone sequence.
/// Needs at least 100 samples; a constant series gives 1.
double iact(std::span<const double> x);

/// IACT of psi * s scaled by 1 / (2 tau - 1)^2, tau the positive-sign fraction.
double signed_iact(std::span<const double> psi, std::span<const int> signs);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return lo <= x && x <= hi; }
};

/// Shortest interval holding `mass` of the empirical distribution.
Interval hpd(std::span<const double> x, double mass = 0.95);
/// Signed version: weights s_i / sum s over the sorted sample.
Interval hpd(std::span<const double> x, std::span<const int> signs, double mass = 0.95);

struct ChainSummary {
  std::string parameter;
  std::size_t n = 0;
  std::size_t burn_in = 0;
  double mean = 0.0;
  double sd = 0.0;
  double hpd_lo = 0.0;
  double hpd_hi = 0.0;
  double iact = 0.0;  // sign-adjusted
  double ess = 0.0;
  double iact_raw = 0.0;  // theta alone, signs ignored
  double ess_raw = 0.0;
  double ess_per_sec = 0.0;
  double acceptance_rate = 0.0;
  double negative_fraction = 0.0;
  double runtime_sec = 0.0;
  bool sign_reliable = true;
};

ChainSummary summarize(std::span<const ChainSample> chain, std::size_t param,
                       const std::string& name, std::size_t burn_in, double runtime_sec);

double rmse(std::span<const double> estimates, double truth);

}  // namespace bpmcmc
