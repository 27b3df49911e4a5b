#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "bpmcmc/bp_core.hpp"
#include "bpmcmc/pmmh.hpp"
#include "bpmcmc/random.hpp"

namespace bpmcmc::ising {

/// L x L lattice of +-1 spins with free boundaries.
class Lattice {
 public:
  explicit Lattice(int L = 1, std::int8_t fill = 1);
  Lattice(int L, std::vector<std::int8_t> spins);

  int size() const { return L_; }
  std::int8_t operator()(int i, int j) const { return s_[static_cast<std::size_t>(i * L_ + j)]; }
  void set(int i, int j, std::int8_t v);
  const std::vector<std::int8_t>& spins() const { return s_; }
  /// Sum of the spins at the free-boundary neighbours of (i, j).
  int neighbour_sum(int i, int j) const;

  bool operator==(const Lattice&) const = default;

 private:
  int L_;
  std::vector<std::int8_t> s_;
};

/// S(y): sum over horizontally and vertically adjacent pairs of y_a y_b.
long sufficient_stat(const Lattice& y);
/// Change in S(y) when the spin at (i, j) is flipped.
int delta_s(const Lattice& y, int i, int j);

/// log of the sum of exp(theta S(y)) over all 2^(L^2) configurations; L <= 4.
double exact_log_z(int L, double theta);

struct ExactPosterior {
  double mean = 0.0;
  double sd = 0.0;
};

/// Posterior of theta under a U[0, 1] prior by enumeration and quadrature; L <= 4.
ExactPosterior exact_posterior(const Lattice& y);

enum class Scan { random_site, raster };

/// One sweep (L^2 single-site heat-bath updates) targeting exp(beta theta S).
void gibbs_sweep(Lattice& y, double theta, Rng& rng, Scan scan = Scan::raster, double beta = 1.0);

struct AisConfig {
  int n_particles = 100;
  int n_temps = 4000;  // rungs beta_0 = 0 < ... < beta_{n-1} = 1, equally spaced

  void validate() const;
};

/// log of the AIS estimate of Z(theta); one random-site update per rung.
double ais_log_z_hat(int L, double theta, const AisConfig& config, std::uint64_t key);
/// Log importance weights of the individual particles.
std::vector<double> ais_log_weights(int L, double theta, const AisConfig& config, std::uint64_t key);

/// Zhat(theta) / 2^(L^2) by AIS. The constant factor cancels in the sampler
/// and keeps values in floating-point range.
class AisProvider final : public ZHatProvider {
 public:
  AisProvider(int L, AisConfig config);
  double z_hat(std::span<const double> theta, std::uint64_t key) const override;
  /// Shares the heat-bath tables of all rungs across the batch.
  void z_hats(std::span<const double> theta, std::span<const std::uint64_t> keys,
              std::span<double> out) const override;
  const AisConfig& config() const { return config_; }
  int lattice_size() const { return L_; }

 private:
  int L_;
  AisConfig config_;
};

class CoalescenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

inline constexpr std::uint64_t kDefaultMaxSweeps = std::uint64_t{1} << 20;

/// Exact draw from the Ising model by monotone coupling from the past.
Lattice perfect_sample(int L, double theta, std::uint64_t key,
                       std::uint64_t max_sweeps = kDefaultMaxSweeps);

/// Dataset at theta_true whose statistic is nearest the mean over `candidates` exact draws.
Lattice typical_dataset(int L, double theta_true, int candidates, std::uint64_t seed);

/// Posterior of theta given one lattice, U[0, 1] prior.
class IsingModel final : public DoublyIntractableModel {
 public:
  IsingModel(Lattice data, AisConfig ais);

  std::size_t dim() const override { return 1; }
  double log_f(std::span<const double> theta) const override;
  double log_prior(std::span<const double> theta) const override;
  const ZHatProvider& provider() const override { return provider_; }
  std::vector<std::string> parameter_names() const override { return {"theta"}; }

  const Lattice& data() const { return data_; }
  long statistic() const { return stat_; }

 private:
  Lattice data_;
  long stat_;
  AisProvider provider_;
};

/// -nu mean(Z) - nu^2 var(Z) / (2 M): log of an approximately unbiased
/// estimate of exp(-nu Z) from M draws.
double bias_corrected_log_estimate(std::span<const double> z_draws, double nu);

/// Positive, biased alternative to the block-Poisson estimator: n_blocks
/// blocks of per_block single-particle draws, one block refreshed per step.
class BiasCorrectedEstimator final : public ExpEstimator {
 public:
  BiasCorrectedEstimator(int n_blocks, int per_block);
  BlockRandomStore initial_store(std::uint64_t seed) const override;
  bool needs_independent() const override { return false; }
  SignedLogEstimate finish(const ZDraws& draws, double nu) const override;

 private:
  int n_blocks_;
  int per_block_;
};

struct ExchangeState {
  double theta = 0.0;
  std::uint64_t iteration = 0;
  Rng rng;
};

/// Fresh-key retries of the auxiliary draw before a coalescence failure propagates.
inline constexpr std::uint64_t kExchangeAttempts = 3;

/// Exchange-algorithm update with an exactly simulated auxiliary lattice.
ChainSample exchange_step(ExchangeState& state, const Lattice& data, double step);

std::vector<ChainSample> run_exchange(const Lattice& data, std::size_t n_iter, std::uint64_t seed,
                                      double init_theta, double step = 0.07);

/// Text format: first line L, then L rows of L values in {-1, +1}.
Lattice read_lattice(std::istream& in);
void write_lattice(std::ostream& out, const Lattice& y);

}  // namespace bpmcmc::ising
