#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace bpmcmc {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Block-Poisson estimator settings: lambda blocks of Poisson(m) factors.
struct BpConfig {
  int lambda = 10;
  double m = 1.0;

  void validate() const;
  /// Lag-1 correlation of log|L| implied by refreshing one block per step.
  double implied_rho() const { return 1.0 - 1.0 / lambda; }
};

struct Block {
  std::uint32_t chi = 0;
  std::uint64_t epoch = 0;
  std::vector<std::uint64_t> draw_seeds;

  bool operator==(const Block&) const = default;
};

enum class CountMode { poisson, fixed };

/// Persistent randomness u of the estimator: per-block counts and draw keys,
/// plus the key of the independent draw used for the lower bound.
class BlockRandomStore {
 public:
  BlockRandomStore() = default;

  static BlockRandomStore draw(const BpConfig& config, std::uint64_t master_seed);
  /// Every block holds exactly `per_block` draws (no Poisson counts).
  static BlockRandomStore fixed(int n_blocks, int per_block, std::uint64_t master_seed);
  /// Rebuild from recorded epochs; equal inputs give an equal store.
  static BlockRandomStore regenerate(CountMode mode, double count_param, std::uint64_t master_seed,
                                     std::span<const std::uint64_t> epochs,
                                     std::uint64_t lower_bound_epoch);

  std::size_t n_blocks() const { return blocks_.size(); }
  const Block& block(std::size_t l) const { return blocks_.at(l); }
  const std::vector<Block>& blocks() const { return blocks_; }
  std::uint64_t master_seed() const { return master_seed_; }
  CountMode mode() const { return mode_; }
  double count_param() const { return count_param_; }
  std::uint64_t lower_bound_epoch() const { return lb_epoch_; }
  std::uint64_t lower_bound_key() const;
  std::size_t total_draws() const;
  std::vector<std::uint64_t> epochs() const;

  void refresh(std::size_t l);
  void refresh_lower_bound();

  bool operator==(const BlockRandomStore&) const = default;

 private:
  Block make_block(std::size_t l, std::uint64_t epoch) const;

  std::vector<Block> blocks_;
  std::uint64_t master_seed_ = 0;
  CountMode mode_ = CountMode::poisson;
  double count_param_ = 1.0;
  std::uint64_t lb_epoch_ = 0;
};

BlockRandomStore draw_store(const BpConfig& config, std::uint64_t master_seed);
/// Copy of `store` with block l redrawn; all other blocks unchanged.
BlockRandomStore refresh_block(BlockRandomStore store, std::size_t l);

/// Source of positive unbiased estimates Zhat(theta). Must be a pure function
/// of (theta, key).
class ZHatProvider {
 public:
  virtual ~ZHatProvider() = default;
  virtual double z_hat(std::span<const double> theta, std::uint64_t key) const = 0;
  /// Batch form; providers with per-theta setup cost override this.
  virtual void z_hats(std::span<const double> theta, std::span<const std::uint64_t> keys,
                      std::span<double> out) const;
};

struct EvalPolicy {
  int threads = 1;
};

/// Zhat draws at one theta laid out like the store.
struct ZDraws {
  std::vector<std::vector<double>> blocks;
  double independent = 0.0;
  bool has_independent = false;

  std::size_t count() const;
  /// Mean of the block draws; the independent draw when there are none.
  double pooled_mean() const;
};

ZDraws draw_z(const BlockRandomStore& store, std::span<const double> theta,
              const ZHatProvider& provider, bool with_independent = true,
              const EvalPolicy& policy = {});

struct SignedLogEstimate {
  int sign = 1;
  double log_abs = 0.0;
  double z_p_bar = 0.0;
  int n_negative_factors = 0;
  bool degenerate = false;

  double value() const;
};

/// Soft lower bound a = -nu * Zhat_indep - m * lambda.
double soft_lower_bound(double z_hat_independent, double nu, double m, int lambda);

/// Block-Poisson estimate of exp(B) from draws Bhat^{(h,l)}, lower bound a.
SignedLogEstimate block_poisson_from_b(const BpConfig& config,
                                       const std::vector<std::vector<double>>& b_hats, double a);

/// Same with Bhat = -nu * Zhat; z_p_bar is set from the draws.
SignedLogEstimate block_poisson(const BpConfig& config, const ZDraws& draws, double nu, double a);

SignedLogEstimate estimate(const BpConfig& config, const BlockRandomStore& store,
                           std::span<const double> theta, double nu, double a,
                           const ZHatProvider& provider, const EvalPolicy& policy = {});

}  // namespace bpmcmc
