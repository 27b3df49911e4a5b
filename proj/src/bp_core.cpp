#include "bpmcmc/bp_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <thread>

#include "bpmcmc/random.hpp"

namespace bpmcmc {

void BpConfig::validate() const {
  if (lambda < 1) throw ConfigError("lambda must be a positive integer, got " + std::to_string(lambda));
  if (!(m > 0.0) || !std::isfinite(m)) throw ConfigError("m must be positive and finite");
}

BlockRandomStore BlockRandomStore::draw(const BpConfig& config, std::uint64_t master_seed) {
  config.validate();
  std::vector<std::uint64_t> epochs(static_cast<std::size_t>(config.lambda), 0);
  return regenerate(CountMode::poisson, config.m, master_seed, epochs, 0);
}

BlockRandomStore BlockRandomStore::fixed(int n_blocks, int per_block, std::uint64_t master_seed) {
  if (n_blocks < 1) throw ConfigError("number of blocks must be positive");
  if (per_block < 0) throw ConfigError("draws per block must be non-negative");
  std::vector<std::uint64_t> epochs(static_cast<std::size_t>(n_blocks), 0);
  return regenerate(CountMode::fixed, per_block, master_seed, epochs, 0);
}

BlockRandomStore BlockRandomStore::regenerate(CountMode mode, double count_param,
                                              std::uint64_t master_seed,
                                              std::span<const std::uint64_t> epochs,
                                              std::uint64_t lower_bound_epoch) {
  BlockRandomStore s;
  s.mode_ = mode;
  s.count_param_ = count_param;
  s.master_seed_ = master_seed;
  s.lb_epoch_ = lower_bound_epoch;
  s.blocks_.reserve(epochs.size());
  for (std::size_t l = 0; l < epochs.size(); ++l) s.blocks_.push_back(s.make_block(l, epochs[l]));
  return s;
}

Block BlockRandomStore::make_block(std::size_t l, std::uint64_t epoch) const {
  Block b;
  b.epoch = epoch;
  if (mode_ == CountMode::poisson) {
    Rng rng(substream_key(master_seed_, StreamTag::chi, {l, epoch}));
    std::poisson_distribution<std::uint32_t> pois(count_param_);
    b.chi = pois(rng);
  } else {
    b.chi = static_cast<std::uint32_t>(count_param_);
  }
  b.draw_seeds.resize(b.chi);
  for (std::uint32_t h = 0; h < b.chi; ++h)
    b.draw_seeds[h] = substream_key(master_seed_, StreamTag::draw, {l, epoch, h});
  return b;
}

std::uint64_t BlockRandomStore::lower_bound_key() const {
  return substream_key(master_seed_, StreamTag::lower_bound, {lb_epoch_});
}

std::size_t BlockRandomStore::total_draws() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += b.chi;
  return n;
}

std::vector<std::uint64_t> BlockRandomStore::epochs() const {
  std::vector<std::uint64_t> e;
  e.reserve(blocks_.size());
  for (const auto& b : blocks_) e.push_back(b.epoch);
  return e;
}

void BlockRandomStore::refresh(std::size_t l) {
  if (l >= blocks_.size())
    throw std::out_of_range("block index " + std::to_string(l) + " out of range");
  blocks_[l] = make_block(l, blocks_[l].epoch + 1);
}

void BlockRandomStore::refresh_lower_bound() { ++lb_epoch_; }

BlockRandomStore draw_store(const BpConfig& config, std::uint64_t master_seed) {
  return BlockRandomStore::draw(config, master_seed);
}

BlockRandomStore refresh_block(BlockRandomStore store, std::size_t l) {
  store.refresh(l);
  return store;
}

void ZHatProvider::z_hats(std::span<const double> theta, std::span<const std::uint64_t> keys,
                          std::span<double> out) const {
  for (std::size_t i = 0; i < keys.size(); ++i) out[i] = z_hat(theta, keys[i]);
}

std::size_t ZDraws::count() const {
  std::size_t n = 0;
  for (const auto& b : blocks) n += b.size();
  return n;
}

double ZDraws::pooled_mean() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& b : blocks)
    for (double z : b) {
      sum += z;
      ++n;
    }
  if (n == 0) return independent;
  return sum / static_cast<double>(n);
}

ZDraws draw_z(const BlockRandomStore& store, std::span<const double> theta,
              const ZHatProvider& provider, bool with_independent, const EvalPolicy& policy) {
  std::vector<std::uint64_t> keys;
  keys.reserve(store.total_draws() + 1);
  for (const auto& b : store.blocks()) keys.insert(keys.end(), b.draw_seeds.begin(), b.draw_seeds.end());
  if (with_independent) keys.push_back(store.lower_bound_key());

  std::vector<double> values(keys.size());
  const std::size_t n = keys.size();
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(std::max(policy.threads, 1)), n);
  if (workers <= 1) {
    provider.z_hats(theta, keys, values);
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w) {
      const std::size_t lo = w * chunk;
      const std::size_t hi = std::min(n, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back([&, lo, hi] {
        provider.z_hats(theta, std::span(keys).subspan(lo, hi - lo),
                        std::span(values).subspan(lo, hi - lo));
      });
    }
  }

  ZDraws out;
  out.blocks.resize(store.n_blocks());
  std::size_t pos = 0;
  for (std::size_t l = 0; l < store.n_blocks(); ++l) {
    const auto chi = store.block(l).chi;
    out.blocks[l].assign(values.begin() + static_cast<std::ptrdiff_t>(pos),
                         values.begin() + static_cast<std::ptrdiff_t>(pos + chi));
    pos += chi;
  }
  if (with_independent) {
    out.independent = values[pos];
    out.has_independent = true;
  }
  return out;
}

double SignedLogEstimate::value() const {
  if (degenerate) return 0.0;
  return sign * std::exp(log_abs);
}

double soft_lower_bound(double z_hat_independent, double nu, double m, int lambda) {
  return -nu * z_hat_independent - m * lambda;
}

SignedLogEstimate block_poisson_from_b(const BpConfig& config,
                                       const std::vector<std::vector<double>>& b_hats, double a) {
  const double ml = config.m * config.lambda;
  SignedLogEstimate est;
  double log_abs = a + ml;
  for (const auto& block : b_hats) {
    for (double b : block) {
      const double factor = (b - a) / ml;
      if (factor == 0.0) {
        est.degenerate = true;
        est.sign = 0;
        est.log_abs = -std::numeric_limits<double>::infinity();
        return est;
      }
      if (factor < 0.0) ++est.n_negative_factors;
      log_abs += std::log(std::abs(factor));
    }
  }
  est.log_abs = log_abs;
  est.sign = (est.n_negative_factors % 2 == 0) ? 1 : -1;
  return est;
}

SignedLogEstimate block_poisson(const BpConfig& config, const ZDraws& draws, double nu, double a) {
  std::vector<std::vector<double>> b_hats(draws.blocks.size());
  for (std::size_t l = 0; l < draws.blocks.size(); ++l) {
    b_hats[l].reserve(draws.blocks[l].size());
    for (double z : draws.blocks[l]) b_hats[l].push_back(-nu * z);
  }
  auto est = block_poisson_from_b(config, b_hats, a);
  est.z_p_bar = draws.pooled_mean();
  return est;
}

SignedLogEstimate estimate(const BpConfig& config, const BlockRandomStore& store,
                           std::span<const double> theta, double nu, double a,
                           const ZHatProvider& provider, const EvalPolicy& policy) {
  const auto draws = draw_z(store, theta, provider, store.total_draws() == 0, policy);
  return block_poisson(config, draws, nu, a);
}

}  // namespace bpmcmc
