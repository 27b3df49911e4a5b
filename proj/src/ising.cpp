#include "bpmcmc/ising.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

namespace bpmcmc::ising {

Lattice::Lattice(int L, std::int8_t fill) : L_(L) {
  if (L < 1) throw ConfigError("lattice size must be positive");
  if (fill != 1 && fill != -1) throw ConfigError("spins must be +1 or -1");
  s_.assign(static_cast<std::size_t>(L) * static_cast<std::size_t>(L), fill);
}

Lattice::Lattice(int L, std::vector<std::int8_t> spins) : L_(L), s_(std::move(spins)) {
  if (L < 1) throw ConfigError("lattice size must be positive");
  if (s_.size() != static_cast<std::size_t>(L) * static_cast<std::size_t>(L))
    throw ConfigError("lattice needs L^2 spins");
  for (auto v : s_)
    if (v != 1 && v != -1) throw ConfigError("spins must be +1 or -1");
}

void Lattice::set(int i, int j, std::int8_t v) {
  if (v != 1 && v != -1) throw ConfigError("spins must be +1 or -1");
  s_.at(static_cast<std::size_t>(i * L_ + j)) = v;
}

int Lattice::neighbour_sum(int i, int j) const {
  int s = 0;
  if (i > 0) s += (*this)(i - 1, j);
  if (i + 1 < L_) s += (*this)(i + 1, j);
  if (j > 0) s += (*this)(i, j - 1);
  if (j + 1 < L_) s += (*this)(i, j + 1);
  return s;
}

long sufficient_stat(const Lattice& y) {
  const int L = y.size();
  long s = 0;
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) {
      if (i + 1 < L) s += y(i, j) * y(i + 1, j);
      if (j + 1 < L) s += y(i, j) * y(i, j + 1);
    }
  return s;
}

int delta_s(const Lattice& y, int i, int j) { return -2 * y(i, j) * y.neighbour_sum(i, j); }

namespace {

// Counts of each value of S over all configurations, as (S, log count).
const std::vector<std::pair<long, double>>& stat_histogram(int L) {
  static std::mutex mu;
  static std::map<int, std::vector<std::pair<long, double>>> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(L);
  if (it != cache.end()) return it->second;
  const int n = L * L;
  std::map<long, double> counts;
  for (std::uint32_t code = 0; code < (std::uint32_t{1} << n); ++code) {
    std::vector<std::int8_t> s(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) s[static_cast<std::size_t>(k)] = (code >> k) & 1U ? 1 : -1;
    counts[sufficient_stat(Lattice(L, std::move(s)))] += 1.0;
  }
  std::vector<std::pair<long, double>> h;
  for (auto [s, c] : counts) h.emplace_back(s, std::log(c));
  return cache.emplace(L, std::move(h)).first->second;
}

}  // namespace

double exact_log_z(int L, double theta) {
  if (L < 1 || L > 4) throw ConfigError("exact log Z by enumeration is limited to L <= 4");
  const auto& h = stat_histogram(L);
  double mx = -std::numeric_limits<double>::infinity();
  for (auto [s, lc] : h) mx = std::max(mx, lc + theta * static_cast<double>(s));
  double sum = 0.0;
  for (auto [s, lc] : h) sum += std::exp(lc + theta * static_cast<double>(s) - mx);
  return mx + std::log(sum);
}

ExactPosterior exact_posterior(const Lattice& y) {
  const int L = y.size();
  const double s = static_cast<double>(sufficient_stat(y));
  double shift = -std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 100; ++k) shift = std::max(shift, k / 100.0 * s - exact_log_z(L, k / 100.0));
  auto dens = [&](double t) { return std::exp(t * s - exact_log_z(L, t) - shift); };
  using boost::math::quadrature::gauss_kronrod;
  const double z = gauss_kronrod<double, 61>::integrate(dens, 0.0, 1.0, 15, 1e-12);
  const double m1 =
      gauss_kronrod<double, 61>::integrate([&](double t) { return t * dens(t); }, 0.0, 1.0, 15, 1e-12);
  const double m2 = gauss_kronrod<double, 61>::integrate([&](double t) { return t * t * dens(t); },
                                                         0.0, 1.0, 15, 1e-12);
  ExactPosterior p;
  p.mean = m1 / z;
  p.sd = std::sqrt(std::max(0.0, m2 / z - p.mean * p.mean));
  return p;
}

namespace {

// Heat-bath probabilities of +1 indexed by neighbour sum + 4.
std::array<double, 9> heat_bath_table(double beta_theta) {
  std::array<double, 9> p{};
  for (int ns = -4; ns <= 4; ++ns) p[static_cast<std::size_t>(ns + 4)] = 1.0 / (1.0 + std::exp(-2.0 * beta_theta * ns));
  return p;
}

// Lattice with a zero border so neighbour sums need no bounds checks.
struct Padded {
  int L;
  int W;
  std::vector<std::int8_t> s;

  explicit Padded(int L_, std::int8_t fill) : L(L_), W(L_ + 2), s(static_cast<std::size_t>(W * W), 0) {
    for (int i = 0; i < L; ++i)
      for (int j = 0; j < L; ++j) at(i, j) = fill;
  }
  std::int8_t& at(int i, int j) { return s[static_cast<std::size_t>((i + 1) * W + j + 1)]; }
  int nsum(std::size_t k) const {
    return s[k - 1] + s[k + 1] + s[k - static_cast<std::size_t>(W)] + s[k + static_cast<std::size_t>(W)];
  }
  std::size_t index(std::uint32_t site) const {
    return static_cast<std::size_t>((static_cast<int>(site) / L + 1) * W + static_cast<int>(site) % L + 1);
  }
  long stat() const {
    long t = 0;
    for (int i = 1; i <= L; ++i)
      for (int j = 1; j <= L; ++j) {
        const auto k = static_cast<std::size_t>(i * W + j);
        t += s[k] * (s[k + 1] + s[k + static_cast<std::size_t>(W)]);
      }
    return t;
  }
  Lattice lattice() const {
    std::vector<std::int8_t> v;
    v.reserve(static_cast<std::size_t>(L * L));
    for (int i = 1; i <= L; ++i)
      for (int j = 1; j <= L; ++j) v.push_back(s[static_cast<std::size_t>(i * W + j)]);
    return Lattice(L, std::move(v));
  }
};

}  // namespace

void gibbs_sweep(Lattice& y, double theta, Rng& rng, Scan scan, double beta) {
  const int L = y.size();
  const auto p = heat_bath_table(beta * theta);
  const int n = L * L;
  for (int k = 0; k < n; ++k) {
    const int site = scan == Scan::raster ? k : static_cast<int>(rng.below(static_cast<std::uint32_t>(n)));
    const int i = site / L;
    const int j = site % L;
    const double u = rng.uniform();
    y.set(i, j, u < p[static_cast<std::size_t>(y.neighbour_sum(i, j) + 4)] ? 1 : -1);
  }
}

void AisConfig::validate() const {
  if (n_particles < 1) throw ConfigError("AIS needs at least one particle");
  if (n_temps < 2) throw ConfigError("AIS needs at least two temperatures");
}

namespace {

// Heat-bath tables for rungs beta_1 .. beta_{N-1}; entry i drives the move to x_{i+1}.
std::vector<std::array<double, 9>> rung_tables(double theta, int n_temps) {
  const int N = n_temps - 1;
  std::vector<std::array<double, 9>> t(static_cast<std::size_t>(std::max(N - 1, 0)));
  for (int i = 0; i + 1 < N; ++i) t[static_cast<std::size_t>(i)] = heat_bath_table(theta * (i + 1) / N);
  return t;
}

std::vector<double> ais_log_weights_tabled(int L, double theta, const AisConfig& config,
                                           std::uint64_t key,
                                           const std::vector<std::array<double, 9>>& tables) {
  const int M = config.n_particles;
  const int N = config.n_temps - 1;  // number of weight increments
  const auto n_sites = static_cast<std::uint32_t>(L * L);
  const double base = static_cast<double>(n_sites) * std::numbers::ln2;

  Padded y(L, 1);
  std::vector<std::uint32_t> index(n_sites);
  for (std::uint32_t site = 0; site < n_sites; ++site) index[site] = static_cast<std::uint32_t>(y.index(site));

  std::vector<double> logw(static_cast<std::size_t>(M));
  // Raw pointers: int8_t stores may alias anything, so keep loop state in locals.
  std::int8_t* const s = y.s.data();
  const std::uint32_t* const site_index = index.data();
  const std::array<double, 9>* const tab = tables.data();
  const std::ptrdiff_t W = y.W;
  for (int k = 0; k < M; ++k) {
    Rng rng(substream_key(key, {static_cast<std::uint64_t>(k)}));
    for (std::uint32_t site = 0; site < n_sites; ++site) s[site_index[site]] = (rng() >> 63) ? 1 : -1;
    long stat = y.stat();
    long long stat_sum = stat;
    for (int i = 0; i + 1 < N; ++i) {
      const std::int8_t* c = s + site_index[rng.below(n_sites)];
      const int ns = c[-1] + c[1] + c[-W] + c[W];
      const std::int8_t v = rng.uniform() < tab[i][static_cast<std::size_t>(ns + 4)] ? 1 : -1;
      stat += (v - *c) * ns;
      *const_cast<std::int8_t*>(c) = v;
      stat_sum += stat;
    }
    logw[static_cast<std::size_t>(k)] = theta * static_cast<double>(stat_sum) / N + base;
  }
  return logw;
}

double log_mean_exp(const std::vector<double>& lw) {
  const double mx = *std::max_element(lw.begin(), lw.end());
  double s = 0.0;
  for (double v : lw) s += std::exp(v - mx);
  return mx + std::log(s / static_cast<double>(lw.size()));
}

}  // namespace

std::vector<double> ais_log_weights(int L, double theta, const AisConfig& config, std::uint64_t key) {
  config.validate();
  if (L < 1) throw ConfigError("lattice size must be positive");
  return ais_log_weights_tabled(L, theta, config, key, rung_tables(theta, config.n_temps));
}

double ais_log_z_hat(int L, double theta, const AisConfig& config, std::uint64_t key) {
  return log_mean_exp(ais_log_weights(L, theta, config, key));
}

AisProvider::AisProvider(int L, AisConfig config) : L_(L), config_(config) {
  if (L < 1) throw ConfigError("lattice size must be positive");
  config_.validate();
}

double AisProvider::z_hat(std::span<const double> theta, std::uint64_t key) const {
  return std::exp(ais_log_z_hat(L_, theta[0], config_, key) -
                  static_cast<double>(L_ * L_) * std::numbers::ln2);
}

void AisProvider::z_hats(std::span<const double> theta, std::span<const std::uint64_t> keys,
                         std::span<double> out) const {
  const auto tables = rung_tables(theta[0], config_.n_temps);
  const double shift = static_cast<double>(L_ * L_) * std::numbers::ln2;
  for (std::size_t i = 0; i < keys.size(); ++i)
    out[i] = std::exp(log_mean_exp(ais_log_weights_tabled(L_, theta[0], config_, keys[i], tables)) - shift);
}

Lattice perfect_sample(int L, double theta, std::uint64_t key, std::uint64_t max_sweeps) {
  if (L < 1) throw ConfigError("lattice size must be positive");
  if (!(theta >= 0.0)) throw ConfigError("monotone coupling needs theta >= 0");
  const auto p = heat_bath_table(theta);
  const int n = L * L;
  for (std::uint64_t T = 1;; T *= 2) {
    if (T > max_sweeps)
      throw CoalescenceError("coupling from the past did not coalesce within " +
                             std::to_string(max_sweeps) + " sweeps");
    Padded up(L, 1);
    Padded lo(L, -1);
    for (std::uint64_t t = T; t >= 1; --t) {
      Rng rng(substream_key(key, {t}));  // randomness of time -t, reused by every epoch
      for (int site = 0; site < n; ++site) {
        const std::size_t idx = up.index(static_cast<std::uint32_t>(site));
        const double u = rng.uniform();
        up.s[idx] = u < p[static_cast<std::size_t>(up.nsum(idx) + 4)] ? 1 : -1;
        lo.s[idx] = u < p[static_cast<std::size_t>(lo.nsum(idx) + 4)] ? 1 : -1;
        if (lo.s[idx] > up.s[idx]) throw NumericalError("monotone coupling violated");
      }
    }
    if (up.s == lo.s) return up.lattice();
  }
}

Lattice typical_dataset(int L, double theta_true, int candidates, std::uint64_t seed) {
  if (candidates < 1) throw ConfigError("need at least one candidate dataset");
  std::vector<Lattice> draws;
  double mean = 0.0;
  for (int c = 0; c < candidates; ++c) {
    draws.push_back(perfect_sample(L, theta_true,
                                   substream_key(seed, StreamTag::data, {static_cast<std::uint64_t>(c)})));
    mean += static_cast<double>(sufficient_stat(draws.back()));
  }
  mean /= candidates;
  std::size_t best = 0;
  for (std::size_t c = 1; c < draws.size(); ++c)
    if (std::abs(sufficient_stat(draws[c]) - mean) < std::abs(sufficient_stat(draws[best]) - mean)) best = c;
  return draws[best];
}

IsingModel::IsingModel(Lattice data, AisConfig ais)
    : data_(std::move(data)), stat_(sufficient_stat(data_)), provider_(data_.size(), ais) {}

double IsingModel::log_f(std::span<const double> theta) const {
  return theta[0] * static_cast<double>(stat_);
}

double IsingModel::log_prior(std::span<const double> theta) const {
  return (theta[0] >= 0.0 && theta[0] <= 1.0) ? 0.0 : -std::numeric_limits<double>::infinity();
}

double bias_corrected_log_estimate(std::span<const double> z_draws, double nu) {
  const auto M = static_cast<double>(z_draws.size());
  if (z_draws.size() < 2) throw ConfigError("bias-corrected estimate needs at least two draws");
  double mean = 0.0;
  for (double z : z_draws) mean += z;
  mean /= M;
  double var = 0.0;
  for (double z : z_draws) var += (z - mean) * (z - mean);
  var /= (M - 1.0);
  return -nu * mean - nu * nu * var / (2.0 * M);
}

BiasCorrectedEstimator::BiasCorrectedEstimator(int n_blocks, int per_block)
    : n_blocks_(n_blocks), per_block_(per_block) {
  if (n_blocks < 1 || per_block < 1 || n_blocks * per_block < 2)
    throw ConfigError("bias-corrected estimator needs at least two draws in total");
}

BlockRandomStore BiasCorrectedEstimator::initial_store(std::uint64_t seed) const {
  return BlockRandomStore::fixed(n_blocks_, per_block_, seed);
}

SignedLogEstimate BiasCorrectedEstimator::finish(const ZDraws& draws, double nu) const {
  std::vector<double> flat;
  flat.reserve(draws.count());
  for (const auto& b : draws.blocks) flat.insert(flat.end(), b.begin(), b.end());
  SignedLogEstimate est;
  est.sign = 1;
  est.log_abs = bias_corrected_log_estimate(flat, nu);
  est.z_p_bar = draws.pooled_mean();
  return est;
}

ChainSample exchange_step(ExchangeState& state, const Lattice& data, double step) {
  const std::uint64_t it = state.iteration++;
  const double theta_p = state.theta + step * std::normal_distribution<double>()(state.rng);
  const double u = state.rng.uniform_pos();
  const std::uint64_t aux_key = state.rng();
  bool accepted = false;
  if (theta_p >= 0.0 && theta_p <= 1.0) {
    Lattice x;
    for (std::uint64_t attempt = 0;; ++attempt) {
      try {
        x = perfect_sample(data.size(), theta_p,
                           substream_key(aux_key, StreamTag::auxiliary, {it, attempt}));
        break;
      } catch (const CoalescenceError&) {
        if (attempt + 1 >= kExchangeAttempts) throw;
      }
    }
    const double log_r = (theta_p - state.theta) *
                         static_cast<double>(sufficient_stat(data) - sufficient_stat(x));
    if (std::log(u) < log_r) {
      state.theta = theta_p;
      accepted = true;
    }
  }
  ChainSample s;
  s.theta = {state.theta};
  s.accepted = accepted;
  return s;
}

std::vector<ChainSample> run_exchange(const Lattice& data, std::size_t n_iter, std::uint64_t seed,
                                      double init_theta, double step) {
  if (!(init_theta >= 0.0 && init_theta <= 1.0)) throw ConfigError("initial theta must lie in [0, 1]");
  ExchangeState st;
  st.theta = init_theta;
  st.rng = Rng(substream_key(seed, StreamTag::chain));
  std::vector<ChainSample> chain;
  chain.reserve(n_iter);
  for (std::size_t i = 0; i < n_iter; ++i) chain.push_back(exchange_step(st, data, step));
  return chain;
}

Lattice read_lattice(std::istream& in) {
  int L = 0;
  if (!(in >> L) || L < 1) throw ConfigError("lattice file: first line must hold a positive size L");
  std::vector<std::int8_t> s;
  s.reserve(static_cast<std::size_t>(L * L));
  for (int k = 0; k < L * L; ++k) {
    int v = 0;
    if (!(in >> v)) throw ConfigError("lattice file: expected " + std::to_string(L * L) + " spins");
    if (v != 1 && v != -1) throw ConfigError("lattice file: spins must be +1 or -1");
    s.push_back(static_cast<std::int8_t>(v));
  }
  return Lattice(L, std::move(s));
}

void write_lattice(std::ostream& out, const Lattice& y) {
  const int L = y.size();
  out << L << '\n';
  for (int i = 0; i < L; ++i) {
    for (int j = 0; j < L; ++j) out << (j ? " " : "") << static_cast<int>(y(i, j));
    out << '\n';
  }
}

}  // namespace bpmcmc::ising
