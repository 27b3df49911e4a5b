#include "bpmcmc/pmmh.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <boost/math/distributions/normal.hpp>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace bpmcmc {

std::vector<std::string> DoublyIntractableModel::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < dim(); ++i) names.push_back("theta" + std::to_string(i));
  return names;
}

BlockPoissonEstimator::BlockPoissonEstimator(BpConfig config) : config_(config) {
  config_.validate();
}

BlockRandomStore BlockPoissonEstimator::initial_store(std::uint64_t seed) const {
  return BlockRandomStore::draw(config_, seed);
}

SignedLogEstimate BlockPoissonEstimator::finish(const ZDraws& draws, double nu) const {
  const double a = soft_lower_bound(draws.independent, nu, config_.m, config_.lambda);
  return block_poisson(config_, draws, nu, a);
}

RandomWalkProposal::RandomWalkProposal(ProposalConfig config, std::size_t dim)
    : config_(config), dim_(dim), scale_(config.step), mean_(dim, 0.0), cov_(dim * dim, 0.0) {
  if (dim == 0) throw ConfigError("proposal dimension must be positive");
  if (!(config.step > 0.0)) throw ConfigError("random-walk step must be positive");
  if (!(config.target_accept > 0.0 && config.target_accept < 1.0))
    throw ConfigError("target acceptance must lie in (0, 1)");
  const double p = config.target_accept;
  const double d = static_cast<double>(dim);
  boost::math::normal_distribution<> std_normal;
  const double alpha = -boost::math::quantile(std_normal, p / 2.0);
  rm_const_ = (1.0 - 1.0 / d) * std::sqrt(2.0 * std::numbers::pi) * std::exp(alpha * alpha / 2.0) /
                  (2.0 * alpha) +
              1.0 / (d * p * (1.0 - p));
  chol_.assign(dim * dim, 0.0);
  for (std::size_t i = 0; i < dim; ++i) chol_[i * dim + i] = 1.0;
}

std::vector<double> RandomWalkProposal::propose(std::span<const double> theta, Rng& rng) const {
  std::normal_distribution<double> z;
  std::vector<double> xi(dim_);
  for (auto& x : xi) x = z(rng);
  std::vector<double> out(theta.begin(), theta.end());
  for (std::size_t i = 0; i < dim_; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j <= i; ++j) s += chol_[i * dim_ + j] * xi[j];
    out[i] += scale_ * s;
  }
  return out;
}

void RandomWalkProposal::adapt(std::span<const double> theta, bool accepted) {
  if (config_.kind != ProposalConfig::Kind::adaptive_rw) return;
  ++n_;
  // Welford update of the running mean and scatter.
  std::vector<double> delta(dim_);
  for (std::size_t i = 0; i < dim_; ++i) {
    delta[i] = theta[i] - mean_[i];
    mean_[i] += delta[i] / static_cast<double>(n_);
  }
  for (std::size_t i = 0; i < dim_; ++i)
    for (std::size_t j = 0; j < dim_; ++j) cov_[i * dim_ + j] += delta[i] * (theta[j] - mean_[j]);

  const double p = config_.target_accept;
  const double i0 = 5.0 / (p * (1.0 - p));
  const double gain = rm_const_ / (i0 + static_cast<double>(n_));
  scale_ *= accepted ? (1.0 + gain * (1.0 - p)) : (1.0 - gain * p);
  scale_ = std::clamp(scale_, 1e-8, 1e8);

  if (dim_ > 1 && n_ >= config_.adapt_after) {
    if (!use_cov_) {
      use_cov_ = true;
      scale_ = 2.38 / std::sqrt(static_cast<double>(dim_));
      refactor();
    } else if (n_ % 50 == 0) {
      refactor();
    }
  }
}

void RandomWalkProposal::refactor() {
  const auto d = static_cast<Eigen::Index>(dim_);
  Eigen::MatrixXd s(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j)
      s(i, j) = cov_[static_cast<std::size_t>(i * d + j)] / static_cast<double>(n_ - 1);
  s += 1e-10 * Eigen::MatrixXd::Identity(d, d);
  Eigen::LLT<Eigen::MatrixXd> llt(s);
  if (llt.info() != Eigen::Success) return;
  const Eigen::MatrixXd l = llt.matrixL();
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) chol_[static_cast<std::size_t>(i * d + j)] = l(i, j);
}

namespace {

double draw_nu(double n_aux, double z_p, Rng& rng) {
  if (n_aux == 1.0) return std::exponential_distribution<double>(z_p)(rng);
  return std::gamma_distribution<double>(n_aux, 1.0 / z_p)(rng);
}

bool usable(double z_p) { return std::isfinite(z_p) && z_p > 0.0; }

}  // namespace

PmmhState initial_state(const DoublyIntractableModel& model, const ExpEstimator& estimator,
                        const PmmhConfig& config, std::span<const double> init_theta,
                        std::uint64_t seed) {
  if (init_theta.size() != model.dim()) throw ConfigError("initial theta has wrong dimension");
  PmmhState s;
  s.theta = model.to_unconstrained(init_theta);
  s.log_prior = model.log_prior(s.theta);
  if (!std::isfinite(s.log_prior)) throw ConfigError("initial theta lies outside the prior support");
  s.log_f = model.log_f(s.theta);
  s.store = estimator.initial_store(substream_key(seed, StreamTag::draw));
  s.rng = Rng(substream_key(seed, StreamTag::chain));
  const auto nat = model.to_natural(s.theta);
  const auto draws =
      draw_z(s.store, nat, model.provider(), estimator.needs_independent(), config.eval);
  const double z_p = draws.pooled_mean();
  if (!usable(z_p)) throw NumericalError("normalising-constant estimate at the initial theta is not positive");
  s.nu = draw_nu(model.n_auxiliary(), z_p, s.rng);
  s.est = estimator.finish(draws, s.nu);
  return s;
}

ChainSample pmmh_step(PmmhState& state, const DoublyIntractableModel& model,
                      const ExpEstimator& estimator, const PmmhConfig& config,
                      RandomWalkProposal& proposal) {
  const std::uint64_t it = state.iteration++;
  BlockRandomStore store = state.store;
  const std::size_t n_blocks = store.n_blocks();
  const std::size_t l = config.schedule == BlockSchedule::cyclic
                            ? static_cast<std::size_t>(it % n_blocks)
                            : state.rng.below(static_cast<std::uint32_t>(n_blocks));
  store.refresh(l);
  if (config.lower_bound == LowerBoundRefresh::every_iteration) store.refresh_lower_bound();

  const auto theta_p = proposal.propose(state.theta, state.rng);
  const double u = state.rng.uniform_pos();
  bool accepted = false;

  const double lp_p = model.log_prior(theta_p);
  if (std::isfinite(lp_p)) {
    const auto nat = model.to_natural(theta_p);
    const auto draws =
        draw_z(store, nat, model.provider(), estimator.needs_independent(), config.eval);
    const double z_p = draws.pooled_mean();
    if (usable(z_p)) {
      const double n = model.n_auxiliary();
      const double nu_p = draw_nu(n, z_p, state.rng);
      const auto est_p = estimator.finish(draws, nu_p);
      if (!est_p.degenerate && std::isfinite(est_p.log_abs)) {
        const double lf_p = model.log_f(theta_p);
        const double z_c = state.est.z_p_bar;
        const double log_r = (est_p.log_abs + lf_p + lp_p) -
                             (state.est.log_abs + state.log_f + state.log_prior) +
                             n * (std::log(z_c) - std::log(z_p)) - state.nu * z_c + nu_p * z_p;
        if (std::log(u) < log_r || state.est.degenerate) {
          accepted = true;
          state.theta = theta_p;
          state.nu = nu_p;
          state.store = std::move(store);
          state.est = est_p;
          state.log_f = lf_p;
          state.log_prior = lp_p;
        }
      }
    }
  }
  proposal.adapt(state.theta, accepted);

  ChainSample sample;
  sample.theta = model.to_natural(state.theta);
  sample.sign = state.est.sign;
  sample.accepted = accepted;
  sample.nu = state.nu;
  sample.log_abs_like = state.est.log_abs;
  return sample;
}

std::vector<ChainSample> run_chain(const DoublyIntractableModel& model,
                                   const ExpEstimator& estimator, const PmmhConfig& config,
                                   const ProposalConfig& proposal_config, std::size_t n_iter,
                                   std::uint64_t seed, std::span<const double> init_theta,
                                   const ProgressFn& progress) {
  auto state = initial_state(model, estimator, config, init_theta, seed);
  RandomWalkProposal proposal(proposal_config, model.dim());
  std::vector<ChainSample> chain;
  chain.reserve(n_iter);
  for (std::size_t i = 0; i < n_iter; ++i) {
    chain.push_back(pmmh_step(state, model, estimator, config, proposal));
    if (progress) progress(i, chain.back());
  }
  return chain;
}

std::vector<ChainSample> run_chain(const DoublyIntractableModel& model, const BpConfig& bp,
                                   const ProposalConfig& proposal, std::size_t n_iter,
                                   std::uint64_t seed, std::span<const double> init_theta) {
  BlockPoissonEstimator estimator(bp);
  return run_chain(model, estimator, PmmhConfig{}, proposal, n_iter, seed, init_theta);
}

SignedExpectation sign_corrected_expectation(std::span<const double> psi,
                                             std::span<const int> signs, std::size_t burn_in) {
  if (psi.size() != signs.size()) throw std::invalid_argument("psi and sign lengths differ");
  SignedExpectation r;
  double num = 0.0;
  double den = 0.0;
  std::size_t neg = 0;
  for (std::size_t i = burn_in; i < psi.size(); ++i) {
    num += psi[i] * signs[i];
    den += signs[i];
    if (signs[i] < 0) ++neg;
    ++r.n;
  }
  if (r.n == 0) throw std::invalid_argument("no samples after burn-in");
  r.sign_sum = den;
  r.negative_fraction = static_cast<double>(neg) / static_cast<double>(r.n);
  r.reliable = std::abs(den) >= 0.02 * static_cast<double>(r.n);
  r.value = den != 0.0 ? num / den : std::numeric_limits<double>::quiet_NaN();
  return r;
}

SignedExpectation sign_corrected_expectation(std::span<const ChainSample> chain,
                                             const std::function<double(const ChainSample&)>& psi,
                                             std::size_t burn_in) {
  std::vector<double> values;
  std::vector<int> signs;
  values.reserve(chain.size());
  signs.reserve(chain.size());
  for (const auto& s : chain) {
    values.push_back(psi(s));
    signs.push_back(s.sign);
  }
  return sign_corrected_expectation(values, signs, burn_in);
}

}  // namespace bpmcmc
