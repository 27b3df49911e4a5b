#include "bpmcmc/kent.hpp"

#include <gsl/gsl_errno.h>
#include <gsl/gsl_multimin.h>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

namespace bpmcmc::kent {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(std::span<const double> v) {
  double mx = kNegInf;
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

double log_sigmoid(double u) { return u >= 0 ? -std::log1p(std::exp(-u)) : u - std::log1p(std::exp(u)); }
double sigmoid(double u) { return std::exp(log_sigmoid(u)); }
double logit(double p) { return std::log(p) - std::log1p(-p); }

}  // namespace

void KentParams::validate() const {
  if (!(kappa > 0.0) || !std::isfinite(kappa)) throw ConfigError("kappa must be positive");
  if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
  if (!(2.0 * beta < kappa)) throw ConfigError("Kent parameters need 2 beta < kappa");
  if (!(psi >= 0.0 && psi <= kPi)) throw ConfigError("psi must lie in [0, pi]");
  if (!(alpha >= 0.0 && alpha <= 2.0 * kPi)) throw ConfigError("alpha must lie in [0, 2 pi]");
  if (!(eta >= 0.0 && eta <= kPi)) throw ConfigError("eta must lie in [0, pi]");
}

KentParams KentParams::from_array(std::span<const double> v) {
  if (v.size() != 5) throw ConfigError("Kent parameter vector needs five entries");
  return {v[0], v[1], v[2], v[3], v[4]};
}

Frame frame_from_angles(double psi, double alpha, double eta) {
  const double ca = std::cos(alpha), sa = std::sin(alpha);
  const double ce = std::cos(eta), se = std::sin(eta);
  const double cp = std::cos(psi), sp = std::sin(psi);
  const Vec3 g1(ca, sa * ce, sa * se);
  const Vec3 e2(-sa, ca * ce, ca * se);
  const Vec3 e3(0.0, -se, ce);
  Frame g;
  g.col(0) = g1;
  g.col(1) = cp * e2 + sp * e3;
  g.col(2) = -sp * e2 + cp * e3;
  return g;
}

Angles angles_from_frame(const Frame& g) {
  const Vec3 g1 = g.col(0).normalized();
  Angles a;
  a.alpha = std::acos(std::clamp(g1.x(), -1.0, 1.0));
  const double r = std::hypot(g1.y(), g1.z());
  a.eta = r > 1e-15 ? std::atan2(g1.z(), g1.y()) : 0.0;
  if (a.eta < 0.0) {
    a.eta += kPi;
    a.alpha = 2.0 * kPi - a.alpha;
  }
  const Frame base = frame_from_angles(0.0, a.alpha, a.eta);
  const Vec3 g2 = g.col(1);
  a.psi = std::atan2(g2.dot(base.col(2)), g2.dot(base.col(1)));
  if (a.psi < 0.0) a.psi += kPi;
  if (a.psi >= kPi) a.psi -= kPi;
  return a;
}

double log_f(double kappa, double beta, const Frame& g, const Vec3& y) {
  const double t2 = g.col(1).dot(y);
  const double t3 = g.col(2).dot(y);
  return kappa * g.col(0).dot(y) + beta * (t2 * t2 - t3 * t3);
}

double log_f(const KentParams& p, const Vec3& y) {
  return log_f(p.kappa, p.beta, frame_from_angles(p.psi, p.alpha, p.eta), y);
}

namespace {

std::vector<double> log_bessel_sequence(int n_max, double x, int top_hint) {
  if (!(x > 0.0) || !std::isfinite(x)) throw ConfigError("Bessel argument must be positive and finite");
  if (n_max < 0) throw ConfigError("Bessel order index must be non-negative");
  std::vector<double> out(static_cast<std::size_t>(n_max) + 1);
  // log I_{1/2}(x) = log sqrt(2 / (pi x)) + log sinh x
  const double log_sinh = x > 20.0 ? x - std::numbers::ln2 + std::log1p(-std::exp(-2.0 * x))
                                   : std::log(std::sinh(x));
  out[0] = 0.5 * std::log(2.0 / (kPi * x)) + log_sinh;
  if (n_max == 0) return out;
  // Ratios R_k = I_{k+1/2} / I_{k-1/2} by backward recurrence from a high start.
  const int top = std::max({top_hint, n_max + 60, static_cast<int>(std::ceil(x)) + 60});
  std::vector<double> log_ratio(static_cast<std::size_t>(n_max) + 1, 0.0);
  double R = 0.0;
  for (int k = top; k >= 1; --k) {
    R = 1.0 / ((2.0 * k + 1.0) / x + R);
    if (k <= n_max) log_ratio[static_cast<std::size_t>(k)] = std::log(R);
  }
  for (int k = 1; k <= n_max; ++k)
    out[static_cast<std::size_t>(k)] = out[static_cast<std::size_t>(k - 1)] + log_ratio[static_cast<std::size_t>(k)];
  return out;
}

}  // namespace

std::vector<double> log_bessel_i_half_sequence(int n_max, double x) {
  return log_bessel_sequence(n_max, x, 0);
}

double log_bessel_i_half(int n, double x) { return log_bessel_i_half_sequence(n, x).back(); }

double bessel_i_half(int n, double x) { return std::exp(log_bessel_i_half(n, x)); }

double log_c_term(int j, double kappa, double beta, std::span<const double> log_i_seq) {
  if (j < 0) throw ConfigError("series index must be non-negative");
  double beta_part = 0.0;
  if (j > 0) {
    if (beta == 0.0) return kNegInf;
    beta_part = 2.0 * j * std::log(beta);
  }
  return std::log(2.0 * kPi) + std::lgamma(j + 0.5) - std::lgamma(j + 1.0) + beta_part -
         (2.0 * j + 0.5) * std::log(kappa / 2.0) + log_i_seq[static_cast<std::size_t>(2 * j)];
}

double log_c_term(int j, double kappa, double beta) {
  const auto seq = log_bessel_i_half_sequence(2 * j, kappa);
  return log_c_term(j, kappa, beta, seq);
}

double c_partial(double kappa, double beta, int K) {
  if (K < 1) throw ConfigError("K must be at least 1");
  const auto seq = log_bessel_i_half_sequence(2 * (K - 1), kappa);
  std::vector<double> terms;
  for (int j = 0; j < K; ++j) terms.push_back(log_c_term(j, kappa, beta, seq));
  return std::exp(log_sum_exp(terms));
}

double log_normaliser(double kappa, double beta) {
  if (!(kappa > 0.0) || !(beta >= 0.0)) throw ConfigError("log_normaliser needs kappa > 0, beta >= 0");
  for (int J = 32; J <= 65536; J *= 2) {
    const auto seq = log_bessel_i_half_sequence(2 * J, kappa);
    std::vector<double> terms;
    double prev = std::numeric_limits<double>::infinity();
    for (int j = 0; j <= J; ++j) {
      const double t = log_c_term(j, kappa, beta, seq);
      terms.push_back(t);
      if (!std::isfinite(t)) return log_sum_exp(terms);
      const double total = log_sum_exp(terms);
      if (t < prev && t - total < std::log(1e-17)) return total;
      prev = t;
    }
  }
  throw NumericalError("normalising-constant series did not converge");
}

void CHatConfig::validate() const {
  if (K < 1) throw ConfigError("K must be at least 1");
  if (tail == TailLaw::poisson && !(tail_param > 0.0)) throw ConfigError("Poisson tail mean must be positive");
  if (tail == TailLaw::geometric && !(tail_param > 0.0 && tail_param < 1.0))
    throw ConfigError("geometric tail probability must lie in (0, 1)");
}

double CHatConfig::log_q(int k) const {
  if (tail == TailLaw::poisson) return -tail_param + k * std::log(tail_param) - std::lgamma(k + 1.0);
  return std::log(tail_param) + k * std::log1p(-tail_param);
}

namespace {

int draw_tail_index(const CHatConfig& config, std::uint64_t key) {
  Rng rng(key);
  if (config.tail == TailLaw::poisson) return std::poisson_distribution<int>(config.tail_param)(rng);
  return std::geometric_distribution<int>(config.tail_param)(rng);
}

// Recurrence start depending only on (kappa, K) so single and batched
// evaluations agree bit for bit.
int recurrence_top(double kappa, int K) { return 2 * K + 260 + static_cast<int>(std::ceil(kappa)); }

}  // namespace

double c_hat(double kappa, double beta, const CHatConfig& config, std::uint64_t key) {
  NormaliserProvider provider(config);
  const double theta[5] = {kappa, beta, 0.0, 0.0, 0.0};
  return provider.z_hat(theta, key);
}

NormaliserProvider::NormaliserProvider(CHatConfig config) : config_(config) { config_.validate(); }

double NormaliserProvider::z_hat(std::span<const double> theta, std::uint64_t key) const {
  double out = 0.0;
  z_hats(theta, std::span(&key, 1), std::span(&out, 1));
  return out;
}

void NormaliserProvider::z_hats(std::span<const double> theta, std::span<const std::uint64_t> keys,
                                std::span<double> out) const {
  const double kappa = theta[0];
  const double beta = theta[1];
  const int K = config_.K;
  std::vector<int> ks(keys.size());
  int k_max = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    ks[i] = draw_tail_index(config_, keys[i]);
    k_max = std::max(k_max, ks[i]);
  }
  const auto seq = log_bessel_sequence(2 * (K + k_max), kappa, recurrence_top(kappa, K));
  std::vector<double> head;
  for (int j = 0; j < K; ++j) head.push_back(log_c_term(j, kappa, beta, seq));
  const double partial = std::exp(log_sum_exp(head));
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const double lt = log_c_term(K + ks[i], kappa, beta, seq);
    out[i] = partial + (std::isfinite(lt) ? std::exp(lt - config_.log_q(ks[i])) : 0.0);
  }
}

std::array<double, 5> to_unconstrained(const KentParams& p) {
  return {std::log(p.kappa), std::log(p.beta), logit(p.psi / kPi), logit(p.alpha / (2.0 * kPi)),
          logit(p.eta / kPi)};
}

KentParams from_unconstrained(std::span<const double> u) {
  return {std::exp(u[0]), std::exp(u[1]), kPi * sigmoid(u[2]), 2.0 * kPi * sigmoid(u[3]),
          kPi * sigmoid(u[4])};
}

double log_prior(const KentParams& p) {
  if (!(p.kappa > 0.0) || !(p.beta >= 0.0) || !(2.0 * p.beta < p.kappa)) return kNegInf;
  if (p.psi < 0.0 || p.psi > kPi || p.alpha < 0.0 || p.alpha > 2.0 * kPi || p.eta < 0.0 || p.eta > kPi)
    return kNegInf;
  // |sin alpha|: alpha spans [0, 2 pi], so this is the area element of gamma1.
  return std::log(2.0 * p.kappa * std::abs(std::sin(p.alpha))) - 3.0 * std::log(kPi) -
         2.0 * std::log1p(p.kappa * p.kappa);
}

double log_prior_unconstrained(std::span<const double> u) {
  const KentParams p = from_unconstrained(u);
  const double lp = log_prior(p);
  if (!std::isfinite(lp)) return kNegInf;
  auto log_dlogistic = [](double v) { return log_sigmoid(v) + log_sigmoid(-v); };
  const double log_jac = u[0] + u[1] + std::log(kPi) + log_dlogistic(u[2]) + std::log(2.0 * kPi) +
                         log_dlogistic(u[3]) + std::log(kPi) + log_dlogistic(u[4]);
  return lp + log_jac;
}

Sufficient sufficient(std::span<const Vec3> ys) {
  Sufficient s;
  s.n = ys.size();
  for (const auto& y : ys) {
    s.sum += y;
    s.scatter += y * y.transpose();
  }
  return s;
}

double log_likelihood_unnormalised(const KentParams& p, const Sufficient& s) {
  const Frame g = frame_from_angles(p.psi, p.alpha, p.eta);
  const Vec3 g2 = g.col(1), g3 = g.col(2);
  return p.kappa * g.col(0).dot(s.sum) +
         p.beta * (g2.dot(s.scatter * g2) - g3.dot(s.scatter * g3));
}

KentModel::KentModel(std::span<const Vec3> ys, CHatConfig chat) : stats_(sufficient(ys)), provider_(chat) {
  if (ys.empty()) throw ConfigError("Kent model needs at least one observation");
}

double KentModel::log_f(std::span<const double> u) const {
  return log_likelihood_unnormalised(from_unconstrained(u), stats_);
}

double KentModel::log_prior(std::span<const double> u) const { return log_prior_unconstrained(u); }

std::vector<double> KentModel::to_natural(std::span<const double> u) const {
  const auto a = from_unconstrained(u).as_array();
  return {a.begin(), a.end()};
}

std::vector<double> KentModel::to_unconstrained(std::span<const double> theta) const {
  const auto a = kent::to_unconstrained(KentParams::from_array(theta));
  return {a.begin(), a.end()};
}

std::vector<std::string> KentModel::parameter_names() const {
  return {"kappa", "beta", "psi", "alpha", "eta"};
}

MomentEstimate moment_estimate(std::span<const Vec3> ys) {
  if (ys.size() < 2) throw ConfigError("moment estimate needs at least two observations");
  const Sufficient s = sufficient(ys);
  const double n = static_cast<double>(s.n);
  const Vec3 mean = s.sum / n;
  const Eigen::Matrix3d S = s.scatter / n;
  MomentEstimate out;
  const double r1 = mean.norm();
  Frame h;
  if (r1 < 1e-12) {
    out.degenerate = true;
    h = Frame::Identity();
  } else {
    Frame tmp = Frame::Identity();
    tmp.col(0) = mean / r1;
    const Angles a = angles_from_frame(tmp);
    h = frame_from_angles(0.0, a.alpha, a.eta);
  }
  const Eigen::Matrix3d B = h.transpose() * S * h;
  const double b22 = B(1, 1), b33 = B(2, 2), b23 = B(1, 2);
  if (std::abs(b23) < 1e-15 && std::abs(b22 - b33) < 1e-15) out.degenerate = true;
  const double psi = 0.5 * std::atan2(2.0 * b23, b22 - b33);
  const double r2 = std::hypot(b22 - b33, 2.0 * b23);
  Frame g;
  g.col(0) = h.col(0);
  g.col(1) = std::cos(psi) * h.col(1) + std::sin(psi) * h.col(2);
  g.col(2) = -std::sin(psi) * h.col(1) + std::cos(psi) * h.col(2);
  const Angles ang = angles_from_frame(g);
  double d_minus = 2.0 - 2.0 * r1 - r2;
  const double d_plus = 2.0 - 2.0 * r1 + r2;
  if (d_minus <= 1e-12) {
    out.degenerate = true;
    d_minus = 1e-12;
  }
  out.params.kappa = 1.0 / d_minus + 1.0 / d_plus;
  out.params.beta = 0.5 * (1.0 / d_minus - 1.0 / d_plus);
  out.params.psi = ang.psi;
  out.params.alpha = ang.alpha;
  out.params.eta = ang.eta;
  return out;
}

KentParams safe_start(std::span<const Vec3> ys) {
  KentParams p = moment_estimate(ys).params;
  p.kappa = std::clamp(p.kappa, 0.1, 1e4);
  p.beta = std::clamp(p.beta, 0.01 * p.kappa, 0.45 * p.kappa);
  const double eps = 1e-3;
  p.psi = std::clamp(p.psi, eps, kPi - eps);
  p.alpha = std::clamp(p.alpha, eps, 2.0 * kPi - eps);
  p.eta = std::clamp(p.eta, eps, kPi - eps);
  return p;
}

namespace {

struct MleProblem {
  Sufficient stats;
};

double mle_objective(const gsl_vector* v, void* params) {
  const auto* prob = static_cast<const MleProblem*>(params);
  const double u[5] = {gsl_vector_get(v, 0), gsl_vector_get(v, 1), gsl_vector_get(v, 2),
                       gsl_vector_get(v, 3), gsl_vector_get(v, 4)};
  const KentParams p = from_unconstrained(u);
  if (!(2.0 * p.beta < p.kappa) || !std::isfinite(p.kappa) || p.kappa > 1e6) return 1e300;
  const double ll = log_likelihood_unnormalised(p, prob->stats) -
                    static_cast<double>(prob->stats.n) * log_normaliser(p.kappa, p.beta);
  return std::isfinite(ll) ? -ll : 1e300;
}

}  // namespace

MleResult fit_mle(std::span<const Vec3> ys, const KentParams& init) {
  if (ys.size() < 2) throw ConfigError("MLE needs at least two observations");
  gsl_set_error_handler_off();
  MleProblem prob{sufficient(ys)};
  gsl_multimin_function fn{&mle_objective, 5, &prob};
  auto start = to_unconstrained(init);
  MleResult res;
  double best = std::numeric_limits<double>::infinity();
  // Two passes: a restart from the first optimum guards against early collapse.
  for (int pass = 0; pass < 2; ++pass) {
    gsl_vector* x = gsl_vector_alloc(5);
    gsl_vector* step = gsl_vector_alloc(5);
    for (std::size_t i = 0; i < 5; ++i) {
      gsl_vector_set(x, i, start[i]);
      gsl_vector_set(step, i, 0.1);
    }
    gsl_multimin_fminimizer* m = gsl_multimin_fminimizer_alloc(gsl_multimin_fminimizer_nmsimplex2, 5);
    gsl_multimin_fminimizer_set(m, &fn, x, step);
    int status = GSL_CONTINUE;
    int it = 0;
    while (status == GSL_CONTINUE && it < 20000) {
      ++it;
      if (gsl_multimin_fminimizer_iterate(m)) break;
      status = gsl_multimin_test_size(gsl_multimin_fminimizer_size(m), 1e-7);
    }
    res.iterations += it;
    res.converged = status == GSL_SUCCESS;
    if (m->fval < best) {
      best = m->fval;
      for (std::size_t i = 0; i < 5; ++i) start[i] = gsl_vector_get(m->x, i);
    }
    gsl_multimin_fminimizer_free(m);
    gsl_vector_free(step);
    gsl_vector_free(x);
  }
  res.params = from_unconstrained(start);
  res.log_lik = -best;
  return res;
}

MleResult fit_mle(std::span<const Vec3> ys) { return fit_mle(ys, safe_start(ys)); }

BayesFit fit_bayes(std::span<const Vec3> ys, const BayesFitConfig& config, std::uint64_t seed) {
  KentModel model(ys, config.chat);
  BlockPoissonEstimator estimator(config.bp);
  ProposalConfig prop;
  prop.kind = ProposalConfig::Kind::adaptive_rw;
  prop.step = config.initial_step;
  prop.target_accept = config.target_accept;
  const auto init = safe_start(ys).as_array();
  BayesFit fit;
  fit.chain = run_chain(model, estimator, PmmhConfig{}, prop, config.n_iter, seed, init);
  fit.burn_in = static_cast<std::size_t>(config.burn_in_fraction * static_cast<double>(config.n_iter));
  std::array<double, 5> mean{};
  for (std::size_t k = 0; k < 5; ++k)
    mean[k] = sign_corrected_expectation(fit.chain, [k](const ChainSample& s) { return s.theta[k]; },
                                         fit.burn_in)
                  .value;
  fit.posterior_mean = KentParams::from_array(mean);
  fit.ratio_mean = sign_corrected_expectation(
                       fit.chain, [](const ChainSample& s) { return s.theta[1] / s.theta[0]; }, fit.burn_in)
                       .value;
  return fit;
}

std::vector<Vec3> sample(const KentParams& p, std::size_t n, std::uint64_t key) {
  p.validate();
  const Frame g = frame_from_angles(p.psi, p.alpha, p.eta);
  Rng rng(key);
  std::normal_distribution<double> z;
  std::vector<Vec3> out;
  out.reserve(n);
  // With 2 beta < kappa the density peaks at gamma1, so exp(kappa) bounds f.
  while (out.size() < n) {
    Vec3 y(z(rng), z(rng), z(rng));
    const double r = y.norm();
    if (r == 0.0) continue;
    y /= r;
    if (std::log(rng.uniform_pos()) < log_f(p.kappa, p.beta, g, y) - p.kappa) out.push_back(y);
  }
  return out;
}

PredictiveMixture predictive_mixture(const BayesFit& fit, const CHatConfig& chat, const BpConfig& bp,
                                     int n_nu, std::size_t max_draws, std::uint64_t seed) {
  if (n_nu < 1 || max_draws < 1) throw ConfigError("predictive mixture needs n_nu >= 1 and draws >= 1");
  const std::size_t avail = fit.chain.size() - fit.burn_in;
  const std::size_t stride = std::max<std::size_t>(1, avail / max_draws);
  NormaliserProvider provider(chat);
  PredictiveMixture mix;
  for (std::size_t i = fit.burn_in; i < fit.chain.size(); i += stride) {
    const auto& s = fit.chain[i];
    const auto key = substream_key(seed, StreamTag::auxiliary, {i});
    const double c_i = provider.z_hat(s.theta, key);
    Rng rng(substream_key(key, {1}));
    // Importance correction E_{nu ~ Exp(c_i)}[Ehat(exp(-nu c)) / exp(-nu c_i)].
    double corr = 0.0;
    for (int r = 0; r < n_nu; ++r) {
      const double nu = std::exponential_distribution<double>(c_i)(rng);
      const auto store = draw_store(bp, substream_key(key, {2, static_cast<std::uint64_t>(r)}));
      const auto draws = draw_z(store, s.theta, provider);
      const double a = soft_lower_bound(draws.independent, nu, bp.m, bp.lambda);
      const auto est = block_poisson(bp, draws, nu, a);
      if (!est.degenerate) corr += est.sign * std::exp(est.log_abs + nu * c_i);
    }
    corr /= n_nu;
    mix.draws.push_back(KentParams::from_array(s.theta));
    mix.weights.push_back(s.sign * corr / c_i);
    mix.sign_sum += s.sign;
  }
  return mix;
}

double log_predictive(const PredictiveMixture& mix, const Vec3& y) {
  std::vector<double> la(mix.draws.size());
  double mx = kNegInf;
  for (std::size_t i = 0; i < mix.draws.size(); ++i) {
    la[i] = log_f(mix.draws[i], y);
    mx = std::max(mx, la[i]);
  }
  double s = 0.0;
  for (std::size_t i = 0; i < la.size(); ++i) s += mix.weights[i] * std::exp(la[i] - mx);
  if (!(s > 0.0) || !(mix.sign_sum > 0.0)) return kNegInf;
  return mx + std::log(s / mix.sign_sum);
}

double log_density(const KentParams& p, const Vec3& y) {
  return log_f(p, y) - log_normaliser(p.kappa, p.beta);
}

Classification classify(std::span<const double> log_scores) {
  if (log_scores.empty()) throw ConfigError("classification needs at least one group");
  Classification c;
  for (std::size_t g = 1; g < log_scores.size(); ++g)
    if (log_scores[g] > log_scores[static_cast<std::size_t>(c.label)]) c.label = static_cast<int>(g);
  for (std::size_t g = 0; g < log_scores.size(); ++g)
    if (static_cast<int>(g) != c.label && log_scores[g] == log_scores[static_cast<std::size_t>(c.label)])
      c.tie = true;
  return c;
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    cell.erase(0, cell.find_first_not_of(" \t\r"));
    cell.erase(cell.find_last_not_of(" \t\r") + 1);
    out.push_back(cell);
  }
  return out;
}

}  // namespace

KentData read_kent_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("Kent CSV is empty");
  const auto header = split_csv(line);
  int ix = -1, iy = -1, iz = -1, ig = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == "x") ix = static_cast<int>(c);
    else if (header[c] == "y") iy = static_cast<int>(c);
    else if (header[c] == "z") iz = static_cast<int>(c);
    else if (header[c] == "group") ig = static_cast<int>(c);
  }
  if (ix < 0 || iy < 0 || iz < 0) throw ConfigError("Kent CSV needs x, y and z columns");
  KentData d;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv(line);
    if (cells.size() != header.size())
      throw ConfigError("Kent CSV row " + std::to_string(row) + " has the wrong number of fields");
    try {
      Vec3 y(std::stod(cells[static_cast<std::size_t>(ix)]), std::stod(cells[static_cast<std::size_t>(iy)]),
             std::stod(cells[static_cast<std::size_t>(iz)]));
      const double r = y.norm();
      if (std::abs(r - 1.0) > 1e-4)
        throw ConfigError("Kent CSV row " + std::to_string(row) + " is not a unit vector");
      d.y.push_back(y / r);
      if (ig >= 0) d.group.push_back(std::stoi(cells[static_cast<std::size_t>(ig)]));
    } catch (const std::logic_error& e) {
      if (dynamic_cast<const ConfigError*>(&e)) throw;
      throw ConfigError("Kent CSV row " + std::to_string(row) + " is not numeric");
    }
  }
  if (d.y.empty()) throw ConfigError("Kent CSV has no observations");
  return d;
}

void write_kent_csv(std::ostream& out, const KentData& data) {
  const bool grouped = !data.group.empty();
  out << (grouped ? "x,y,z,group\n" : "x,y,z\n");
  out.precision(17);
  for (std::size_t i = 0; i < data.y.size(); ++i) {
    out << data.y[i].x() << ',' << data.y[i].y() << ',' << data.y[i].z();
    if (grouped) out << ',' << data.group[i];
    out << '\n';
  }
}

FitMethod parse_method(const std::string& name) {
  if (name == "bayes") return FitMethod::bayes;
  if (name == "moment") return FitMethod::moment;
  if (name == "mle") return FitMethod::mle;
  throw ConfigError("unknown Kent fitting method '" + name + "' (use bayes, moment or mle)");
}

std::string method_name(FitMethod m) {
  switch (m) {
    case FitMethod::bayes: return "bayes";
    case FitMethod::moment: return "moment";
    case FitMethod::mle: return "mle";
  }
  return "?";
}

CvResult cross_validate(const KentData& data, FitMethod method, int folds, const BayesFitConfig& bayes,
                        std::uint64_t seed) {
  if (data.group.size() != data.y.size()) throw ConfigError("cross-validation needs a group column");
  if (folds < 2) throw ConfigError("cross-validation needs at least two folds");
  std::map<int, std::vector<std::size_t>> by_group;
  for (std::size_t i = 0; i < data.y.size(); ++i) by_group[data.group[i]].push_back(i);
  if (by_group.size() < 2) throw ConfigError("cross-validation needs at least two groups");
  std::vector<int> labels;
  std::vector<int> fold_of(data.y.size());
  Rng rng(substream_key(seed, StreamTag::data));
  for (auto& [g, idx] : by_group) {
    labels.push_back(g);
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t k = 0; k < idx.size(); ++k) fold_of[idx[k]] = static_cast<int>(k % static_cast<std::size_t>(folds));
  }

  CvResult res{method, {}, {}, 0};
  for (int f = 0; f < folds; ++f) {
    std::vector<std::function<double(const Vec3&)>> scorers;
    for (std::size_t gi = 0; gi < labels.size(); ++gi) {
      std::vector<Vec3> train;
      for (std::size_t i : by_group[labels[gi]])
        if (fold_of[i] != f) train.push_back(data.y[i]);
      const auto key = substream_key(seed, StreamTag::replicate, {static_cast<std::uint64_t>(f), gi});
      if (method == FitMethod::bayes) {
        const auto fit = fit_bayes(train, bayes, key);
        auto mix = std::make_shared<PredictiveMixture>(predictive_mixture(fit, bayes.chat, bayes.bp, 10, 500, key));
        scorers.emplace_back([mix](const Vec3& y) { return log_predictive(*mix, y); });
      } else {
        const KentParams p = method == FitMethod::moment ? safe_start(train) : fit_mle(train).params;
        const double lc = log_normaliser(p.kappa, p.beta);
        scorers.emplace_back([p, lc](const Vec3& y) { return log_f(p, y) - lc; });
      }
    }
    std::size_t test_n = 0, test_ok = 0, train_n = 0, train_ok = 0;
    for (std::size_t i = 0; i < data.y.size(); ++i) {
      std::vector<double> scores;
      for (auto& s : scorers) scores.push_back(s(data.y[i]));
      const auto c = classify(scores);
      if (c.tie) ++res.ties;
      const bool ok = labels[static_cast<std::size_t>(c.label)] == data.group[i];
      if (fold_of[i] == f) {
        ++test_n;
        test_ok += ok;
      } else {
        ++train_n;
        train_ok += ok;
      }
    }
    res.test_accuracy.push_back(static_cast<double>(test_ok) / static_cast<double>(test_n));
    res.train_accuracy.push_back(static_cast<double>(train_ok) / static_cast<double>(train_n));
  }
  return res;
}

namespace {

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

KentParams point_estimate(std::span<const Vec3> ys, FitMethod method) {
  if (method == FitMethod::moment) return moment_estimate(ys).params;
  if (method == FitMethod::mle) return fit_mle(ys).params;
  throw ConfigError("bootstrap supports the moment and mle methods");
}

}  // namespace

std::vector<BootstrapInterval> bootstrap(std::span<const Vec3> ys, FitMethod method, int n_boot,
                                         double level, std::uint64_t seed) {
  if (n_boot < 2) throw ConfigError("bootstrap needs at least two resamples");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("bootstrap level must lie in (0, 1)");
  const KentParams full = point_estimate(ys, method);
  std::vector<double> b, k, r;
  std::vector<Vec3> resample(ys.size());
  for (int rep = 0; rep < n_boot; ++rep) {
    Rng rng(substream_key(seed, StreamTag::replicate, {static_cast<std::uint64_t>(rep)}));
    for (auto& y : resample) y = ys[rng.below(static_cast<std::uint32_t>(ys.size()))];
    const KentParams p = point_estimate(resample, method);
    b.push_back(p.beta);
    k.push_back(p.kappa);
    r.push_back(p.beta / p.kappa);
  }
  const double lo = (1.0 - level) / 2.0, hi = 1.0 - lo;
  return {{"beta", full.beta, percentile(b, lo), percentile(b, hi)},
          {"kappa", full.kappa, percentile(k, lo), percentile(k, hi)},
          {"beta_over_kappa", full.beta / full.kappa, percentile(r, lo), percentile(r, hi)}};
}

}  // namespace bpmcmc::kent
