#include "bpmcmc/tuning.hpp"

#include <Eigen/Dense>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <boost/math/tools/minima.hpp>
#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

#include "bpmcmc/diagnostics.hpp"
#include "bpmcmc/random.hpp"

namespace bpmcmc::tuning {

namespace {

double std_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

constexpr double kTail = 1e-12;

}  // namespace

double prob_positive_from_p(double m, int lambda, double p_negative) {
  if (!(m > 0.0) || lambda < 1) throw ConfigError("prob_positive needs m > 0 and lambda >= 1");
  // Psi = 1/2 sum_{j>=1} [1 - (1 - 2p)^j] Pois(j; m), summed to a 1e-12 tail.
  const double q = 1.0 - 2.0 * p_negative;
  double pmf = std::exp(-m);
  double mass = pmf;
  double psi = 0.0;
  double qj = 1.0;
  for (int j = 1; j < 100000; ++j) {
    pmf *= m / j;
    qj *= q;
    mass += pmf;
    psi += (1.0 - qj) * pmf;
    if (1.0 - mass < kTail && j > m) break;
  }
  psi *= 0.5;
  return 0.5 * (1.0 + std::pow(1.0 - 2.0 * psi, lambda));
}

double prob_positive(double m, int lambda, double sigma_b) {
  if (!(sigma_b >= 0.0)) throw ConfigError("sigma_B must be non-negative");
  if (sigma_b == 0.0) return 1.0;
  return prob_positive_from_p(m, lambda, std_normal_cdf(-m * lambda / sigma_b));
}

LogAbsMoments log_abs_moments(double m, int lambda, double sigma_b) {
  if (!(m > 0.0) || lambda < 1) throw ConfigError("log_abs_moments needs m > 0 and lambda >= 1");
  if (!(sigma_b > 0.0)) throw ConfigError("sigma_B must be positive");
  const double ml = m * lambda;
  const double mu = ml * ml / (2.0 * sigma_b * sigma_b);
  double e0 = 0.0;
  double var0 = 0.0;
  double e1 = 0.0;
  LogAbsMoments out;
  out.poisson_mean = mu;
  if (mu > kAsymptoticMean) {
    out.asymptotic = true;
    e0 = std::log(mu) - 1.0 / (2.0 * mu) - 3.0 / (8.0 * mu * mu);
    var0 = 1.0 / mu + 1.5 / (mu * mu);
    e1 = 1.0 / mu + 1.0 / (mu * mu);
  } else {
    const double lo = std::max(0.0, std::floor(mu - 40.0 * std::sqrt(mu) - 10.0));
    double mass = 0.0;
    double s0 = 0.0;
    double s00 = 0.0;
    double s1 = 0.0;
    for (double j = lo;; j += 1.0) {
      const double pmf = std::exp(-mu + j * std::log(mu) - std::lgamma(j + 1.0));
      const double d0 = boost::math::digamma(0.5 + j);
      const double d1 = boost::math::trigamma(0.5 + j);
      mass += pmf;
      s0 += pmf * d0;
      s00 += pmf * d0 * d0;
      s1 += pmf * d1;
      if (j > mu && 1.0 - mass < kTail) break;
      if (j > mu + 200.0 * std::sqrt(mu) + 200.0) break;
    }
    e0 = s0 / mass;
    var0 = std::max(0.0, s00 / mass - e0 * e0);
    e1 = s1 / mass;
  }
  out.eta = std::log(sigma_b / ml) + 0.5 * (std::numbers::ln2 + e0);
  out.nu2 = 0.25 * (e1 + var0);
  out.variance = ml * (out.nu2 + out.eta * out.eta);
  return out;
}

double log_abs_variance(double m, int lambda, double sigma_b) {
  if (sigma_b == 0.0) return 0.0;
  return log_abs_moments(m, lambda, sigma_b).variance;
}

double perfect_proposal_if(double sigma2) {
  if (!(sigma2 >= 0.0)) throw ConfigError("variance must be non-negative");
  if (sigma2 < 1e-12) return 1.0;
  if (sigma2 > 600.0) return std::numeric_limits<double>::infinity();
  const double s = std::sqrt(sigma2);
  // Log-likelihood error w ~ N(sigma2/2, sigma2) at stationarity; a(w) is the
  // acceptance probability against a fresh N(-sigma2/2, sigma2) proposal.
  auto integrand = [&](double x) {
    const double w = sigma2 / 2.0 + s * x;
    const double a =
        std_normal_cdf((-sigma2 / 2.0 - w) / s) + std::exp(-w) * std_normal_cdf((w - sigma2 / 2.0) / s);
    const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return (2.0 - a) / a * phi;
  };
  using boost::math::quadrature::gauss_kronrod;
  return gauss_kronrod<double, 31>::integrate(integrand, -12.0, s + 12.0, 15, 1e-10);
}

double SurrogateInefficiency::operator()(double sigma2, double rho) const {
  return perfect_proposal_if(k_ * sigma2 * (1.0 - c_ * rho));
}

double EmpiricalInefficiency::operator()(double sigma2, double rho) const {
  if (!(sigma2 >= 0.0) || !(rho >= 0.0 && rho < 1.0))
    throw ConfigError("empirical IF needs sigma2 >= 0 and rho in [0, 1)");
  Rng rng(substream_key(seed_, StreamTag::auxiliary,
                        {std::bit_cast<std::uint64_t>(sigma2), std::bit_cast<std::uint64_t>(rho)}));
  std::normal_distribution<double> z;
  const double s = std::sqrt(sigma2);
  const double r = std::sqrt(1.0 - rho * rho);
  double theta = z(rng);
  double w = s + z(rng);
  std::vector<double> trace(n_);
  std::size_t moves = 0;
  for (std::size_t i = 0; i < n_; ++i) {
    const double theta_p = z(rng);
    const double w_p = rho * w + r * z(rng);
    if (std::log(rng.uniform_pos()) < s * (w_p - w)) {
      theta = theta_p;
      w = w_p;
      ++moves;
    }
    trace[i] = theta;
  }
  // A chain that never moved has no usable autocorrelation estimate.
  if (moves == 0) return static_cast<double>(n_);
  return iact(trace);
}

std::unique_ptr<InefficiencyModel> make_inefficiency(const std::string& name) {
  if (name == "surrogate") return std::make_unique<SurrogateInefficiency>();
  if (name == "empirical") return std::make_unique<EmpiricalInefficiency>();
  throw ConfigError("unknown inefficiency backend '" + name + "' (use surrogate or empirical)");
}

double CtInputs::sigma_b() const { return std::sqrt(gamma / M); }

CtPoint evaluate_ct(const CtInputs& in, const InefficiencyModel& inefficiency) {
  if (!(in.M > 0.0) || !(in.gamma >= 0.0) || !(in.rho >= 0.0 && in.rho < 1.0))
    throw ConfigError("CT needs M > 0, gamma >= 0 and rho in [0, 1)");
  CtPoint p;
  p.inputs = in;
  const double sb = in.sigma_b();
  p.tau = prob_positive(in.m, in.lambda, sb);
  if (p.tau <= 0.5) {
    p.sigma2 = sb > 0.0 ? log_abs_variance(in.m, in.lambda, sb) : 0.0;
    p.inefficiency = std::numeric_limits<double>::infinity();
    p.ct = std::numeric_limits<double>::infinity();
    return p;
  }
  p.sigma2 = log_abs_variance(in.m, in.lambda, sb);
  p.inefficiency = inefficiency(p.sigma2, in.rho);
  const double d = 2.0 * p.tau - 1.0;
  p.ct = in.m * in.lambda * in.M * p.inefficiency / (d * d);
  return p;
}

double computational_time(const CtInputs& in, const InefficiencyModel& inefficiency) {
  return evaluate_ct(in, inefficiency).ct;
}

namespace {

double finite_log(double x) { return std::isfinite(x) ? std::log(x) : 1e300; }

}  // namespace

double optimal_M(double gamma, double m, int lambda, double rho,
                 const InefficiencyModel& inefficiency, double M_max) {
  auto f = [&](double log_M) {
    return finite_log(computational_time({m, lambda, std::exp(log_M), gamma, rho}, inefficiency));
  };
  // Coarse scan guards Brent against the infinite plateau at small M.
  double best = 0.0;
  double best_v = f(0.0);
  const double hi = std::log(M_max);
  for (double x = 0.0; x <= hi; x += hi / 80.0) {
    const double v = f(x);
    if (v < best_v) {
      best_v = v;
      best = x;
    }
  }
  const double step = hi / 80.0;
  const auto r = boost::math::tools::brent_find_minima(f, std::max(0.0, best - step),
                                                       std::min(hi, best + step), 40);
  return std::exp(r.first);
}

int min_lambda_for_rho(double rho) {
  if (!(rho >= 0.0 && rho < 1.0)) throw ConfigError("rho must lie in [0, 1)");
  return std::max(1, static_cast<int>(std::ceil(1.0 / (1.0 - rho) - 1e-9)));
}

int optimal_lambda(double gamma, double m, double M, double rho,
                   const InefficiencyModel& inefficiency, int lo, int hi) {
  if (lo < 1 || hi < lo) throw ConfigError("invalid lambda range");
  lo = std::max(lo, min_lambda_for_rho(rho));
  if (hi < lo) throw ConfigError("lambda range cannot reach the requested correlation");
  auto f = [&](int lambda) { return computational_time({m, lambda, M, gamma, rho}, inefficiency); };
  const int stride = std::max(1, (hi - lo) / 60);
  int best = lo;
  double best_v = f(lo);
  for (int l = lo; l <= hi; l += stride) {
    const double v = f(l);
    if (v < best_v) {
      best_v = v;
      best = l;
    }
  }
  for (int l = std::max(lo, best - stride); l <= std::min(hi, best + stride); ++l) {
    const double v = f(l);
    if (v < best_v) {
      best_v = v;
      best = l;
    }
  }
  return best;
}

GammaEstimate estimate_gamma(std::span<const double> theta_grid, const ZHatProvider& provider,
                             int M, int replicates, std::uint64_t seed) {
  if (M < 1 || replicates < 2) throw ConfigError("gamma estimation needs M >= 1 and >= 2 replicates");
  GammaEstimate out;
  for (std::size_t t = 0; t < theta_grid.size(); ++t) {
    const double theta[1] = {theta_grid[t]};
    double mean = 0.0;
    double ss = 0.0;
    for (int r = 0; r < replicates; ++r) {
      const double z = provider.z_hat(theta, substream_key(seed, StreamTag::replicate,
                                                           {t, static_cast<std::uint64_t>(r)}));
      const double d = z - mean;
      mean += d / (r + 1);
      ss += d * (z - mean);
    }
    const double var = std::max(0.0, ss / (replicates - 1));
    const double g = var > 0.0 ? 2.0 * M * var / (mean * mean) : 0.0;
    out.theta.push_back(theta_grid[t]);
    out.gamma.push_back(g);
    if (g > out.gamma_max || out.gamma.size() == 1) {
      out.gamma_max = g;
      out.theta_at_max = theta_grid[t];
    }
  }
  return out;
}

TuningRecommendation recommend(double gamma_max) {
  if (!(gamma_max >= 0.0) || !std::isfinite(gamma_max))
    throw ConfigError("gamma_max must be finite and non-negative");
  TuningRecommendation r;
  r.gamma_max = gamma_max;
  r.m = 1.0;
  if (gamma_max >= 100.0 * 100.0) {
    r.lambda = 100;
    r.rho = 0.99;
    r.M_opt = static_cast<int>(std::ceil(std::max(50.0, 0.0012 * gamma_max)));
  } else {
    r.lambda = 50;
    r.rho = 0.98;
    r.M_opt = static_cast<int>(std::ceil(std::max(50.0, 0.0042 * gamma_max)));
    if (gamma_max < 10.0 * 10.0) r.low_variance_lambda = 10;
  }
  return r;
}

std::vector<double> fit_quadratic(std::span<const double> sqrt_gamma, std::span<const double> m_opt) {
  if (sqrt_gamma.size() != m_opt.size() || sqrt_gamma.size() < 3)
    throw ConfigError("quadratic fit needs at least three matched points");
  const auto n = static_cast<Eigen::Index>(sqrt_gamma.size());
  Eigen::MatrixXd x(n, 3);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double g = sqrt_gamma[static_cast<std::size_t>(i)];
    x(i, 0) = 1.0;
    x(i, 1) = g;
    x(i, 2) = g * g;
    y(i) = m_opt[static_cast<std::size_t>(i)];
  }
  const Eigen::VectorXd c = x.colPivHouseholderQr().solve(y);
  return {c(0), c(1), c(2)};
}

}  // namespace bpmcmc::tuning
