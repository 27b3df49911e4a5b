#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "bpmcmc/bp_core.hpp"
#include "bpmcmc/pmmh.hpp"
#include "bpmcmc/random.hpp"

namespace bpmcmc::kent {

using Vec3 = Eigen::Vector3d;
using Frame = Eigen::Matrix3d;  // columns gamma1, gamma2, gamma3

/// Concentration kappa, ovalness beta and orientation angles.
/// psi in [0, pi], alpha in [0, 2 pi], eta in [0, pi]; 0 <= 2 beta < kappa.
struct KentParams {
  double kappa = 1.0;
  double beta = 0.0;
  double psi = 0.0;
  double alpha = 0.0;
  double eta = 0.0;

  void validate() const;
  std::array<double, 5> as_array() const { return {kappa, beta, psi, alpha, eta}; }
  static KentParams from_array(std::span<const double> v);
};

/// gamma1 = (cos a, sin a cos e, sin a sin e); gamma2, gamma3 span the
/// orthogonal plane, rotated by psi from (-sin a, cos a cos e, cos a sin e).
Frame frame_from_angles(double psi, double alpha, double eta);

struct Angles {
  double psi = 0.0;
  double alpha = 0.0;
  double eta = 0.0;
};

/// Inverse of frame_from_angles up to the sign of gamma2 and gamma3.
Angles angles_from_frame(const Frame& g);

/// Unnormalised log density: kappa g1.y + beta ((g2.y)^2 - (g3.y)^2).
double log_f(const KentParams& p, const Vec3& y);
double log_f(double kappa, double beta, const Frame& g, const Vec3& y);

/// log I_{n+1/2}(x) for x > 0, via exp-scaled backward recurrence.
double log_bessel_i_half(int n, double x);
double bessel_i_half(int n, double x);
/// log I_{k+1/2}(x) for k = 0..n_max.
std::vector<double> log_bessel_i_half_sequence(int n_max, double x);

/// log of the j-th series term of c(kappa, beta).
double log_c_term(int j, double kappa, double beta);
double log_c_term(int j, double kappa, double beta, std::span<const double> log_i_seq);
/// Sum of terms j < K.
double c_partial(double kappa, double beta, int K);
/// log c(kappa, beta), series summed until the relative tail is below 1e-16.
double log_normaliser(double kappa, double beta);

enum class TailLaw { poisson, geometric };

struct CHatConfig {
  int K = 10;
  TailLaw tail = TailLaw::poisson;
  double tail_param = 1.0;  // Poisson mean, or geometric success probability

  void validate() const;
  double log_q(int k) const;
};

/// Unbiased estimate c_partial(K) + phi_{K+k} / q(k) with k drawn from the tail law.
double c_hat(double kappa, double beta, const CHatConfig& config, std::uint64_t key);

/// Zhat provider for the sampler; theta = (kappa, beta, psi, alpha, eta).
class NormaliserProvider final : public ZHatProvider {
 public:
  explicit NormaliserProvider(CHatConfig config);
  double z_hat(std::span<const double> theta, std::uint64_t key) const override;
  void z_hats(std::span<const double> theta, std::span<const std::uint64_t> keys,
              std::span<double> out) const override;
  const CHatConfig& config() const { return config_; }

 private:
  CHatConfig config_;
};

/// Unconstrained coordinates: log kappa, log beta, logit-scaled angles.
std::array<double, 5> to_unconstrained(const KentParams& p);
KentParams from_unconstrained(std::span<const double> u);
/// Log prior on the natural scale plus the log-Jacobian of the map.
double log_prior_unconstrained(std::span<const double> u);
double log_prior(const KentParams& p);

struct Sufficient {
  std::size_t n = 0;
  Vec3 sum = Vec3::Zero();
  Eigen::Matrix3d scatter = Eigen::Matrix3d::Zero();  // sum of y y^T
};

Sufficient sufficient(std::span<const Vec3> ys);
double log_likelihood_unnormalised(const KentParams& p, const Sufficient& s);

class KentModel final : public DoublyIntractableModel {
 public:
  KentModel(std::span<const Vec3> ys, CHatConfig chat);

  std::size_t dim() const override { return 5; }
  double log_f(std::span<const double> u) const override;
  double log_prior(std::span<const double> u) const override;
  const ZHatProvider& provider() const override { return provider_; }
  std::vector<double> to_natural(std::span<const double> u) const override;
  std::vector<double> to_unconstrained(std::span<const double> theta) const override;
  double n_auxiliary() const override { return static_cast<double>(stats_.n); }
  std::vector<std::string> parameter_names() const override;

 private:
  Sufficient stats_;
  NormaliserProvider provider_;
};

struct MomentEstimate {
  KentParams params;
  bool degenerate = false;
};

MomentEstimate moment_estimate(std::span<const Vec3> ys);

struct MleResult {
  KentParams params;
  double log_lik = 0.0;
  bool converged = false;
  int iterations = 0;
};

/// Maximum likelihood with the exact normaliser, Nelder-Mead on unconstrained coordinates.
MleResult fit_mle(std::span<const Vec3> ys, const KentParams& init);
MleResult fit_mle(std::span<const Vec3> ys);

/// Starting point inside the prior support derived from the moment estimate.
KentParams safe_start(std::span<const Vec3> ys);

struct BayesFitConfig {
  BpConfig bp{20, 1.0};
  CHatConfig chat;
  std::size_t n_iter = 10000;
  double burn_in_fraction = 0.25;
  double target_accept = 0.234;
  double initial_step = 0.05;
};

struct BayesFit {
  std::vector<ChainSample> chain;
  std::size_t burn_in = 0;
  KentParams posterior_mean;  // angles included for completeness
  double ratio_mean = 0.0;     // posterior mean of beta / kappa
};

BayesFit fit_bayes(std::span<const Vec3> ys, const BayesFitConfig& config, std::uint64_t seed);

/// Exact draws by rejection from the uniform distribution on the sphere.
std::vector<Vec3> sample(const KentParams& p, std::size_t n, std::uint64_t key);

/// Group posterior reduced to weighted draws for the predictive density.
struct PredictiveMixture {
  std::vector<KentParams> draws;
  std::vector<double> weights;  // sign * importance correction / chat, unnormalised
  double sign_sum = 0.0;
};

PredictiveMixture predictive_mixture(const BayesFit& fit, const CHatConfig& chat, const BpConfig& bp,
                                     int n_nu, std::size_t max_draws, std::uint64_t seed);
/// log predictive density; -inf when the signed estimate is not positive.
double log_predictive(const PredictiveMixture& mix, const Vec3& y);
double log_density(const KentParams& p, const Vec3& y);

struct Classification {
  int label = 0;
  bool tie = false;
};

/// argmax over groups; ties go to the lowest index and are flagged.
Classification classify(std::span<const double> log_scores);

struct KentData {
  std::vector<Vec3> y;
  std::vector<int> group;  // empty when the file has no group column
};

/// CSV with header x,y,z and an optional group column; rows must be unit vectors.
KentData read_kent_csv(std::istream& in);
void write_kent_csv(std::ostream& out, const KentData& data);

enum class FitMethod { bayes, moment, mle };
FitMethod parse_method(const std::string& name);
std::string method_name(FitMethod m);

struct CvResult {
  FitMethod method;
  std::vector<double> test_accuracy;  // per fold
  std::vector<double> train_accuracy;
  int ties = 0;
};

CvResult cross_validate(const KentData& data, FitMethod method, int folds,
                        const BayesFitConfig& bayes, std::uint64_t seed);

struct BootstrapInterval {
  std::string parameter;
  double estimate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/// Percentile bootstrap intervals for beta, kappa and beta/kappa.
std::vector<BootstrapInterval> bootstrap(std::span<const Vec3> ys, FitMethod method, int n_boot,
                                         double level, std::uint64_t seed);

}  // namespace bpmcmc::kent
