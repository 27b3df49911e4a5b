#include "bpmcmc/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace bpmcmc {

double iact(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 100) throw std::invalid_argument("iact needs at least 100 samples");
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = x[i] - mean;
  auto autocov = [&](std::size_t k) {
    double s = 0.0;
    for (std::size_t i = 0; i + k < n; ++i) s += d[i] * d[i + k];
    return s / static_cast<double>(n);
  };
  const double g0 = autocov(0);
  if (g0 <= 0.0) return 1.0;
  double sum = 0.0;
  double prev = std::numeric_limits<double>::infinity();
  for (std::size_t m = 0; 2 * m + 1 < n; ++m) {
    double pair = autocov(2 * m) + autocov(2 * m + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, prev);
    prev = pair;
    sum += pair;
  }
  return std::max(1.0, (2.0 * sum - g0) / g0);
}

double signed_iact(std::span<const double> psi, std::span<const int> signs) {
  if (psi.size() != signs.size()) throw std::invalid_argument("psi and sign lengths differ");
  std::vector<double> ps(psi.size());
  std::size_t pos = 0;
  for (std::size_t i = 0; i < psi.size(); ++i) {
    ps[i] = psi[i] * signs[i];
    if (signs[i] > 0) ++pos;
  }
  const double tau = static_cast<double>(pos) / static_cast<double>(psi.size());
  const double denom = (2.0 * tau - 1.0) * (2.0 * tau - 1.0);
  if (denom == 0.0) return std::numeric_limits<double>::infinity();
  return iact(ps) / denom;
}

Interval hpd(std::span<const double> x, double mass) {
  std::vector<int> ones(x.size(), 1);
  return hpd(x, ones, mass);
}

Interval hpd(std::span<const double> x, std::span<const int> signs, double mass) {
  const std::size_t n = x.size();
  if (n == 0 || signs.size() != n) throw std::invalid_argument("hpd needs matching non-empty inputs");
  if (!(mass > 0.0 && mass < 1.0)) throw std::invalid_argument("hpd mass must lie in (0, 1)");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  double total = 0.0;
  for (int s : signs) total += s;
  if (total <= 0.0) throw std::invalid_argument("hpd undefined when the sign sum is not positive");

  // prefix[k] = weight of the k smallest points; best[k] = max prefix up to k.
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t k = 0; k < n; ++k) prefix[k + 1] = prefix[k] + signs[idx[k]] / total;
  std::vector<double> best(n + 1);
  std::partial_sum(prefix.begin(), prefix.end(), best.begin(),
                   [](double a, double b) { return std::max(a, b); });

  Interval out{x[idx.front()], x[idx.back()]};
  double width = out.hi - out.lo;
  const double eps = 1e-12;
  for (std::size_t i = 0; i < n; ++i) {
    const double need = prefix[i] + mass - eps;
    const auto it = std::lower_bound(best.begin() + static_cast<std::ptrdiff_t>(i + 1), best.end(), need);
    if (it == best.end()) break;
    const std::size_t j = static_cast<std::size_t>(it - best.begin()) - 1;
    const double w = x[idx[j]] - x[idx[i]];
    if (w < width) {
      width = w;
      out = {x[idx[i]], x[idx[j]]};
    }
  }
  return out;
}

ChainSummary summarize(std::span<const ChainSample> chain, std::size_t param,
                       const std::string& name, std::size_t burn_in, double runtime_sec) {
  if (burn_in >= chain.size()) throw std::invalid_argument("burn-in leaves no samples");
  ChainSummary s;
  s.parameter = name;
  s.n = chain.size() - burn_in;
  s.burn_in = burn_in;
  s.runtime_sec = runtime_sec;
  std::vector<double> v;
  std::vector<int> sg;
  std::size_t acc = 0;
  for (std::size_t i = 0; i < chain.size(); ++i) {
    if (chain[i].accepted) ++acc;
    if (i < burn_in) continue;
    v.push_back(chain[i].theta.at(param));
    sg.push_back(chain[i].sign);
  }
  s.acceptance_rate = static_cast<double>(acc) / static_cast<double>(chain.size());
  const auto e = sign_corrected_expectation(v, sg, 0);
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = v[i] * v[i];
  const auto e2 = sign_corrected_expectation(sq, sg, 0);
  s.mean = e.value;
  s.sd = std::sqrt(std::max(0.0, e2.value - e.value * e.value));
  s.negative_fraction = e.negative_fraction;
  s.sign_reliable = e.reliable;
  if (e.sign_sum > 0.0) {
    const auto iv = hpd(v, sg, 0.95);
    s.hpd_lo = iv.lo;
    s.hpd_hi = iv.hi;
  } else {
    s.hpd_lo = s.hpd_hi = std::numeric_limits<double>::quiet_NaN();
  }
  s.iact_raw = iact(v);
  s.iact = s.negative_fraction > 0.0 ? signed_iact(v, sg) : s.iact_raw;
  s.ess = static_cast<double>(s.n) / s.iact;
  s.ess_raw = static_cast<double>(s.n) / s.iact_raw;
  s.ess_per_sec = runtime_sec > 0.0 ? s.ess / runtime_sec : 0.0;
  return s;
}

double rmse(std::span<const double> estimates, double truth) {
  if (estimates.empty()) throw std::invalid_argument("rmse of an empty sample");
  double s = 0.0;
  for (double e : estimates) s += (e - truth) * (e - truth);
  return std::sqrt(s / static_cast<double>(estimates.size()));
}

}  // namespace bpmcmc
