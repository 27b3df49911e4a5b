#include "bpmcmc/harness.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <optional>
#include <thread>

#include "bpmcmc/bp_core.hpp"
#include "bpmcmc/random.hpp"

namespace bpmcmc {

const RmseRow* RmseTable::find(const std::string& method, const std::string& parameter) const {
  for (const auto& r : rows)
    if (r.method == method && r.parameter == parameter) return &r;
  return nullptr;
}

RmseTable rmse_study(const Scenario& scenario, std::size_t n_replicates, std::uint64_t seed,
                     int threads) {
  if (scenario.parameters.size() != scenario.truth.size())
    throw ConfigError("scenario parameters and truth differ in length");
  if (!scenario.run) throw ConfigError("scenario has no runner");

  std::vector<std::optional<ReplicateEstimates>> results(n_replicates);
  std::vector<std::string> errors(n_replicates);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n_replicates; i = next++) {
      try {
        results[i] = scenario.run(substream_key(seed, StreamTag::replicate, {i}), i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const int n_threads = std::max(1, threads);
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  RmseTable table;
  table.scenario = scenario.name;
  std::map<std::string, std::vector<std::vector<double>>> sq;  // method -> parameter -> errors^2
  for (std::size_t i = 0; i < n_replicates; ++i) {
    if (!results[i]) {
      table.failures.emplace_back(i, errors[i]);
      continue;
    }
    for (const auto& [method, est] : *results[i]) {
      if (est.size() != scenario.truth.size()) {
        table.failures.emplace_back(i, method + ": wrong number of estimates");
        continue;
      }
      auto& acc = sq[method];
      acc.resize(est.size());
      for (std::size_t p = 0; p < est.size(); ++p) {
        const double e = est[p] - scenario.truth[p];
        acc[p].push_back(e * e);
      }
    }
  }
  for (const auto& [method, acc] : sq) {
    for (std::size_t p = 0; p < acc.size(); ++p) {
      const auto& v = acc[p];
      RmseRow row{method, scenario.parameters[p], 0.0, 0.0, v.size()};
      if (!v.empty()) {
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        if (v.size() > 1) var /= static_cast<double>(v.size() - 1);
        row.rmse = std::sqrt(mean);
        const double se_mse = std::sqrt(var / static_cast<double>(v.size()));
        row.se = row.rmse > 0.0 ? se_mse / (2.0 * row.rmse) : 0.0;
      }
      table.rows.push_back(row);
    }
  }
  return table;
}

}  // namespace bpmcmc
