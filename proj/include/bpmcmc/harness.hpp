#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace bpmcmc {

/// Per-method parameter estimates from one replicate, keyed by method name.
using ReplicateEstimates = std::map<std::string, std::vector<double>>;

/// Runs one replicate from its own seed; may throw to mark the replicate failed.
using ReplicateRunner = std::function<ReplicateEstimates(std::uint64_t seed, std::size_t index)>;

struct Scenario {
  std::string name;
  std::vector<std::string> parameters;
  std::vector<double> truth;
  ReplicateRunner run;
};

struct RmseRow {
  std::string method;
  std::string parameter;
  double rmse = 0.0;
  double se = 0.0;  // delta-method standard error
  std::size_t n = 0;
};

struct RmseTable {
  std::string scenario;
  std::vector<RmseRow> rows;
  std::vector<std::pair<std::size_t, std::string>> failures;

  const RmseRow* find(const std::string& method, const std::string& parameter) const;
};

/// Replicate i uses seed substream_key(seed, replicate, {i}); results are
/// aggregated in replicate order whatever the thread count.
RmseTable rmse_study(const Scenario& scenario, std::size_t n_replicates, std::uint64_t seed,
                     int threads = 1);

}  // namespace bpmcmc
