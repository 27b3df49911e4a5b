#pragma once

#include <iosfwd>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "bpmcmc/diagnostics.hpp"
#include "bpmcmc/pmmh.hpp"

namespace bpmcmc::io {

struct ChainTable {
  std::vector<std::string> names;
  std::vector<ChainSample> samples;
};

/// Header: iteration, one column per parameter, sign, accepted, nu, log_abs_like.
void write_chain_csv(std::ostream& out, std::span<const ChainSample> chain,
                     const std::vector<std::string>& names);
ChainTable read_chain_csv(std::istream& in);

nlohmann::json to_json(const ChainSummary& s);
ChainSummary summary_from_json(const nlohmann::json& j);

/// Hex SHA-1 of prefix followed by a byte stream, or of a file's contents.
std::string sha1_hex(std::istream& in, const std::string& prefix = "");
std::string sha1_file(const std::string& path);
/// Object id git assigns to the file as a blob: SHA-1 of "blob <size>\0" + contents.
std::string git_blob_hash(const std::string& path);

}  // namespace bpmcmc::io
