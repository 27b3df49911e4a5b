#include "bpmcmc/io.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>

#include "bpmcmc/bp_core.hpp"

namespace bpmcmc::io {

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    out.push_back(cell);
  }
  return out;
}

// JSON has no NaN; missing HPD bounds are written as null.
nlohmann::json num(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); }

double get(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

}  // namespace

void write_chain_csv(std::ostream& out, std::span<const ChainSample> chain,
                     const std::vector<std::string>& names) {
  out << "iteration";
  for (const auto& n : names) out << ',' << n;
  out << ",sign,accepted,nu,log_abs_like\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < chain.size(); ++i) {
    const auto& s = chain[i];
    if (s.theta.size() != names.size()) throw ConfigError("chain sample width differs from the header");
    out << i;
    for (double v : s.theta) out << ',' << v;
    out << ',' << s.sign << ',' << (s.accepted ? 1 : 0) << ',' << s.nu << ',' << s.log_abs_like << '\n';
  }
}

ChainTable read_chain_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("chain CSV is empty");
  const auto header = split(line);
  if (header.size() < 6 || header.front() != "iteration" || header[header.size() - 4] != "sign" ||
      header[header.size() - 3] != "accepted" || header[header.size() - 2] != "nu" ||
      header.back() != "log_abs_like")
    throw ConfigError("chain CSV header must be iteration,<params>,sign,accepted,nu,log_abs_like");
  ChainTable t;
  t.names.assign(header.begin() + 1, header.end() - 4);
  const std::size_t d = t.names.size();
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto cells = split(line);
    if (cells.size() != header.size())
      throw ConfigError("chain CSV row " + std::to_string(row) + " has the wrong number of fields");
    ChainSample s;
    try {
      for (std::size_t k = 0; k < d; ++k) s.theta.push_back(std::stod(cells[k + 1]));
      s.sign = std::stoi(cells[d + 1]);
      s.accepted = std::stoi(cells[d + 2]) != 0;
      s.nu = std::stod(cells[d + 3]);
      s.log_abs_like = std::stod(cells[d + 4]);
    } catch (const std::logic_error&) {
      throw ConfigError("chain CSV row " + std::to_string(row) + " is not numeric");
    }
    if (s.sign != 1 && s.sign != -1) throw ConfigError("chain CSV row " + std::to_string(row) + " has a bad sign");
    t.samples.push_back(std::move(s));
  }
  return t;
}

nlohmann::json to_json(const ChainSummary& s) {
  return {{"parameter", s.parameter},
          {"n", s.n},
          {"burn_in", s.burn_in},
          {"mean", num(s.mean)},
          {"sd", num(s.sd)},
          {"hpd_lo", num(s.hpd_lo)},
          {"hpd_hi", num(s.hpd_hi)},
          {"iact", num(s.iact)},
          {"ess", num(s.ess)},
          {"iact_raw", num(s.iact_raw)},
          {"ess_raw", num(s.ess_raw)},
          {"ess_per_sec", num(s.ess_per_sec)},
          {"acceptance_rate", num(s.acceptance_rate)},
          {"negative_fraction", num(s.negative_fraction)},
          {"runtime_sec", num(s.runtime_sec)},
          {"sign_reliable", s.sign_reliable}};
}

ChainSummary summary_from_json(const nlohmann::json& j) {
  ChainSummary s;
  s.parameter = j.at("parameter").get<std::string>();
  s.n = j.at("n").get<std::size_t>();
  s.burn_in = j.at("burn_in").get<std::size_t>();
  s.mean = get(j, "mean");
  s.sd = get(j, "sd");
  s.hpd_lo = get(j, "hpd_lo");
  s.hpd_hi = get(j, "hpd_hi");
  s.iact = get(j, "iact");
  s.ess = get(j, "ess");
  s.iact_raw = get(j, "iact_raw");
  s.ess_raw = get(j, "ess_raw");
  s.ess_per_sec = get(j, "ess_per_sec");
  s.acceptance_rate = get(j, "acceptance_rate");
  s.negative_fraction = get(j, "negative_fraction");
  s.runtime_sec = get(j, "runtime_sec");
  s.sign_reliable = j.at("sign_reliable").get<bool>();
  return s;
}

std::string sha1_hex(std::istream& in, const std::string& prefix) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1) throw NumericalError("SHA-1 unavailable");
  EVP_DigestUpdate(ctx.get(), prefix.data(), prefix.size());
  char buf[1 << 14];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
    if (in.eof()) break;
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return hex.str();
}

std::string sha1_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  return sha1_hex(in);
}

std::string git_blob_hash(const std::string& path) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  std::ifstream in(path, std::ios::binary);
  if (ec || !in) throw ConfigError("cannot open " + path);
  return sha1_hex(in, "blob " + std::to_string(size) + std::string(1, '\0'));
}

}  // namespace bpmcmc::io
