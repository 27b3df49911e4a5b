#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bpmcmc/bp_core.hpp"
#include "bpmcmc/diagnostics.hpp"
#include "bpmcmc/io.hpp"
#include "bpmcmc/ising.hpp"
#include "bpmcmc/kent.hpp"
#include "bpmcmc/pmmh.hpp"
#include "bpmcmc/tuning.hpp"

using namespace bpmcmc;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitSign = 4;

struct Run {
  CLI::App* app = nullptr;
  std::string out_dir = ".";
  std::uint64_t seed = 1;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
};

fs::path out_path(Run& run, const std::string& name) {
  fs::create_directories(run.out_dir);
  const fs::path p = fs::path(run.out_dir) / name;
  run.outputs.push_back(p.string());
  return p;
}

std::ofstream open_out(Run& run, const std::string& name) {
  std::ofstream f(out_path(run, name));
  if (!f) throw ConfigError("cannot write " + name + " in " + run.out_dir);
  return f;
}

std::ifstream open_in(Run& run, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open " + path);
  run.inputs.push_back(path);
  return f;
}

void write_json(Run& run, const std::string& name, const json& j) { open_out(run, name) << j.dump(2) << '\n'; }

// Resolved options (defaults included) plus input hashes; feeding the
// options back through --config reproduces the run.
void write_manifest(Run& run, const std::string& command) {
  json inputs = json::object();
  for (const auto& p : run.inputs) inputs[p] = io::git_blob_hash(p);
  const fs::path p = fs::path(run.out_dir) / "manifest.json";
  std::istringstream all(run.app->config_to_str(true, false));
  std::string config, line;
  while (std::getline(all, line))
    if (line.rfind(command + ".", 0) == 0) config += line + '\n';
  json m = {{"command", command},
            {"seed", run.seed},
            {"config", config},
            {"inputs", inputs},
            {"outputs", run.outputs}};
  fs::create_directories(run.out_dir);
  std::ofstream(p) << m.dump(2) << '\n';
}

void add_common(CLI::App* sub, Run& run) {
  sub->add_option("--out-dir", run.out_dir, "directory for outputs")->capture_default_str();
  sub->add_option("--seed", run.seed, "master seed")->capture_default_str();
}

json summaries_json(const std::vector<ChainSummary>& s) {
  json arr = json::array();
  for (const auto& x : s) arr.push_back(io::to_json(x));
  return arr;
}

std::vector<ChainSummary> summarize_all(std::span<const ChainSample> chain, const std::vector<std::string>& names,
                                        std::size_t burn_in, double secs) {
  std::vector<ChainSummary> out;
  for (std::size_t k = 0; k < names.size(); ++k) out.push_back(summarize(chain, k, names[k], burn_in, secs));
  return out;
}

int sign_status(const std::vector<ChainSummary>& s) {
  for (const auto& x : s)
    if (!x.sign_reliable) {
      std::cerr << "warning: sign balance is unreliable (negative fraction " << x.negative_fraction << ")\n";
      return kExitSign;
    }
  return 0;
}

void print_summaries(const std::vector<ChainSummary>& s) {
  for (const auto& x : s)
    std::cout << x.parameter << ": mean " << x.mean << "  95% HPD (" << x.hpd_lo << ", " << x.hpd_hi
              << ")  IACT " << x.iact << "  negative " << x.negative_fraction << '\n';
}

// ---------------------------------------------------------------- tune

struct TuneOpts {
  double gamma_max = -1.0;
  int ising_L = 0;
  std::vector<double> theta_grid{0.1, 0.2, 0.3, 0.4};
  int particles = 100;
  int temps = 4000;
  int replicates = 100;
  std::string inefficiency = "surrogate";
  int lambda_max = 300;
};

int cmd_tune(Run& run, const TuneOpts& o) {
  double gmax = o.gamma_max;
  json out;
  if (o.ising_L > 0) {
    const ising::AisProvider prov(o.ising_L, ising::AisConfig{o.particles, o.temps});
    const auto g = tuning::estimate_gamma(o.theta_grid, prov, o.particles, o.replicates, run.seed);
    gmax = g.gamma_max;
    out["gamma"] = {{"theta", g.theta}, {"gamma", g.gamma}, {"theta_at_max", g.theta_at_max}};
  }
  if (!(gmax >= 0.0)) throw ConfigError("give --gamma-max or --ising-L");
  const auto r = tuning::recommend(gmax);
  out["recommendation"] = {{"gamma_max", r.gamma_max}, {"lambda", r.lambda}, {"m", r.m},
                           {"rho", r.rho},             {"M_opt", r.M_opt}};
  if (r.low_variance_lambda) out["recommendation"]["low_variance_lambda"] = *r.low_variance_lambda;

  const auto inef = tuning::make_inefficiency(o.inefficiency);
  auto sweep = open_out(run, "sweep.csv");
  sweep << "lambda,m,M,rho,gamma,tau,sigma2,inefficiency,ct\n";
  for (int lambda = 1; lambda <= o.lambda_max; ++lambda) {
    const tuning::CtInputs in{1.0, lambda, static_cast<double>(r.M_opt), gmax, 1.0 - 1.0 / lambda};
    const auto p = tuning::evaluate_ct(in, *inef);
    sweep << lambda << ',' << in.m << ',' << in.M << ',' << in.rho << ',' << gmax << ',' << p.tau << ','
          << p.sigma2 << ',' << p.inefficiency << ',' << p.ct << '\n';
  }
  write_json(run, "tuning.json", out);
  std::cout << out["recommendation"].dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------- ising

struct IsingSimOpts {
  int L = 10;
  double theta = 0.2;
  int typical = 0;
  std::string out = "lattice.txt";
};

int cmd_ising_simulate(Run& run, const IsingSimOpts& o) {
  const auto y = o.typical > 0 ? ising::typical_dataset(o.L, o.theta, o.typical, run.seed)
                               : ising::perfect_sample(o.L, o.theta, substream_key(run.seed, {0}));
  auto f = open_out(run, o.out);
  ising::write_lattice(f, y);
  std::cout << "S(y) = " << ising::sufficient_stat(y) << '\n';
  return 0;
}

struct IsingFitOpts {
  std::string data;
  std::string method = "bp";
  int lambda = 10;
  double m = 1.0;
  int particles = 100;
  int temps = 4000;
  int blocks = 50;
  std::size_t iters = 20000;
  double step = 0.07;
  double init = -1.0;
  double burn_in = 0.25;
};

int cmd_ising_fit(Run& run, const IsingFitOpts& o) {
  auto in = open_in(run, o.data);
  const auto y = ising::read_lattice(in);
  const double init = o.init >= 0.0 ? o.init : 0.2;
  std::vector<ChainSample> chain;
  const auto t0 = std::chrono::steady_clock::now();
  ProposalConfig prop;
  prop.step = o.step;
  const double theta0[1] = {init};
  if (o.method == "bp") {
    const ising::IsingModel model(y, ising::AisConfig{o.particles, o.temps});
    chain = run_chain(model, BlockPoissonEstimator(BpConfig{o.lambda, o.m}), PmmhConfig{}, prop, o.iters, run.seed,
                      theta0);
  } else if (o.method == "bias-corrected") {
    if (o.particles % o.blocks != 0) throw ConfigError("--particles must be a multiple of --blocks");
    const ising::IsingModel model(y, ising::AisConfig{1, o.temps});
    chain = run_chain(model, ising::BiasCorrectedEstimator(o.blocks, o.particles / o.blocks), PmmhConfig{}, prop,
                      o.iters, run.seed, theta0);
  } else if (o.method == "exchange") {
    chain = ising::run_exchange(y, o.iters, run.seed, init, o.step);
  } else {
    throw ConfigError("unknown method '" + o.method + "' (use bp, bias-corrected or exchange)");
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::vector<std::string> names{"theta"};
  auto f = open_out(run, "chain.csv");
  io::write_chain_csv(f, chain, names);
  const auto burn = static_cast<std::size_t>(o.burn_in * static_cast<double>(chain.size()));
  const auto s = summarize_all(chain, names, burn, secs);
  write_json(run, "summary.json", {{"method", o.method}, {"summaries", summaries_json(s)}});
  print_summaries(s);
  return sign_status(s);
}

struct IsingOracleOpts {
  std::string data;
  std::vector<double> theta;
};

int cmd_ising_oracle(Run& run, const IsingOracleOpts& o) {
  auto in = open_in(run, o.data);
  const auto y = ising::read_lattice(in);
  const auto post = ising::exact_posterior(y);
  json out = {{"L", y.size()}, {"S", ising::sufficient_stat(y)}, {"posterior_mean", post.mean},
              {"posterior_sd", post.sd}};
  json lz = json::array();
  for (double t : o.theta) lz.push_back({{"theta", t}, {"log_z", ising::exact_log_z(y.size(), t)}});
  out["log_z"] = lz;
  write_json(run, "oracle.json", out);
  std::cout << out.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------- kent

struct KentOpts {
  std::string data;
  std::string method = "bayes";
  int lambda = 20;
  double m = 1.0;
  int K = 10;
  std::string tail = "poisson";
  double tail_param = 1.0;
  std::size_t iters = 10000;
  double burn_in = 0.25;

  kent::BayesFitConfig bayes() const {
    kent::BayesFitConfig c;
    c.bp = BpConfig{lambda, m};
    if (tail != "poisson" && tail != "geometric") throw ConfigError("--tail must be poisson or geometric");
    c.chat = kent::CHatConfig{K, tail == "poisson" ? kent::TailLaw::poisson : kent::TailLaw::geometric, tail_param};
    c.n_iter = iters;
    c.burn_in_fraction = burn_in;
    return c;
  }
};

void add_kent_opts(CLI::App* sub, KentOpts& o) {
  sub->add_option("--data", o.data, "CSV with x,y,z[,group]")->required();
  sub->add_option("--method", o.method, "bayes, moment or mle")->capture_default_str();
  sub->add_option("--lambda", o.lambda, "blocks")->capture_default_str();
  sub->add_option("--m", o.m, "Poisson mean per block")->capture_default_str();
  sub->add_option("--K", o.K, "series terms computed exactly")->capture_default_str();
  sub->add_option("--tail", o.tail, "tail law: poisson or geometric")->capture_default_str();
  sub->add_option("--tail-param", o.tail_param, "Poisson mean or geometric probability")->capture_default_str();
  sub->add_option("--iters", o.iters, "PMMH iterations")->capture_default_str();
  sub->add_option("--burn-in", o.burn_in, "burn-in fraction")->capture_default_str();
}

json params_json(const kent::KentParams& p) {
  return {{"kappa", p.kappa}, {"beta", p.beta}, {"psi", p.psi}, {"alpha", p.alpha}, {"eta", p.eta},
          {"beta_over_kappa", p.beta / p.kappa}};
}

int cmd_kent_fit(Run& run, const KentOpts& o) {
  auto in = open_in(run, o.data);
  const auto d = kent::read_kent_csv(in);
  const auto method = kent::parse_method(o.method);
  json out = {{"method", o.method}, {"n", d.y.size()}};
  int status = 0;
  if (method == kent::FitMethod::bayes) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto fit = kent::fit_bayes(d.y, o.bayes(), run.seed);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::vector<std::string> names{"kappa", "beta", "psi", "alpha", "eta"};
    auto f = open_out(run, "chain.csv");
    io::write_chain_csv(f, fit.chain, names);
    const auto s = summarize_all(fit.chain, names, fit.burn_in, secs);
    out["estimate"] = params_json(fit.posterior_mean);
    out["estimate"]["beta_over_kappa"] = fit.ratio_mean;
    out["summaries"] = summaries_json(s);
    print_summaries(s);
    status = sign_status(s);
  } else if (method == kent::FitMethod::moment) {
    const auto e = kent::moment_estimate(d.y);
    out["estimate"] = params_json(e.params);
    out["degenerate"] = e.degenerate;
  } else {
    const auto e = kent::fit_mle(d.y);
    out["estimate"] = params_json(e.params);
    out["log_likelihood"] = e.log_lik;
    out["converged"] = e.converged;
  }
  write_json(run, "fit.json", out);
  std::cout << out["estimate"].dump(2) << '\n';
  return status;
}

struct KentSimOpts {
  kent::KentParams p{5.0, 1.25, 1.0, 1.2, 0.8};
  std::size_t n = 1000;
  std::vector<int> group;
  std::string out = "kent.csv";
};

int cmd_kent_simulate(Run& run, const KentSimOpts& o) {
  o.p.validate();
  kent::KentData d;
  d.y = kent::sample(o.p, o.n, substream_key(run.seed, {0}));
  if (!o.group.empty()) d.group.assign(d.y.size(), o.group.front());
  auto f = open_out(run, o.out);
  kent::write_kent_csv(f, d);
  return 0;
}

struct ClassifyOpts {
  KentOpts kent;
  int folds = 5;
};

int cmd_kent_classify(Run& run, const ClassifyOpts& o) {
  auto in = open_in(run, o.kent.data);
  const auto d = kent::read_kent_csv(in);
  const auto res = kent::cross_validate(d, kent::parse_method(o.kent.method), o.folds, o.kent.bayes(), run.seed);
  auto f = open_out(run, "folds.csv");
  f << "fold,train_accuracy,test_accuracy\n";
  double mean = 0.0;
  for (std::size_t k = 0; k < res.test_accuracy.size(); ++k) {
    f << k << ',' << res.train_accuracy[k] << ',' << res.test_accuracy[k] << '\n';
    mean += res.test_accuracy[k];
  }
  mean /= static_cast<double>(res.test_accuracy.size());
  const json out = {{"method", o.kent.method},       {"folds", o.folds},
                    {"test_accuracy", res.test_accuracy}, {"train_accuracy", res.train_accuracy},
                    {"mean_test_accuracy", mean},     {"ties", res.ties}};
  write_json(run, "classify.json", out);
  std::cout << "mean test accuracy " << mean << " (" << res.ties << " ties)\n";
  return 0;
}

struct BootOpts {
  std::string data;
  std::string method = "mle";
  int n_boot = 1000;
  double level = 0.95;
};

int cmd_kent_bootstrap(Run& run, const BootOpts& o) {
  auto in = open_in(run, o.data);
  const auto d = kent::read_kent_csv(in);
  const auto iv = kent::bootstrap(d.y, kent::parse_method(o.method), o.n_boot, o.level, run.seed);
  json arr = json::array();
  for (const auto& x : iv) {
    arr.push_back({{"parameter", x.parameter}, {"estimate", x.estimate}, {"lo", x.lo}, {"hi", x.hi}});
    std::cout << x.parameter << ": " << x.estimate << " (" << x.lo << ", " << x.hi << ")\n";
  }
  write_json(run, "bootstrap.json", {{"method", o.method}, {"n_boot", o.n_boot}, {"level", o.level}, {"intervals", arr}});
  return 0;
}

// ---------------------------------------------------------------- diagnose

struct DiagnoseOpts {
  std::string chain;
  double burn_in = 0.25;
};

int cmd_diagnose(Run& run, const DiagnoseOpts& o) {
  auto in = open_in(run, o.chain);
  const auto t = io::read_chain_csv(in);
  if (t.samples.empty()) throw ConfigError("chain has no samples");
  const auto burn = static_cast<std::size_t>(o.burn_in * static_cast<double>(t.samples.size()));
  const auto s = summarize_all(t.samples, t.names, burn, 0.0);
  write_json(run, "summary.json", {{"chain", o.chain}, {"summaries", summaries_json(s)}});
  print_summaries(s);
  return sign_status(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Signed block pseudo-marginal MCMC for doubly intractable models"};
  app.set_config("--config", "", "TOML or INI file with option values");
  app.require_subcommand(1);
  Run run;

  TuneOpts tune;
  auto* c_tune = app.add_subcommand("tune", "recommend lambda, m and M from gamma_max; write a CT sweep");
  c_tune->add_option("--gamma-max", tune.gamma_max, "known gamma_max");
  c_tune->add_option("--ising-L", tune.ising_L, "estimate gamma_max with AIS on an L x L lattice");
  c_tune->add_option("--theta-grid", tune.theta_grid, "theta values for the gamma estimate")->capture_default_str();
  c_tune->add_option("--particles", tune.particles, "AIS particles M")->capture_default_str();
  c_tune->add_option("--temps", tune.temps, "AIS rungs")->capture_default_str();
  c_tune->add_option("--replicates", tune.replicates, "replicates per theta")->capture_default_str();
  c_tune->add_option("--inefficiency", tune.inefficiency, "surrogate or empirical")->capture_default_str();
  c_tune->add_option("--lambda-max", tune.lambda_max, "largest lambda in the sweep")->capture_default_str();
  add_common(c_tune, run);

  IsingSimOpts isim;
  auto* c_isim = app.add_subcommand("ising-simulate", "perfect-sample an Ising lattice");
  c_isim->add_option("--L", isim.L, "lattice side")->capture_default_str();
  c_isim->add_option("--theta", isim.theta, "interaction")->capture_default_str();
  c_isim->add_option("--typical", isim.typical, "pick the draw with S nearest the mean of this many")
      ->capture_default_str();
  c_isim->add_option("--out", isim.out, "lattice file name")->capture_default_str();
  add_common(c_isim, run);

  IsingFitOpts ifit;
  auto* c_ifit = app.add_subcommand("ising-fit", "posterior of theta for one lattice");
  c_ifit->add_option("--data", ifit.data, "lattice file")->required();
  c_ifit->add_option("--method", ifit.method, "bp, bias-corrected or exchange")->capture_default_str();
  c_ifit->add_option("--lambda", ifit.lambda, "blocks")->capture_default_str();
  c_ifit->add_option("--m", ifit.m, "Poisson mean per block")->capture_default_str();
  c_ifit->add_option("--particles", ifit.particles, "AIS particles per Zhat")->capture_default_str();
  c_ifit->add_option("--temps", ifit.temps, "AIS rungs")->capture_default_str();
  c_ifit->add_option("--blocks", ifit.blocks, "blocks of the bias-corrected estimator")->capture_default_str();
  c_ifit->add_option("--iters", ifit.iters, "iterations")->capture_default_str();
  c_ifit->add_option("--step", ifit.step, "random-walk step")->capture_default_str();
  c_ifit->add_option("--init", ifit.init, "initial theta (default 0.2)");
  c_ifit->add_option("--burn-in", ifit.burn_in, "burn-in fraction for the summary")->capture_default_str();
  add_common(c_ifit, run);

  IsingOracleOpts iora;
  auto* c_iora = app.add_subcommand("ising-oracle", "exact posterior and log Z by enumeration (L <= 4)");
  c_iora->add_option("--data", iora.data, "lattice file")->required();
  c_iora->add_option("--theta", iora.theta, "theta values for log Z");
  add_common(c_iora, run);

  KentOpts kfit;
  auto* c_kfit = app.add_subcommand("kent-fit", "fit a Kent distribution");
  add_kent_opts(c_kfit, kfit);
  add_common(c_kfit, run);

  KentSimOpts ksim;
  auto* c_ksim = app.add_subcommand("kent-simulate", "draw Kent observations");
  c_ksim->add_option("--kappa", ksim.p.kappa, "concentration")->capture_default_str();
  c_ksim->add_option("--beta", ksim.p.beta, "ovalness")->capture_default_str();
  c_ksim->add_option("--psi", ksim.p.psi, "psi in [0, pi]")->capture_default_str();
  c_ksim->add_option("--alpha", ksim.p.alpha, "alpha in [0, 2 pi]")->capture_default_str();
  c_ksim->add_option("--eta", ksim.p.eta, "eta in [0, pi]")->capture_default_str();
  c_ksim->add_option("--n", ksim.n, "observations")->capture_default_str();
  c_ksim->add_option("--group", ksim.group, "write a group column with this label")->expected(1);
  c_ksim->add_option("--out", ksim.out, "CSV file name")->capture_default_str();
  add_common(c_ksim, run);

  ClassifyOpts kcls;
  auto* c_kcls = app.add_subcommand("kent-classify", "k-fold cross-validated classification");
  add_kent_opts(c_kcls, kcls.kent);
  c_kcls->add_option("--folds", kcls.folds, "folds")->capture_default_str();
  add_common(c_kcls, run);

  BootOpts kboot;
  auto* c_kboot = app.add_subcommand("kent-bootstrap", "percentile bootstrap intervals");
  c_kboot->add_option("--data", kboot.data, "CSV with x,y,z")->required();
  c_kboot->add_option("--method", kboot.method, "moment or mle")->capture_default_str();
  c_kboot->add_option("--n-boot", kboot.n_boot, "resamples")->capture_default_str();
  c_kboot->add_option("--level", kboot.level, "interval level")->capture_default_str();
  add_common(c_kboot, run);

  DiagnoseOpts diag;
  auto* c_diag = app.add_subcommand("diagnose", "summaries of a chain CSV");
  c_diag->add_option("chain", diag.chain, "chain CSV")->required();
  c_diag->add_option("--burn-in", diag.burn_in, "burn-in fraction")->capture_default_str();
  add_common(c_diag, run);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  const std::map<CLI::App*, std::function<int()>> handlers = {
      {c_tune, [&] { return cmd_tune(run, tune); }},
      {c_isim, [&] { return cmd_ising_simulate(run, isim); }},
      {c_ifit, [&] { return cmd_ising_fit(run, ifit); }},
      {c_iora, [&] { return cmd_ising_oracle(run, iora); }},
      {c_kfit, [&] { return cmd_kent_fit(run, kfit); }},
      {c_ksim, [&] { return cmd_kent_simulate(run, ksim); }},
      {c_kcls, [&] { return cmd_kent_classify(run, kcls); }},
      {c_kboot, [&] { return cmd_kent_bootstrap(run, kboot); }},
      {c_diag, [&] { return cmd_diagnose(run, diag); }},
  };
  CLI::App* sub = app.get_subcommands().front();
  run.app = &app;
  try {
    const int status = handlers.at(sub)();
    write_manifest(run, sub->get_name());
    return status;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumerical;
  }
}
