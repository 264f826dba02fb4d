#pragma once

// Pipeline stages behind the command-line tool. Stages communicate through
// files in an output directory; each returns its JSON report and a verdict.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "impsym/abstraction.hpp"
#include "impsym/certificate.hpp"
#include "impsym/grid.hpp"
#include "impsym/integrator.hpp"
#include "impsym/system.hpp"

namespace impsym {

struct Quantization {
  double eta_x = 0.0;
  double eta_w = 0.0;
  double eta_u = 0.0;
};

struct RunConfig {
  std::filesystem::path origin;
  std::filesystem::path system_path;
  std::filesystem::path certificates_path;

  Quantization quant;                              // defaults
  std::map<std::string, Quantization> quant_by_name;  // [quantization <name>]
  double step = 1e-3;
  double max_norm = 1e6;
  std::uint64_t seed = 1;
  std::size_t jobs = 1;

  std::vector<double> mu_values{1.0, 2.0};
  std::optional<std::vector<double>> Phi;   // default: network Phi, then eta_w
  std::size_t samples = 4096;               // certificate and condition-1 samples
  double tol = 1e-7;
  double composition_tol = 1e-9;
  std::size_t inclusion_cap = 1'000'000;

  std::size_t refine = 5;
  std::size_t global_tuples = 20000;
  double stability_slack = 0.05;

  std::size_t runs = 1000;
  std::size_t horizon = 50;
  std::optional<double> eps_tilde_override;
  std::optional<double> rho_tilde_override;

  std::map<std::string, Box> safe;          // [safety <name>] lower/upper
  std::size_t composed_cap = 1'000'000;
  std::size_t exploration_limit = 1000;

  Quantization quantization(const std::string& subsystem) const;
  IntegratorConfig integrator() const { return {step, max_norm}; }
};

/// Reads a "[run]" document; relative paths resolve against its directory.
/// Throws InputError.
RunConfig load_run_config(const std::filesystem::path& path);

struct Inputs {
  NetworkSpec spec;
  std::vector<Certificate> certs;
};

/// Loads and validates the system and certificate files named by the config.
Inputs load_inputs(const RunConfig& cfg);

struct StageResult {
  bool pass = true;
  nlohmann::ordered_json report;
  std::vector<std::string> failures;  // names of failed conditions
  std::vector<std::string> files;     // files written, relative to the output dir
};

inline constexpr int kReportVersion = 1;

StageResult run_validate(const RunConfig& cfg);
StageResult run_abstract(const RunConfig& cfg, const std::filesystem::path& out);
StageResult run_certify(const RunConfig& cfg, const std::filesystem::path& out);
StageResult run_compose(const RunConfig& cfg, const std::filesystem::path& out);
StageResult run_verify(const RunConfig& cfg, const std::filesystem::path& out);
StageResult run_simulate(const RunConfig& cfg, const std::filesystem::path& out);
StageResult run_synthesize(const RunConfig& cfg, const std::filesystem::path& out);

/// Per-subsystem table path inside an output directory.
std::filesystem::path table_path(const std::filesystem::path& out, const std::string& name);

/// Tables in subsystem order; throws InputError when one is missing or does
/// not match the spec and config.
std::vector<TransitionTable> load_tables(const RunConfig& cfg, const NetworkSpec& spec,
                                         const std::filesystem::path& out);

/// Phi per subsystem: config, then the network file, then eta_w.
std::vector<double> resolve_phi(const RunConfig& cfg, const NetworkSpec& spec);

}  // namespace impsym
