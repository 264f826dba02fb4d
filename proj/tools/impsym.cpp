#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "impsym/error.hpp"
#include "impsym/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kFail = 1;
constexpr int kInput = 2;

struct Options {
  std::string config;
  std::string out;
  std::string system;
  std::string certificates;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t jobs = 0;
};

std::filesystem::path output_dir(const Options& o) {
  if (!o.out.empty()) return o.out;
  if (const char* env = std::getenv("IMPSYM_OUT"); env && *env) return env;
  return "impsym-out";
}

int run(const std::string& command, const Options& o) {
  impsym::RunConfig cfg = impsym::load_run_config(o.config);
  if (o.seed_set) cfg.seed = o.seed;
  if (o.jobs > 0) cfg.jobs = o.jobs;
  if (!o.system.empty()) cfg.system_path = o.system;
  if (!o.certificates.empty()) cfg.certificates_path = o.certificates;
  const auto out = output_dir(o);

  impsym::StageResult res;
  if (command == "validate") res = impsym::run_validate(cfg);
  else if (command == "abstract") res = impsym::run_abstract(cfg, out);
  else if (command == "certify") res = impsym::run_certify(cfg, out);
  else if (command == "compose") res = impsym::run_compose(cfg, out);
  else if (command == "verify") res = impsym::run_verify(cfg, out);
  else if (command == "simulate") res = impsym::run_simulate(cfg, out);
  else if (command == "synthesize") res = impsym::run_synthesize(cfg, out);

  for (const auto& f : res.files) std::cout << "wrote " << (out / f).string() << '\n';
  if (res.pass) {
    std::cout << command << ": ok\n";
    return kOk;
  }
  std::cerr << command << ": failed:";
  for (const auto& f : res.failures) std::cerr << ' ' << f;
  std::cerr << '\n';
  return kFail;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Finite abstractions and simulation-function verification for impulsive networks"};
  app.require_subcommand(1, 1);
  Options o;
  const char* commands[][2] = {
      {"validate", "parse and check the system and certificate files"},
      {"abstract", "build one transition table per subsystem"},
      {"certify", "check the certificates and the compositional conditions"},
      {"compose", "assemble the network abstraction"},
      {"verify", "check the simulation-function conditions and fit their constants"},
      {"simulate", "check the deviation bound on random paired runs"},
      {"synthesize", "compute safety controllers on the abstractions"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config, "run configuration file")->required();
    sub->add_option("--out", o.out, "output directory (default: $IMPSYM_OUT or ./impsym-out)");
    sub->add_option("--seed", o.seed, "random seed")->each([&](const std::string&) { o.seed_set = true; });
    sub->add_option("--jobs", o.jobs, "worker threads")->check(CLI::PositiveNumber);
    if (std::string(name) == "validate") {
      sub->add_option("--system", o.system, "system file (overrides the config)");
      sub->add_option("--certificates", o.certificates, "certificate file (overrides the config)");
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInput;
  }
  try {
    return run(app.get_subcommands().front()->get_name(), o);
  } catch (const impsym::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInput;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInput;
  }
}
