#include "impsym/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "impsym/composer.hpp"
#include "impsym/error.hpp"
#include "impsym/kvfile.hpp"
#include "impsym/sampling.hpp"
#include "impsym/verifier.hpp"

namespace impsym {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Run configuration

Quantization RunConfig::quantization(const std::string& subsystem) const {
  const auto it = quant_by_name.find(subsystem);
  return it == quant_by_name.end() ? quant : it->second;
}

namespace {

std::size_t read_count(const KvSection& sec, const char* key, std::size_t fallback) {
  const auto v = sec.get_int_opt(key);
  if (!v) return fallback;
  if (*v < 0) throw InputError(sec.where(sec.require(key)) + ": " + key + " must be >= 0");
  return static_cast<std::size_t>(*v);
}

double read_positive(const KvSection& sec, const char* key, double fallback) {
  const auto v = sec.get_number_opt(key);
  if (!v) return fallback;
  if (!(*v > 0.0) || !std::isfinite(*v))
    throw InputError(sec.where(sec.require(key)) + ": " + key + " must be positive");
  return *v;
}

void reject_unknown(const KvSection& sec, const std::set<std::string>& known) {
  for (const auto& e : sec.entries)
    if (!known.count(e.key))
      throw InputError(sec.where(e) + ": unknown key '" + e.key + "' in [" + sec.kind + "]");
}

Quantization read_quant(const KvSection& sec, const Quantization& base) {
  Quantization q;
  q.eta_x = read_positive(sec, "eta_x", base.eta_x);
  q.eta_w = read_positive(sec, "eta_w", base.eta_w);
  q.eta_u = read_positive(sec, "eta_u", base.eta_u);
  return q;
}

}  // namespace

RunConfig load_run_config(const fs::path& path) {
  const KvDocument doc = KvDocument::load(path.string());
  const KvSection* run = doc.first("run");
  if (!run) throw InputError(path.string() + ": missing [run] section");
  reject_unknown(*run, {"system", "certificates", "eta_x", "eta_w", "eta_u", "step", "max_norm",
                        "seed", "jobs", "mu_grid", "Phi", "samples", "tol", "composition_tol",
                        "inclusion_cap", "refine", "global_tuples", "stability_slack", "runs",
                        "horizon", "eps_tilde_override", "rho_tilde_override", "composed_cap",
                        "exploration_limit"});
  RunConfig cfg;
  cfg.origin = path;
  const fs::path base = path.parent_path();
  cfg.system_path = base / run->get_string("system");
  cfg.certificates_path = base / run->get_string("certificates");
  for (const char* key : {"eta_x", "eta_w", "eta_u"}) run->require(key);
  cfg.quant = read_quant(*run, {});
  cfg.step = read_positive(*run, "step", cfg.step);
  cfg.max_norm = read_positive(*run, "max_norm", cfg.max_norm);
  if (const auto s = run->get_int_opt("seed")) {
    if (*s < 0) throw InputError(run->where(run->require("seed")) + ": seed must be >= 0");
    cfg.seed = static_cast<std::uint64_t>(*s);
  }
  cfg.jobs = std::max<std::size_t>(1, read_count(*run, "jobs", cfg.jobs));
  if (auto mu = run->get_numbers_opt("mu_grid")) {
    for (double v : *mu)
      if (!(v >= 0.0))
        throw InputError(run->where(run->require("mu_grid")) + ": weights must be >= 0");
    cfg.mu_values = *mu;
  }
  cfg.Phi = run->get_numbers_opt("Phi");
  cfg.samples = read_count(*run, "samples", cfg.samples);
  cfg.tol = read_positive(*run, "tol", cfg.tol);
  cfg.composition_tol = read_positive(*run, "composition_tol", cfg.composition_tol);
  cfg.inclusion_cap = read_count(*run, "inclusion_cap", cfg.inclusion_cap);
  cfg.refine = std::max<std::size_t>(1, read_count(*run, "refine", cfg.refine));
  cfg.global_tuples = read_count(*run, "global_tuples", cfg.global_tuples);
  cfg.stability_slack = read_positive(*run, "stability_slack", cfg.stability_slack);
  cfg.runs = read_count(*run, "runs", cfg.runs);
  cfg.horizon = read_count(*run, "horizon", cfg.horizon);
  cfg.eps_tilde_override = run->get_number_opt("eps_tilde_override");
  cfg.rho_tilde_override = run->get_number_opt("rho_tilde_override");
  cfg.composed_cap = read_count(*run, "composed_cap", cfg.composed_cap);
  cfg.exploration_limit = read_count(*run, "exploration_limit", cfg.exploration_limit);

  for (const KvSection* sec : doc.all("quantization")) {
    if (sec->name.empty()) throw InputError(sec->where() + ": [quantization <subsystem>]");
    reject_unknown(*sec, {"eta_x", "eta_w", "eta_u"});
    cfg.quant_by_name[sec->name] = read_quant(*sec, cfg.quant);
  }
  for (const KvSection* sec : doc.all("safety")) {
    if (sec->name.empty()) throw InputError(sec->where() + ": [safety <subsystem>]");
    reject_unknown(*sec, {"lower", "upper"});
    Box b{sec->get_numbers("lower"), sec->get_numbers("upper")};
    if (b.lower.size() != b.upper.size())
      throw InputError(sec->where() + ": lower and upper differ in length");
    cfg.safe[sec->name] = std::move(b);
  }
  return cfg;
}

std::vector<double> resolve_phi(const RunConfig& cfg, const NetworkSpec& spec) {
  std::vector<double> phi;
  if (cfg.Phi) {
    phi = *cfg.Phi;
  } else if (spec.phi_slack) {
    phi = *spec.phi_slack;
  } else {
    for (const auto& s : spec.subsystems) phi.push_back(cfg.quantization(s.name).eta_w);
  }
  if (phi.size() != spec.size())
    throw InputError(cfg.origin.string() + ": Phi needs one entry per subsystem");
  return phi;
}

Inputs load_inputs(const RunConfig& cfg) {
  Inputs in;
  in.spec = load_network_file(cfg.system_path.string());
  for (const auto& [name, q] : cfg.quant_by_name) in.spec.index_of(name);
  for (const auto& [name, b] : cfg.safe) in.spec.index_of(name);
  const ValidationReport v = validate_network(in.spec, resolve_phi(cfg, in.spec));
  if (!v.ok()) throw InputError(cfg.system_path.string() + ": " + v.summary());
  in.certs = load_certificates_file(cfg.certificates_path.string(), in.spec);
  for (const auto& c : in.certs) c.validate();
  return in;
}

fs::path table_path(const fs::path& out, const std::string& name) {
  return out / ("table_" + name + ".json");
}

namespace {

std::vector<Grid> grids_for(const RunConfig& cfg, const SubsystemSpec& s) {
  const Quantization q = cfg.quantization(s.name);
  return {build_grid(s.state_bounds, q.eta_x), build_grid(s.internal_bounds, q.eta_w),
          build_grid(s.external_bounds, q.eta_u)};
}

}  // namespace

std::vector<TransitionTable> load_tables(const RunConfig& cfg, const NetworkSpec& spec,
                                         const fs::path& out) {
  std::vector<TransitionTable> tables;
  for (const auto& s : spec.subsystems) {
    const fs::path p = table_path(out, s.name);
    if (!fs::exists(p))
      throw InputError(p.string() + ": missing transition table (run 'abstract' first)");
    TransitionTable t = TransitionTable::load(p.string());
    const auto g = grids_for(cfg, s);
    if (t.name != s.name || t.arity != s.arity || !(t.state_grid == g[0]) ||
        !(t.internal_grid == g[1]) || !(t.external_grid == g[2]) || t.tau != s.tau ||
        t.z_min != s.z_min || t.z_max != s.z_max)
      throw InputError(p.string() + ": table does not match the system and run configuration");
    tables.push_back(std::move(t));
  }
  return tables;
}

// ---------------------------------------------------------------------------
// Shared helpers

namespace {

constexpr std::size_t kMaxListed = 16;

ojson header(const char* stage, const RunConfig& cfg) {
  ojson j;
  j["format"] = std::string("impsym-") + stage + "-report";
  j["version"] = kReportVersion;
  j["seed"] = cfg.seed;
  return j;
}

void write_json(const fs::path& out, const std::string& file, const ojson& j,
                StageResult& res) {
  fs::create_directories(out);
  std::ofstream os(out / file, std::ios::binary);
  if (!os) throw InputError((out / file).string() + ": cannot open for writing");
  os << j.dump(2) << '\n';
  res.files.push_back(file);
}

ojson read_report(const fs::path& out, const std::string& file, const std::string& stage) {
  const fs::path p = out / file;
  std::ifstream is(p, std::ios::binary);
  if (!is) throw InputError(p.string() + ": missing report (run '" + stage + "' first)");
  ojson j;
  try {
    j = ojson::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(p.string() + ": malformed report: " + e.what());
  }
  if (j.value("format", "") != "impsym-" + stage + "-report" ||
      j.value("version", 0) != kReportVersion)
    throw InputError(p.string() + ": unexpected report format or version");
  return j;
}

ojson to_json(const CheckReport& r) {
  ojson j;
  j["name"] = r.name;
  j["pass"] = r.pass;
  j["worst_margin"] = r.worst_margin;
  j["worst_normalized"] = r.worst_normalized;
  j["samples"] = r.samples;
  j["skipped"] = r.skipped;
  ojson w = ojson::object();
  for (const auto& v : r.witness) w[v.name] = v.value;
  j["witness"] = w;
  for (const auto& [k, v] : r.extra) j[k] = v;
  return j;
}

ojson to_json(const Fit& f) {
  ojson j;
  j["finite"] = f.finite;
  j["sigma"] = f.sigma;
  j["eps"] = f.eps;
  j["rho_u"] = f.rho_u.to_string();
  j["rho_coef"] = f.rho_coef;
  j["rho_exp"] = f.rho_exp;
  return j;
}

ojson to_json(const Condition1Report& r) {
  ojson j;
  j["pass"] = r.pass;
  j["worst_margin"] = r.worst_margin;
  j["worst_normalized"] = r.worst_normalized;
  j["samples"] = r.samples;
  j["witness"] = {{"x", r.witness_x}, {"xh", r.witness_xh}, {"c", r.witness_c}};
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

ojson to_json(const Condition2Report& r) {
  ojson j;
  j["pass"] = r.pass;
  j["seed"] = r.seed;
  j["fit"] = to_json(r.fit);
  j["tuples"] = r.tuples;
  j["transitions"] = r.transitions;
  j["strategy_inconsistencies"] = r.strategy_inconsistencies;
  j["fresh_excess"] = r.fresh_excess;
  j["stable"] = r.stable;
  j["counterexample_count"] = r.counterexamples.size();
  return j;
}

ojson matrix_json(const Eigen::MatrixXd& m) {
  ojson rows = ojson::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

void fail(StageResult& res, std::string what) {
  res.pass = false;
  res.failures.push_back(std::move(what));
}

double max_input_norm(const std::vector<TransitionTable>& tables) {
  double r = 0.0;
  for (const auto& t : tables)
    for (std::size_t id = 0; id < t.num_u(); ++id) r = std::max(r, inf_norm(t.external_grid.point(id)));
  return r;
}

std::vector<const TransitionTable*> pointers(const std::vector<TransitionTable>& tables) {
  std::vector<const TransitionTable*> p;
  for (const auto& t : tables) p.push_back(&t);
  return p;
}

std::vector<double> mu_from(const ojson& certify) {
  if (!certify.value("pass", false))
    throw InputError("certification report does not pass; no weights to use");
  return certify.at("mu").get<std::vector<double>>();
}

std::vector<LocalSimFn> local_functions(const Inputs& in) {
  std::vector<LocalSimFn> out;
  for (std::size_t i = 0; i < in.spec.size(); ++i) {
    const auto& s = in.spec.subsystems[i];
    out.push_back(build_local_simfn(in.certs[i], in.certs[i].epsilon, in.certs[i].delta,
                                    s.z_max, s.tau));
  }
  return out;
}

double state_diameter(const NetworkSpec& spec) {
  double R = 0.0;
  for (const auto& s : spec.subsystems)
    for (std::size_t d = 0; d < s.state_bounds.dim(); ++d)
      R = std::max(R, s.state_bounds.upper[d] - s.state_bounds.lower[d]);
  return R;
}

}  // namespace

// ---------------------------------------------------------------------------
// validate

StageResult run_validate(const RunConfig& cfg) {
  StageResult res;
  const Inputs in = load_inputs(cfg);
  ojson j = header("validate", cfg);
  j["system"] = cfg.system_path.filename().string();
  j["certificates"] = cfg.certificates_path.filename().string();
  ojson subs = ojson::array();
  for (std::size_t i = 0; i < in.spec.size(); ++i) {
    const auto& s = in.spec.subsystems[i];
    const auto g = grids_for(cfg, s);
    subs.push_back({{"name", s.name},
                    {"n", s.arity.n},
                    {"q", s.arity.q},
                    {"m", s.arity.m},
                    {"tau", s.tau},
                    {"z_min", s.z_min},
                    {"z_max", s.z_max},
                    {"cells", g[0].size()},
                    {"internal_points", g[1].size()},
                    {"external_points", g[2].size()}});
  }
  j["subsystems"] = subs;
  j["Phi"] = resolve_phi(cfg, in.spec);
  j["pass"] = true;
  res.report = std::move(j);
  return res;
}

// ---------------------------------------------------------------------------
// abstract

StageResult run_abstract(const RunConfig& cfg, const fs::path& out) {
  StageResult res;
  const Inputs in = load_inputs(cfg);
  ojson j = header("abstract", cfg);
  ojson subs = ojson::array();
  ojson timing;
  timing["format"] = "impsym-timing";
  timing["version"] = kReportVersion;
  for (const auto& s : in.spec.subsystems) {
    const Quantization q = cfg.quantization(s.name);
    BuildReport br;
    const auto t0 = std::chrono::steady_clock::now();
    const TransitionTable t =
        build_abstraction(s, q.eta_x, q.eta_w, q.eta_u, cfg.integrator(), cfg.jobs, &br);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    fs::create_directories(out);
    t.save(table_path(out, s.name).string());
    res.files.push_back(table_path(out, s.name).filename().string());
    timing[s.name] = secs;

    std::size_t dmin = std::numeric_limits<std::size_t>::max(), dmax = 0, keys = 0;
    double dsum = 0.0;
    ojson hist = ojson::object();
    for (const auto& [deg, count] : br.out_degree_histogram) {
      hist[std::to_string(deg)] = count;
      dmin = std::min(dmin, deg);
      dmax = std::max(dmax, deg);
      dsum += static_cast<double>(deg) * static_cast<double>(count);
      keys += count;
    }
    ojson blocked = ojson::array();
    for (std::size_t k = 0; k < br.blocked.size() && k < kMaxListed; ++k) {
      const auto& b = br.blocked[k];
      blocked.push_back({{"cell", b.cell},
                         {"counter", b.counter},
                         {"w", b.w},
                         {"u", b.u},
                         {"mode", mode_name(b.mode)},
                         {"reason", b.reason}});
    }
    subs.push_back({{"name", s.name},
                    {"eta_x", q.eta_x},
                    {"eta_w", q.eta_w},
                    {"eta_u", q.eta_u},
                    {"cells", br.cells},
                    {"abstract_states", br.abstract_states},
                    {"internal_points", br.internal_points},
                    {"external_points", br.external_points},
                    {"entries", br.entries},
                    {"transitions", br.transitions},
                    {"out_degree",
                     {{"min", keys ? dmin : 0},
                      {"max", dmax},
                      {"mean", keys ? dsum / static_cast<double>(keys) : 0.0},
                      {"histogram", hist}}},
                    {"blocked_count", br.blocked.size()},
                    {"blocked", blocked},
                    {"table", table_path(out, s.name).filename().string()}});
  }
  j["subsystems"] = subs;
  j["pass"] = true;
  write_json(out, "abstract_report.json", j, res);
  write_json(out, "timing_abstract.json", timing, res);
  res.report = std::move(j);
  return res;
}

// ---------------------------------------------------------------------------
// certify

StageResult run_certify(const RunConfig& cfg, const fs::path& out) {
  StageResult res;
  const Inputs in = load_inputs(cfg);
  const std::size_t N = in.spec.size();
  ojson j = header("certify", cfg);
  SampleOptions so;
  so.samples = cfg.samples;
  so.jobs = cfg.jobs;
  so.tol = cfg.tol;

  ojson subs = ojson::array();
  for (std::size_t i = 0; i < N; ++i) {
    const auto& s = in.spec.subsystems[i];
    const auto& c = in.certs[i];
    ojson sj;
    sj["name"] = s.name;
    ojson checks = ojson::array();
    for (const CheckReport& r :
         {check_sandwich(c, s, so), check_flow_dissipativity(c, s, so),
          check_jump_dissipativity(c, s, so), check_triangle(c, s.state_bounds, so)}) {
      checks.push_back(to_json(r));
      if (!r.pass) fail(res, r.name + "[" + s.name + "]");
    }
    sj["checks"] = checks;

    ojson dw;
    try {
      const DwellReport d = check_dwell_time(c.kappa_c, c.kappa_d, s.tau, s.z_min, s.z_max);
      dw = {{"pass", d.pass}, {"value_at_z_min", d.value_at_zmin}, {"value_at_z_max", d.value_at_zmax}};
      if (!d.pass) fail(res, "dwell_time[" + s.name + "]");
    } catch (const InputError& e) {
      dw = {{"pass", false}, {"error", e.what()}};
      fail(res, "dwell_time[" + s.name + "]");
    }
    sj["dwell_time"] = dw;

    const auto kind = classify_case(c.kappa_c, c.kappa_d);
    ojson sf;
    sf["case"] = kind ? case_name(*kind) : "none";
    try {
      const LocalSimFn f = build_local_simfn(c, c.epsilon, c.delta, s.z_max, s.tau);
      std::vector<double> mult;
      for (int k = 0; k <= s.z_max; ++k) mult.push_back(f.multiplier(k));
      sf["multipliers"] = mult;
      sf["alpha"] = local_alpha(f).to_string();
      sf["pass"] = true;
    } catch (const InputError& e) {
      sf["pass"] = false;
      sf["error"] = e.what();
      fail(res, "simulation_function[" + s.name + "]");
    }
    sj["simulation_function"] = sf;
    subs.push_back(std::move(sj));
  }
  j["subsystems"] = subs;

  // Weighted block condition on the flow and jump supply blocks.
  const std::vector<std::vector<SupplyBlock>> sets{supply_blocks(in.spec, in.certs, false),
                                                   supply_blocks(in.spec, in.certs, true)};
  const auto candidates = mu_grid(cfg.mu_values, N);
  if (candidates.empty()) throw InputError(cfg.origin.string() + ": mu_grid has no nonzero value");
  const MuSearchResult ms = search_mu(in.spec.M, sets, candidates, cfg.composition_tol);
  const std::vector<double> mu = ms.mu ? *ms.mu : ms.best;
  ojson comp;
  comp["candidates"] = ms.candidates;
  comp["mu"] = mu;
  comp["best_score"] = ms.best_score;
  comp["tol"] = cfg.composition_tol;
  const char* names[] = {"flow", "jump"};
  for (std::size_t k = 0; k < 2; ++k) {
    const CompositionReport cr = check_compositionality(in.spec.M, sets[k], mu, cfg.composition_tol);
    std::vector<double> ev(cr.eigenvalues.data(), cr.eigenvalues.data() + cr.eigenvalues.size());
    comp[names[k]] = {{"pass", cr.pass},
                      {"max_eigenvalue", cr.max_eigenvalue},
                      {"eigenvalues", ev},
                      {"Q", matrix_json(cr.Q)}};
  }
  comp["pass"] = ms.mu.has_value();
  if (!ms.mu) fail(res, "compositionality");
  j["compositionality"] = comp;

  std::vector<Grid> sg, ig;
  for (const auto& s : in.spec.subsystems) {
    const auto g = grids_for(cfg, s);
    sg.push_back(g[0]);
    ig.push_back(g[1]);
  }
  const InclusionReport inc = check_input_inclusion(in.spec.M, sg, ig, cfg.inclusion_cap, 1e-9);
  ojson ij;
  ij["pass"] = inc.pass;
  ij["checked"] = inc.checked;
  ij["violation_count"] = inc.violation_count;
  ojson wit = ojson::array();
  for (const auto& v : inc.violations)
    wit.push_back({{"state", v.state},
                   {"image", v.image},
                   {"subsystem", in.spec.subsystems[v.subsystem].name},
                   {"reason", v.reason}});
  ij["witnesses"] = wit;
  if (!inc.pass) fail(res, "input_inclusion");
  j["input_inclusion"] = ij;

  j["mu"] = mu;
  j["failures"] = res.failures;
  j["pass"] = res.pass;
  write_json(out, "certify_report.json", j, res);
  res.report = std::move(j);
  return res;
}

// ---------------------------------------------------------------------------
// compose

StageResult run_compose(const RunConfig& cfg, const fs::path& out) {
  StageResult res;
  const Inputs in = load_inputs(cfg);
  const auto tables = load_tables(cfg, in.spec, out);
  const std::vector<double> mu = mu_from(read_report(out, "certify_report.json", "certify"));
  const ComposedSystem sys(pointers(tables), in.spec.M, resolve_phi(cfg, in.spec));

  ojson j = header("compose", cfg);
  j["mu"] = mu;
  j["Phi"] = sys.Phi();
  j["states"] = sys.num_states();
  j["inputs"] = sys.num_inputs();

  // Exploration from the abstract state nearest the centre of every state box.
  ComposedState init;
  for (std::size_t i = 0; i < sys.size(); ++i) {
    const Box& b = in.spec.subsystems[i].state_bounds;
    std::vector<double> c(b.dim());
    for (std::size_t d = 0; d < b.dim(); ++d) c[d] = 0.5 * (b.lower[d] + b.upper[d]);
    init.parts.push_back({tables[i].state_grid.nearest(c).id, 0});
  }
  {
    fs::create_directories(out);
    std::ofstream os(out / "exploration.json", std::ios::binary);
    write_exploration(os, sys, {init}, cfg.exploration_limit);
    res.files.push_back("exploration.json");
  }

  if (sys.num_states() <= cfg.composed_cap) {
    const Game g = game_from_composed(sys, cfg.composed_cap, cfg.jobs);
    std::size_t disabled = 0;
    for (auto d : g.disabled) disabled += d;
    j["transitions"] = g.succ.size();
    j["disabled_pairs"] = disabled;
  } else {
    j["note"] = "composed state space above composed_cap; only the exploration was written";
  }
  j["pass"] = true;
  write_json(out, "compose_report.json", j, res);
  res.report = std::move(j);
  return res;
}

// ---------------------------------------------------------------------------
// verify

StageResult run_verify(const RunConfig& cfg, const fs::path& out) {
  StageResult res;
  const Inputs in = load_inputs(cfg);
  const auto tables = load_tables(cfg, in.spec, out);
  const std::vector<double> mu = mu_from(read_report(out, "certify_report.json", "certify"));
  const std::size_t N = in.spec.size();
  const auto locals = local_functions(in);

  ojson j = header("verify", cfg);
  j["mu"] = mu;
  ojson subs = ojson::array();
  ojson cex = ojson::array();
  std::size_t cex_total = 0;
  std::vector<KInfFn> alphas;
  double rho_exp = 1.0;
  for (std::size_t i = 0; i < N; ++i) {
    const auto& s = in.spec.subsystems[i];
    const KInfFn alpha = local_alpha(locals[i]);
    alphas.push_back(alpha);
    for (const auto& t : in.certs[i].rho_uc.terms()) rho_exp = std::max(rho_exp, t.p);

    const Condition1Report c1 = verify_condition1(locals[i], alpha, tables[i], cfg.samples, cfg.tol);
    Condition2Options opt;
    opt.seed = Rng::derive(cfg.seed, 10 + i);
    opt.refine = cfg.refine;
    opt.jobs = cfg.jobs;
    opt.stability_slack = cfg.stability_slack;
    const Condition2Report c2 = verify_condition2_local(s, tables[i], locals[i], opt);
    if (!c1.pass) fail(res, "condition1[" + s.name + "]");
    if (!c2.pass) fail(res, "condition2[" + s.name + "]");
    for (const auto& c : c2.counterexamples) {
      ++cex_total;
      if (cex.size() < 64) cex.push_back({{"subsystem", s.name}, {"kind", c.kind}, {"message", c.message}});
    }
    subs.push_back({{"name", s.name},
                    {"case", case_name(locals[i].kind)},
                    {"alpha", alpha.to_string()},
                    {"condition1", to_json(c1)},
                    {"condition2", to_json(c2)}});
  }
  j["subsystems"] = subs;

  const ComposedSystem sys(pointers(tables), in.spec.M, resolve_phi(cfg, in.spec));
  GlobalSimFn g = compose_simfn(mu, locals);
  g.alpha = global_alpha(mu, alphas, state_diameter(in.spec));
  const Condition1Report g1 =
      verify_condition1_global(g, g.alpha, sys, cfg.samples, Rng::derive(cfg.seed, 50), cfg.tol);
  Condition2Options gopt;
  gopt.seed = Rng::derive(cfg.seed, 60);
  gopt.global_tuples = cfg.global_tuples;
  gopt.jobs = cfg.jobs;
  gopt.stability_slack = cfg.stability_slack;
  const Condition2Report g2 = verify_condition2_global(in.spec, sys, g, cfg.integrator(), rho_exp, gopt);
  if (!g1.pass) fail(res, "condition1[network]");
  if (!g2.pass) fail(res, "condition2[network]");
  for (const auto& c : g2.counterexamples) {
    ++cex_total;
    if (cex.size() < 64) cex.push_back({{"subsystem", "network"}, {"kind", c.kind}, {"message", c.message}});
  }
  const double r = max_input_norm(tables);
  double eps_hat = 0.0;
  if (!g.alpha.is_zero() && g2.fit.finite)
    eps_hat = deviation_bound(g.alpha, g2.fit.rho_u, g2.fit.eps, r);

  ojson gj;
  gj["alpha"] = g.alpha.to_string();
  gj["diameter"] = state_diameter(in.spec);
  gj["condition1"] = to_json(g1);
  gj["condition2"] = to_json(g2);
  gj["input_norm"] = r;
  gj["eps_hat"] = eps_hat;
  j["network"] = gj;
  j["counterexample_count"] = cex_total;
  if (cex_total > 0) {
    ojson cj;
    cj["format"] = "impsym-counterexamples";
    cj["version"] = kReportVersion;
    cj["seed"] = cfg.seed;
    cj["total"] = cex_total;
    cj["counterexamples"] = cex;
    write_json(out, "counterexamples.json", cj, res);
    j["counterexamples"] = "counterexamples.json";
  }
  j["failures"] = res.failures;
  j["pass"] = res.pass;
  write_json(out, "verify_report.json", j, res);
  res.report = std::move(j);
  return res;
}

// ---------------------------------------------------------------------------
// simulate

StageResult run_simulate(const RunConfig& cfg, const fs::path& out) {
  StageResult res;
  const Inputs in = load_inputs(cfg);
  const auto tables = load_tables(cfg, in.spec, out);
  const ojson vr = read_report(out, "verify_report.json", "verify");
  const std::vector<double> mu = vr.at("mu").get<std::vector<double>>();
  const ojson& net = vr.at("network");
  const ojson& fit = net.at("condition2").at("fit");

  GlobalSimFn g = compose_simfn(mu, local_functions(in));
  g.alpha = KInfFn::parse(net.at("alpha").get<std::string>());
  if (g.alpha.is_zero()) throw InputError("verify report has no valid global lower bound");
  if (!fit.at("finite").get<bool>()) throw InputError("verify report has no finite global fit");
  g.sigma = fit.at("sigma").get<double>();
  g.eps = fit.at("eps").get<double>();
  g.rho_u = KInfFn::parse(fit.at("rho_u").get<std::string>());
  ojson j = header("simulate", cfg);
  if (cfg.eps_tilde_override) {
    g.eps = *cfg.eps_tilde_override;
    j["eps_tilde_override"] = g.eps;
  }
  if (cfg.rho_tilde_override) {
    const double a = *cfg.rho_tilde_override;
    const double p = fit.at("rho_exp").get<double>();
    g.rho_u = a > 0.0 ? KInfFn::power(a, p) : KInfFn::zero();
    j["rho_tilde_override"] = a;
  }

  const ComposedSystem sys(pointers(tables), in.spec.M, resolve_phi(cfg, in.spec));
  TrajectoryOptions opt;
  opt.runs = cfg.runs;
  opt.horizon = cfg.horizon;
  opt.seed = Rng::derive(cfg.seed, 70);
  opt.jobs = cfg.jobs;
  const TrajectoryReport tr = verify_trajectory_bound(in.spec, sys, g, cfg.integrator(), opt);

  {
    fs::create_directories(out);
    std::ofstream os(out / "trace_worst.csv", std::ios::binary);
    write_trace_csv(os, in.spec, tr);
    res.files.push_back("trace_worst.csv");
  }
  if (!tr.pass) fail(res, "trajectory_bound");
  if (tr.level_set_violations > 0) fail(res, "level_set");
  j["mu"] = mu;
  j["sigma"] = g.sigma;
  j["eps"] = g.eps;
  j["rho_u"] = g.rho_u.to_string();
  j["alpha"] = g.alpha.to_string();
  j["eps_hat"] = tr.eps_hat;
  j["input_norm"] = tr.input_norm;
  j["runs"] = tr.runs;
  j["horizon"] = cfg.horizon;
  j["steps"] = tr.steps;
  j["max_distance"] = tr.max_distance;
  j["max_ratio"] = tr.max_ratio;
  j["violations"] = tr.violations;
  j["level_set_violations"] = tr.level_set_violations;
  j["blocked_runs"] = tr.blocked;
  j["worst_run"] = tr.worst_run;
  j["trace"] = "trace_worst.csv";
  j["failures"] = res.failures;
  j["pass"] = res.pass;
  write_json(out, "simulate_report.json", j, res);
  res.report = std::move(j);
  return res;
}

// ---------------------------------------------------------------------------
// synthesize

namespace {

bool point_in(const Box& b, std::span<const double> p) {
  for (std::size_t d = 0; d < p.size(); ++d)
    if (p[d] < b.lower[d] - 1e-9 || p[d] > b.upper[d] + 1e-9) return false;
  return true;
}

ojson controller_json(const SafetyController& ctl, const std::function<ojson(std::size_t)>& label) {
  ojson states = ojson::array();
  for (std::size_t s = 0; s < ctl.winning.size(); ++s)
    if (ctl.winning[s]) states.push_back({{"state", label(s)}, {"inputs", ctl.allowed[s]}});
  return states;
}

}  // namespace

StageResult run_synthesize(const RunConfig& cfg, const fs::path& out) {
  StageResult res;
  const Inputs in = load_inputs(cfg);
  const auto tables = load_tables(cfg, in.spec, out);
  ojson j = header("synthesize", cfg);
  ojson subs = ojson::array();
  std::vector<std::vector<bool>> safe_cells(tables.size());
  for (std::size_t i = 0; i < tables.size(); ++i) {
    const auto& t = tables[i];
    const auto& s = in.spec.subsystems[i];
    const auto it = cfg.safe.find(s.name);
    const Box safe_box = it == cfg.safe.end() ? s.state_bounds : it->second;
    if (safe_box.dim() != s.arity.n)
      throw InputError(cfg.origin.string() + ": [safety " + s.name + "] has the wrong dimension");
    for (std::size_t c = 0; c < t.num_cells(); ++c)
      safe_cells[i].push_back(point_in(safe_box, t.state_grid.point(c)));
    std::vector<bool> safe(t.num_states());
    for (std::size_t id = 0; id < t.num_states(); ++id) safe[id] = safe_cells[i][t.state_of(id).cell];
    const Game g = game_from_table(t);
    const SafetyController ctl = safety_fixpoint(g, safe);
    const auto winners = static_cast<std::size_t>(std::count(ctl.winning.begin(), ctl.winning.end(), true));
    if (!ctl.monotone) fail(res, "monotonicity[" + s.name + "]");
    if (winners == 0) fail(res, "empty_controller[" + s.name + "]");

    ojson cj = header("controller", cfg);
    cj["format"] = "impsym-controller";
    cj["subsystem"] = s.name;
    cj["states"] = controller_json(ctl, [&](std::size_t id) {
      const AbstractState a = t.state_of(id);
      return ojson{a.cell, a.counter};
    });
    const std::string file = "controller_" + s.name + ".json";
    write_json(out, file, cj, res);
    subs.push_back({{"name", s.name},
                    {"safe_lower", safe_box.lower},
                    {"safe_upper", safe_box.upper},
                    {"states", t.num_states()},
                    {"safe_states", static_cast<std::size_t>(std::count(safe.begin(), safe.end(), true))},
                    {"winning_states", winners},
                    {"iterations", ctl.iterations},
                    {"sizes", ctl.sizes},
                    {"monotone", ctl.monotone},
                    {"controller", file}});
  }
  j["subsystems"] = subs;

  const ComposedSystem sys(pointers(tables), in.spec.M, resolve_phi(cfg, in.spec));
  if (sys.num_states() <= cfg.composed_cap) {
    const Game g = game_from_composed(sys, cfg.composed_cap, cfg.jobs);
    std::vector<bool> safe(sys.num_states());
    for (std::size_t id = 0; id < sys.num_states(); ++id) {
      const ComposedState cs = sys.state_of(id);
      bool ok = true;
      for (std::size_t i = 0; i < cs.parts.size() && ok; ++i) ok = safe_cells[i][cs.parts[i].cell];
      safe[id] = ok;
    }
    const SafetyController ctl = safety_fixpoint(g, safe);
    const auto winners = static_cast<std::size_t>(std::count(ctl.winning.begin(), ctl.winning.end(), true));
    if (!ctl.monotone) fail(res, "monotonicity[network]");
    if (winners == 0) fail(res, "empty_controller[network]");
    ojson cj = header("controller", cfg);
    cj["format"] = "impsym-controller";
    cj["subsystem"] = "network";
    cj["states"] = controller_json(ctl, [&](std::size_t id) {
      ojson parts = ojson::array();
      for (const auto& p : sys.state_of(id).parts) parts.push_back({p.cell, p.counter});
      return parts;
    });
    write_json(out, "controller_network.json", cj, res);
    j["network"] = {{"states", sys.num_states()},
                    {"safe_states", static_cast<std::size_t>(std::count(safe.begin(), safe.end(), true))},
                    {"winning_states", winners},
                    {"iterations", ctl.iterations},
                    {"monotone", ctl.monotone},
                    {"controller", "controller_network.json"}};
  } else {
    j["network"] = {{"note", "composed state space above composed_cap"}};
  }
  j["failures"] = res.failures;
  j["pass"] = res.pass;
  write_json(out, "synthesize_report.json", j, res);
  res.report = std::move(j);
  return res;
}

}  // namespace impsym
