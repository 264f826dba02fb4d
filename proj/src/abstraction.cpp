#include "impsym/abstraction.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "impsym/error.hpp"
#include "impsym/parallel.hpp"

namespace impsym {

using ojson = nlohmann::ordered_json;

const char* mode_name(Mode m) { return m == Mode::Flow ? "flow" : "jump"; }

bool mode_admissible(int z_min, int z_max, int c, Mode m) {
  if (m == Mode::Flow) return c >= 0 && c <= z_max - 1;
  return c >= z_min && c <= z_max;
}

bool mode_admissible(const SubsystemSpec& spec, int c, Mode m) {
  return mode_admissible(spec.z_min, spec.z_max, c, m);
}

std::vector<double> continuous_successor(const SubsystemSpec& spec, std::span<const double> x,
                                         std::span<const double> w, std::span<const double> u,
                                         Mode mode, const IntegratorConfig& config) {
  if (mode == Mode::Flow) return integrate_flow(spec.flow, x, w, u, spec.tau, config);
  return apply_jump(spec.jump, x, w, u);
}

HybridState concrete_step(const SubsystemSpec& spec, const HybridState& state,
                          std::span<const double> w, std::span<const double> u, Mode mode,
                          const IntegratorConfig& config) {
  if (!mode_admissible(spec, state.c, mode))
    throw InputError(std::string(mode_name(mode)) + " is not admissible at counter " +
                     std::to_string(state.c) + " (z_min = " + std::to_string(spec.z_min) +
                     ", z_max = " + std::to_string(spec.z_max) + ")");
  HybridState next;
  next.x = continuous_successor(spec, state.x, w, u, mode, config);
  next.c = mode == Mode::Flow ? state.c + 1 : 0;
  return next;
}

// ---------------------------------------------------------------------------
// TransitionTable

std::size_t TransitionTable::state_id(const AbstractState& s) const {
  if (s.cell >= num_cells() || s.counter < 0 || s.counter > z_max)
    throw InputError("abstract state (" + std::to_string(s.cell) + ", " +
                     std::to_string(s.counter) + ") out of range");
  return s.cell * num_counters() + static_cast<std::size_t>(s.counter);
}

AbstractState TransitionTable::state_of(std::size_t id) const {
  return {id / num_counters(), static_cast<int>(id % num_counters())};
}

std::size_t TransitionTable::key(const AbstractState& s, std::size_t w, std::size_t u,
                                 Mode m) const {
  if (w >= num_w() || u >= num_u())
    throw InputError("input index out of range (w = " + std::to_string(w) +
                     ", u = " + std::to_string(u) + ")");
  return ((state_id(s) * num_w() + w) * num_u() + u) * 2 + static_cast<std::size_t>(m);
}

void TransitionTable::init_storage() {
  offsets_.assign(num_keys() + 1, 0);
  blocked_.assign(num_keys(), 0);
  cells_.clear();
}

std::span<const std::uint32_t> TransitionTable::successor_cells(const AbstractState& s,
                                                                std::size_t w, std::size_t u,
                                                                Mode m) const {
  const std::size_t k = key(s, w, u, m);
  return {cells_.data() + offsets_[k], static_cast<std::size_t>(offsets_[k + 1] - offsets_[k])};
}

bool TransitionTable::is_blocked(const AbstractState& s, std::size_t w, std::size_t u,
                                 Mode m) const {
  if (!mode_admissible(z_min, z_max, s.counter, m)) return true;
  return blocked_[key(s, w, u, m)] != 0;
}

Successors TransitionTable::successors(const AbstractState& s, std::size_t w, std::size_t u,
                                       Mode m) const {
  Successors out;
  if (is_blocked(s, w, u, m)) {
    out.blocked = true;
    out.any_blocked = true;
    return out;
  }
  const int c = m == Mode::Flow ? s.counter + 1 : 0;
  for (std::uint32_t cell : successor_cells(s, w, u, m)) out.states.push_back({cell, c});
  return out;
}

Successors TransitionTable::successors(const AbstractState& s, std::size_t w,
                                       std::size_t u) const {
  Successors out;
  // Jump successors have counter 0 and come first in AbstractState order.
  for (Mode m : {Mode::Jump, Mode::Flow}) {
    if (!mode_admissible(z_min, z_max, s.counter, m)) continue;
    auto part = successors(s, w, u, m);
    out.any_blocked = out.any_blocked || part.blocked;
    out.states.insert(out.states.end(), part.states.begin(), part.states.end());
  }
  std::sort(out.states.begin(), out.states.end());
  out.blocked = out.states.empty();
  return out;
}

bool TransitionTable::operator==(const TransitionTable& o) const {
  return name == o.name && arity == o.arity && state_grid == o.state_grid &&
         internal_grid == o.internal_grid && external_grid == o.external_grid &&
         tau == o.tau && z_min == o.z_min && z_max == o.z_max &&
         integrator.step == o.integrator.step && integrator.max_norm == o.integrator.max_norm &&
         offsets_ == o.offsets_ && cells_ == o.cells_ && blocked_ == o.blocked_;
}

// ---------------------------------------------------------------------------
// build

namespace {

struct CellResult {
  // successor cells per (w, u, mode), index (w * nU + u) * 2 + mode
  std::vector<std::vector<std::uint32_t>> succ;
  std::vector<std::string> failure;  // non-empty: integration or evaluation failed
};

}  // namespace

TransitionTable build_abstraction(const SubsystemSpec& spec, double eta_x, double eta_w,
                                  double eta_u, const IntegratorConfig& config,
                                  std::size_t jobs, BuildReport* report) {
  TransitionTable t;
  t.name = spec.name;
  t.arity = spec.arity;
  t.state_grid = build_grid(spec.state_bounds, eta_x);
  t.internal_grid = build_grid(spec.internal_bounds, eta_w);
  t.external_grid = build_grid(spec.external_bounds, eta_u);
  t.tau = spec.tau;
  t.z_min = spec.z_min;
  t.z_max = spec.z_max;
  t.integrator = config;
  config.validate(spec.tau);
  if (t.state_grid.size() > std::numeric_limits<std::uint32_t>::max())
    throw InputError("state grid too large for the table format");
  t.init_storage();

  const std::size_t nC = t.num_cells(), nW = t.num_w(), nU = t.num_u();
  const std::size_t per_cell = nW * nU * 2;

  // Continuous successors depend on (cell, w, u, mode) only; counters reuse them.
  std::vector<CellResult> results(nC);
  parallel_chunks(nC, jobs, [&](std::size_t, std::size_t begin, std::size_t end) {
    std::vector<double> x(spec.arity.n), w(spec.arity.q), u(spec.arity.m);
    for (std::size_t cell = begin; cell < end; ++cell) {
      CellResult& r = results[cell];
      r.succ.assign(per_cell, {});
      r.failure.assign(per_cell, {});
      t.state_grid.point_into(cell, x);
      for (std::size_t wi = 0; wi < nW; ++wi) {
        t.internal_grid.point_into(wi, w);
        for (std::size_t ui = 0; ui < nU; ++ui) {
          t.external_grid.point_into(ui, u);
          for (Mode m : {Mode::Flow, Mode::Jump}) {
            const std::size_t slot = (wi * nU + ui) * 2 + static_cast<std::size_t>(m);
            try {
              const auto xp = continuous_successor(spec, x, w, u, m, config);
              const auto ids = t.state_grid.ball(xp, eta_x);
              r.succ[slot].assign(ids.begin(), ids.end());
              if (ids.empty()) r.failure[slot] = "successor leaves the state bounds";
            } catch (const IntegrationError& e) {
              r.failure[slot] = std::string("integration failed: ") + e.what();
            } catch (const EvalError& e) {
              r.failure[slot] = std::string("evaluation failed: ") + e.what();
            }
          }
        }
      }
    }
  });

  BuildReport rep;
  rep.cells = nC;
  rep.abstract_states = t.num_states();
  rep.internal_points = nW;
  rep.external_points = nU;
  std::uint64_t pos = 0;
  std::size_t k = 0;
  for (std::size_t cell = 0; cell < nC; ++cell) {
    for (int c = 0; c <= spec.z_max; ++c) {
      for (std::size_t wi = 0; wi < nW; ++wi) {
        for (std::size_t ui = 0; ui < nU; ++ui) {
          for (Mode m : {Mode::Flow, Mode::Jump}) {
            t.offsets_[k] = pos;
            if (mode_admissible(spec, c, m)) {
              const std::size_t slot = (wi * nU + ui) * 2 + static_cast<std::size_t>(m);
              const auto& s = results[cell].succ[slot];
              ++rep.entries;
              rep.out_degree_histogram[s.size()]++;
              if (s.empty()) {
                t.blocked_[k] = 1;
                rep.blocked.push_back({cell, c, wi, ui, m, results[cell].failure[slot]});
              }
              t.cells_.insert(t.cells_.end(), s.begin(), s.end());
              pos += s.size();
              rep.transitions += s.size();
            }
            ++k;
          }
        }
      }
    }
  }
  t.offsets_[k] = pos;
  if (report) *report = std::move(rep);
  return t;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

ojson grid_json(const Grid& g) {
  ojson j;
  j["lower"] = g.bounds().lower;
  j["upper"] = g.bounds().upper;
  j["eta"] = g.eta();
  return j;
}

Grid grid_from_json(const ojson& j) {
  Box b{j.at("lower").get<std::vector<double>>(), j.at("upper").get<std::vector<double>>()};
  return build_grid(b, j.at("eta").get<double>());
}

}  // namespace

void TransitionTable::write_json(std::ostream& os) const {
  ojson j;
  j["format"] = "impsym-table";
  j["version"] = kFormatVersion;
  j["name"] = name;
  j["tau"] = tau;
  j["z_min"] = z_min;
  j["z_max"] = z_max;
  j["dims"] = {{"n", arity.n}, {"q", arity.q}, {"m", arity.m}};
  j["grids"] = {{"state", grid_json(state_grid)},
                {"internal", grid_json(internal_grid)},
                {"external", grid_json(external_grid)}};
  j["integrator"] = {{"method", "rk4"}, {"step", integrator.step},
                     {"max_norm", integrator.max_norm}};
  ojson entries = ojson::array();
  ojson blocked = ojson::array();
  const std::size_t nW = num_w(), nU = num_u();
  std::size_t k = 0;
  for (std::size_t sid = 0; sid < num_states(); ++sid) {
    const AbstractState s = state_of(sid);
    for (std::size_t wi = 0; wi < nW; ++wi)
      for (std::size_t ui = 0; ui < nU; ++ui)
        for (Mode m : {Mode::Flow, Mode::Jump}) {
          if (mode_admissible(z_min, z_max, s.counter, m)) {
            if (blocked_[k]) {
              blocked.push_back({s.cell, s.counter, wi, ui, static_cast<int>(m)});
            } else {
              ojson succ = ojson::array();
              for (std::uint64_t p = offsets_[k]; p < offsets_[k + 1]; ++p) succ.push_back(cells_[p]);
              entries.push_back({s.cell, s.counter, wi, ui, static_cast<int>(m), std::move(succ)});
            }
          }
          ++k;
        }
  }
  j["entries"] = std::move(entries);
  j["blocked"] = std::move(blocked);
  os << j.dump() << '\n';
}

std::string TransitionTable::to_json() const {
  std::ostringstream os;
  write_json(os);
  return os.str();
}

TransitionTable TransitionTable::read_json(std::istream& is, const std::string& origin) {
  ojson j;
  try {
    j = ojson::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(origin + ": not a valid JSON table: " + e.what());
  }
  try {
    if (j.value("format", std::string()) != "impsym-table")
      throw InputError(origin + ": not an impsym table (format field)");
    const int version = j.at("version").get<int>();
    if (version != kFormatVersion)
      throw InputError(origin + ": unsupported table version " + std::to_string(version) +
                       " (expected " + std::to_string(kFormatVersion) + ")");
    TransitionTable t;
    t.name = j.at("name").get<std::string>();
    t.arity = {j.at("dims").at("n").get<std::size_t>(), j.at("dims").at("q").get<std::size_t>(),
               j.at("dims").at("m").get<std::size_t>()};
    t.tau = j.at("tau").get<double>();
    t.z_min = j.at("z_min").get<int>();
    t.z_max = j.at("z_max").get<int>();
    if (t.z_min < 1 || t.z_max < t.z_min) throw InputError(origin + ": invalid dwell bounds");
    t.state_grid = grid_from_json(j.at("grids").at("state"));
    t.internal_grid = grid_from_json(j.at("grids").at("internal"));
    t.external_grid = grid_from_json(j.at("grids").at("external"));
    t.integrator.step = j.at("integrator").at("step").get<double>();
    t.integrator.max_norm = j.at("integrator").at("max_norm").get<double>();
    t.init_storage();

    std::vector<std::vector<std::uint32_t>> per_key(t.num_keys());
    std::vector<std::uint8_t> seen(t.num_keys(), 0);
    auto decode = [&](const ojson& e, std::size_t min_len) {
      if (!e.is_array() || e.size() < min_len)
        throw InputError(origin + ": malformed table entry " + e.dump());
      const AbstractState s{e[0].get<std::size_t>(), e[1].get<int>()};
      const int mi = e[4].get<int>();
      if (mi != 0 && mi != 1) throw InputError(origin + ": bad mode in entry " + e.dump());
      const Mode m = static_cast<Mode>(mi);
      if (!mode_admissible(t.z_min, t.z_max, s.counter, m))
        throw InputError(origin + ": entry with inadmissible mode " + e.dump());
      const std::size_t k = t.key(s, e[2].get<std::size_t>(), e[3].get<std::size_t>(), m);
      if (seen[k]) throw InputError(origin + ": duplicate entry " + e.dump());
      seen[k] = 1;
      return k;
    };
    for (const auto& e : j.at("entries")) {
      const std::size_t k = decode(e, 6);
      auto& v = per_key[k];
      for (const auto& c : e[5]) {
        const auto cell = c.get<std::uint64_t>();
        if (cell >= t.num_cells()) throw InputError(origin + ": successor cell out of range");
        v.push_back(static_cast<std::uint32_t>(cell));
      }
      if (!std::is_sorted(v.begin(), v.end()) ||
          std::adjacent_find(v.begin(), v.end()) != v.end())
        throw InputError(origin + ": successor list not strictly ascending");
      if (v.empty()) t.blocked_[k] = 1;
    }
    for (const auto& e : j.at("blocked")) t.blocked_[decode(e, 5)] = 1;

    std::uint64_t pos = 0;
    for (std::size_t k = 0; k < t.num_keys(); ++k) {
      t.offsets_[k] = pos;
      const AbstractState s = t.state_of(k / 2 / t.num_u() / t.num_w());
      const Mode m = static_cast<Mode>(k % 2);
      if (mode_admissible(t.z_min, t.z_max, s.counter, m) && !seen[k])
        throw InputError(origin + ": missing entry for cell " + std::to_string(s.cell) +
                         ", counter " + std::to_string(s.counter));
      t.cells_.insert(t.cells_.end(), per_key[k].begin(), per_key[k].end());
      pos += per_key[k].size();
    }
    t.offsets_[t.num_keys()] = pos;
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(origin + ": malformed table: " + e.what());
  }
}

TransitionTable TransitionTable::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open table file '" + path + "'");
  return read_json(in, path);
}

void TransitionTable::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write table file '" + path + "'");
  write_json(out);
}

}  // namespace impsym
