#include "impsym/composer.hpp"

#include <algorithm>
#include <deque>
#include <map>
#include <ostream>

#include "json.hpp"

#include "impsym/error.hpp"

namespace impsym {

ComposedSystem::ComposedSystem(std::vector<const TransitionTable*> tables, Eigen::MatrixXd M,
                               std::vector<double> Phi)
    : tables_(std::move(tables)), M_(std::move(M)), Phi_(std::move(Phi)) {
  if (tables_.empty()) throw InputError("composed system needs at least one table");
  if (Phi_.size() != tables_.size())
    throw InputError("Phi needs one entry per subsystem");
  std::size_t qt = 0;
  for (std::size_t i = 0; i < tables_.size(); ++i) {
    if (!tables_[i]) throw InputError("null table");
    if (!(Phi_[i] >= 0.0)) throw InputError("Phi entries must be nonnegative");
    total_n_ += tables_[i]->arity.n;
    qt += tables_[i]->arity.q;
  }
  if (M_.rows() != static_cast<Eigen::Index>(qt) ||
      M_.cols() != static_cast<Eigen::Index>(total_n_))
    throw InputError("M must be (sum q) x (sum n) = " + std::to_string(qt) + "x" +
                     std::to_string(total_n_));
}

std::vector<double> ComposedSystem::point(const ComposedState& s) const {
  if (s.parts.size() != size()) throw DimensionError("composed state has the wrong arity");
  std::vector<double> x;
  x.reserve(total_n_);
  for (std::size_t i = 0; i < size(); ++i) {
    const auto p = tables_[i]->state_grid.point(s.parts[i].cell);
    x.insert(x.end(), p.begin(), p.end());
  }
  return x;
}

std::vector<std::size_t> ComposedSystem::internal_choices(std::size_t i,
                                                          std::span<const double> image_i) const {
  return tables_.at(i)->internal_grid.ball(image_i, Phi_[i] + 1e-9);
}

std::vector<std::vector<std::size_t>> ComposedSystem::internal_choices(
    const ComposedState& s) const {
  const auto x = point(s);
  const Eigen::VectorXd img =
      M_ * Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  std::vector<std::vector<std::size_t>> out(size());
  std::size_t wo = 0;
  for (std::size_t i = 0; i < size(); ++i) {
    const std::size_t q = tables_[i]->arity.q;
    out[i] = internal_choices(i, std::span<const double>(img.data() + wo, q));
    wo += q;
  }
  return out;
}

namespace {

Successors union_over(const TransitionTable& t, const AbstractState& s,
                      const std::vector<std::size_t>& ws, std::size_t u, const Mode* mode) {
  Successors out;
  for (std::size_t w : ws) {
    const Successors part = mode ? t.successors(s, w, u, *mode) : t.successors(s, w, u);
    out.any_blocked = out.any_blocked || part.any_blocked || part.blocked;
    out.states.insert(out.states.end(), part.states.begin(), part.states.end());
  }
  std::sort(out.states.begin(), out.states.end());
  out.states.erase(std::unique(out.states.begin(), out.states.end()), out.states.end());
  out.blocked = out.states.empty();
  return out;
}

}  // namespace

std::vector<Successors> ComposedSystem::local_successors(
    const ComposedState& s, std::span<const std::size_t> u_idx, std::span<const Mode> modes,
    std::vector<std::vector<std::size_t>>* w_choices) const {
  if (u_idx.size() != size()) throw DimensionError("one external input index per subsystem");
  if (!modes.empty() && modes.size() != size())
    throw DimensionError("one mode per subsystem");
  const auto choices = internal_choices(s);
  std::vector<Successors> out(size());
  for (std::size_t i = 0; i < size(); ++i)
    out[i] = union_over(*tables_[i], s.parts[i], choices[i], u_idx[i],
                        modes.empty() ? nullptr : &modes[i]);
  if (w_choices) *w_choices = choices;
  return out;
}

std::vector<Successors> ComposedSystem::local_successors(
    const ComposedState& s, std::span<const std::size_t> u_idx,
    std::vector<std::vector<std::size_t>>* w_choices) const {
  return local_successors(s, u_idx, std::span<const Mode>(), w_choices);
}

std::vector<ComposedState> product(const std::vector<std::vector<AbstractState>>& sets) {
  std::vector<ComposedState> out;
  std::size_t total = 1;
  for (const auto& s : sets) total *= s.size();
  if (total == 0) return out;
  out.reserve(total);
  std::vector<std::size_t> idx(sets.size(), 0);
  for (std::size_t k = 0; k < total; ++k) {
    ComposedState c;
    c.parts.reserve(sets.size());
    for (std::size_t i = 0; i < sets.size(); ++i) c.parts.push_back(sets[i][idx[i]]);
    out.push_back(std::move(c));
    for (std::size_t i = sets.size(); i-- > 0;) {
      if (++idx[i] < sets[i].size()) break;
      idx[i] = 0;
    }
  }
  return out;
}

namespace {

ComposedStep assemble(const std::vector<Successors>& local,
                      std::vector<std::vector<std::size_t>> choices,
                      const std::vector<const TransitionTable*>& tables) {
  ComposedStep step;
  step.w_choices = std::move(choices);
  std::vector<std::vector<AbstractState>> sets;
  for (std::size_t i = 0; i < local.size(); ++i) {
    step.any_blocked = step.any_blocked || local[i].any_blocked;
    if (step.w_choices[i].empty()) {
      step.blocked = true;
      step.reason = "no internal grid point of '" + tables[i]->name + "' within Phi";
      return step;
    }
    if (local[i].blocked) {
      step.blocked = true;
      step.reason = "subsystem '" + tables[i]->name + "' has no successor";
      return step;
    }
    sets.push_back(local[i].states);
  }
  step.states = product(sets);
  return step;
}

}  // namespace

ComposedStep ComposedSystem::successors(const ComposedState& s,
                                        std::span<const std::size_t> u_idx) const {
  std::vector<std::vector<std::size_t>> choices;
  const auto local = local_successors(s, u_idx, &choices);
  return assemble(local, std::move(choices), tables_);
}

ComposedStep ComposedSystem::successors(const ComposedState& s,
                                        std::span<const std::size_t> u_idx,
                                        std::span<const Mode> modes) const {
  std::vector<std::vector<std::size_t>> choices;
  const auto local = local_successors(s, u_idx, modes, &choices);
  return assemble(local, std::move(choices), tables_);
}

std::size_t ComposedSystem::num_states() const {
  std::size_t n = 1;
  for (const auto* t : tables_) n *= t->num_states();
  return n;
}

std::size_t ComposedSystem::num_inputs() const {
  std::size_t n = 1;
  for (const auto* t : tables_) n *= t->num_u();
  return n;
}

std::size_t ComposedSystem::id_of(const ComposedState& s) const {
  std::size_t id = 0;
  for (std::size_t i = 0; i < size(); ++i)
    id = id * tables_[i]->num_states() + tables_[i]->state_id(s.parts[i]);
  return id;
}

ComposedState ComposedSystem::state_of(std::size_t id) const {
  ComposedState s;
  s.parts.resize(size());
  for (std::size_t i = size(); i-- > 0;) {
    const std::size_t ns = tables_[i]->num_states();
    s.parts[i] = tables_[i]->state_of(id % ns);
    id /= ns;
  }
  return s;
}

std::vector<std::size_t> ComposedSystem::input_of(std::size_t id) const {
  std::vector<std::size_t> u(size());
  for (std::size_t i = size(); i-- > 0;) {
    u[i] = id % tables_[i]->num_u();
    id /= tables_[i]->num_u();
  }
  return u;
}

// ---------------------------------------------------------------------------

double GlobalSimFn::operator()(std::span<const double> x, std::span<const double> xh,
                               std::span<const int> counters) const {
  if (counters.size() != locals.size()) throw DimensionError("one counter per subsystem");
  double s = 0.0;
  std::size_t off = 0;
  for (std::size_t i = 0; i < locals.size(); ++i) {
    const std::size_t n = dims[i];
    if (mu[i] != 0.0) s += mu[i] * locals[i](x.subspan(off, n), xh.subspan(off, n), counters[i]);
    off += n;
  }
  return s;
}

double GlobalSimFn::operator()(std::span<const double> x, std::span<const double> xh,
                               std::span<const int> c_concrete,
                               std::span<const int> c_abstract) const {
  if (c_concrete.size() != c_abstract.size() ||
      !std::equal(c_concrete.begin(), c_concrete.end(), c_abstract.begin()))
    throw InputError("concrete and abstract counters are not aligned");
  return (*this)(x, xh, c_concrete);
}

GlobalSimFn compose_simfn(std::vector<double> mu, std::vector<LocalSimFn> locals) {
  if (mu.size() != locals.size())
    throw InputError("compose_simfn: " + std::to_string(mu.size()) + " weights for " +
                     std::to_string(locals.size()) + " local functions");
  for (double m : mu)
    if (!(m >= 0.0)) throw InputError("compose_simfn: weights must be nonnegative");
  GlobalSimFn g;
  g.mu = std::move(mu);
  g.locals = std::move(locals);
  for (const auto& l : g.locals) g.dims.push_back(l.cert ? l.cert->arity.n : 0);
  return g;
}

double deviation_bound(const KInfFn& alpha, const KInfFn& rho_u, double eps, double r) {
  const double v = std::max(rho_u.is_zero() ? 0.0 : rho_u(r), eps);
  return alpha.inverse(v);
}

void write_exploration(std::ostream& os, const ComposedSystem& sys,
                       const std::vector<ComposedState>& initial, std::size_t limit) {
  using ojson = nlohmann::ordered_json;
  std::map<ComposedState, std::size_t> index;
  std::deque<ComposedState> queue;
  std::vector<ComposedState> order;
  auto visit = [&](const ComposedState& s) {
    if (index.count(s) || index.size() >= limit) return index.count(s) > 0;
    index.emplace(s, order.size());
    order.push_back(s);
    queue.push_back(s);
    return true;
  };
  for (const auto& s : initial) visit(s);
  ojson states = ojson::array();
  bool truncated = false;
  while (!queue.empty()) {
    const ComposedState s = queue.front();
    queue.pop_front();
    ojson node;
    ojson parts = ojson::array();
    for (const auto& p : s.parts) parts.push_back({p.cell, p.counter});
    node["id"] = index.at(s);
    node["state"] = parts;
    ojson edges = ojson::array();
    for (std::size_t in = 0; in < sys.num_inputs(); ++in) {
      const auto u = sys.input_of(in);
      const auto step = sys.successors(s, u);
      ojson e;
      e["u"] = u;
      e["w_choices"] = step.w_choices;
      if (step.blocked) {
        e["blocked"] = step.reason;
      } else {
        ojson succ = ojson::array();
        for (const auto& t : step.states) {
          if (!visit(t)) {
            truncated = true;
            continue;
          }
          succ.push_back(index.at(t));
        }
        e["successors"] = succ;
      }
      edges.push_back(std::move(e));
    }
    node["edges"] = std::move(edges);
    states.push_back(std::move(node));
  }
  ojson j;
  j["format"] = "impsym-exploration";
  j["version"] = 1;
  j["Phi"] = sys.Phi();
  j["truncated"] = truncated;
  j["states"] = std::move(states);
  os << j.dump() << '\n';
}

}  // namespace impsym
