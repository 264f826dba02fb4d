#include "impsym/system.hpp"

#include <cmath>
#include <sstream>

#include "impsym/error.hpp"

namespace impsym {

std::size_t NetworkSpec::total_n() const {
  std::size_t s = 0;
  for (const auto& sub : subsystems) s += sub.arity.n;
  return s;
}

std::size_t NetworkSpec::total_q() const {
  std::size_t s = 0;
  for (const auto& sub : subsystems) s += sub.arity.q;
  return s;
}

std::size_t NetworkSpec::total_m() const {
  std::size_t s = 0;
  for (const auto& sub : subsystems) s += sub.arity.m;
  return s;
}

std::size_t NetworkSpec::state_offset(std::size_t i) const {
  std::size_t s = 0;
  for (std::size_t k = 0; k < i; ++k) s += subsystems[k].arity.n;
  return s;
}

std::size_t NetworkSpec::internal_offset(std::size_t i) const {
  std::size_t s = 0;
  for (std::size_t k = 0; k < i; ++k) s += subsystems[k].arity.q;
  return s;
}

std::size_t NetworkSpec::external_offset(std::size_t i) const {
  std::size_t s = 0;
  for (std::size_t k = 0; k < i; ++k) s += subsystems[k].arity.m;
  return s;
}

std::size_t NetworkSpec::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < subsystems.size(); ++i)
    if (subsystems[i].name == name) return i;
  throw InputError("unknown subsystem '" + name + "'");
}

double NetworkSpec::common_tau() const {
  if (subsystems.empty()) throw InputError("network has no subsystems");
  const double tau = subsystems.front().tau;
  for (const auto& s : subsystems)
    if (s.tau != tau)
      throw InputError("subsystems must share a common sampling parameter tau");
  return tau;
}

std::string ValidationReport::summary() const {
  std::ostringstream os;
  for (const auto& v : violations) os << v.code << ": " << v.message << '\n';
  return os.str();
}

std::vector<Box> coupling_image_hull(const NetworkSpec& spec) {
  std::vector<Box> out;
  const std::size_t nt = spec.total_n();
  std::vector<double> lo(nt), hi(nt);
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const auto& s = spec.subsystems[i];
    const std::size_t off = spec.state_offset(i);
    for (std::size_t d = 0; d < s.arity.n && d < s.state_bounds.dim(); ++d) {
      lo[off + d] = s.state_bounds.lower[d];
      hi[off + d] = s.state_bounds.upper[d];
    }
  }
  // A linear map attains its extremes over a box at vertices; per row the
  // extreme is the sum of per-coordinate extremes.
  std::size_t row = 0;
  for (const auto& s : spec.subsystems) {
    Box b;
    for (std::size_t r = 0; r < s.arity.q; ++r, ++row) {
      double mn = 0.0, mx = 0.0;
      for (std::size_t j = 0; j < nt; ++j) {
        const double a = spec.M(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(j));
        mn += std::min(a * lo[j], a * hi[j]);
        mx += std::max(a * lo[j], a * hi[j]);
      }
      b.lower.push_back(mn);
      b.upper.push_back(mx);
    }
    out.push_back(std::move(b));
  }
  return out;
}

ValidationReport validate_network(const NetworkSpec& spec, std::optional<std::vector<double>> phi) {
  ValidationReport rep;
  auto add = [&](std::string code, std::string msg) {
    rep.violations.push_back({std::move(code), std::move(msg)});
  };
  if (spec.subsystems.empty()) add("empty_network", "network has no subsystems");

  bool shapes_ok = true;
  for (const auto& s : spec.subsystems) {
    const std::string who = "subsystem '" + s.name + "'";
    if (s.arity.n == 0 || s.arity.q == 0 || s.arity.m == 0) {
      add("dimension", who + ": n, q and m must be positive");
      shapes_ok = false;
    }
    auto check_box = [&](const Box& b, std::size_t dim, const char* what) {
      if (b.lower.size() != dim || b.upper.size() != dim) {
        add("dimension", who + ": " + what + " bounds have " + std::to_string(b.lower.size()) +
                             "/" + std::to_string(b.upper.size()) + " entries, expected " +
                             std::to_string(dim));
        shapes_ok = false;
        return;
      }
      for (std::size_t d = 0; d < dim; ++d)
        if (!(b.lower[d] < b.upper[d]) || !std::isfinite(b.lower[d]) || !std::isfinite(b.upper[d]))
          add("degenerate_bounds", who + ": " + what + " interval " + std::to_string(d + 1) +
                                       " is empty or degenerate");
    };
    check_box(s.state_bounds, s.arity.n, "state");
    check_box(s.internal_bounds, s.arity.q, "internal input");
    check_box(s.external_bounds, s.arity.m, "external input");
    if (s.flow.arity() != s.arity || s.flow.dim() != s.arity.n)
      add("arity", who + ": flow arity does not match (n, q, m)");
    if (s.jump.arity() != s.arity || s.jump.dim() != s.arity.n)
      add("arity", who + ": jump arity does not match (n, q, m)");
    if (!(s.tau > 0.0)) add("tau", who + ": tau must be positive");
    if (s.z_min < 1) add("dwell", who + ": z_min must be at least 1");
    if (s.z_min > s.z_max)
      add("dwell", who + ": z_min = " + std::to_string(s.z_min) + " exceeds z_max = " +
                       std::to_string(s.z_max));
    if (!(s.phi >= 0.0)) add("phi", who + ": phi must be non-negative");
  }
  for (const auto& s : spec.subsystems)
    if (!spec.subsystems.empty() && s.tau != spec.subsystems.front().tau) {
      add("tau_mismatch", "subsystems must share a common tau ('" + s.name + "' differs from '" +
                              spec.subsystems.front().name + "')");
      break;
    }

  const auto rows = static_cast<std::size_t>(spec.M.rows());
  const auto cols = static_cast<std::size_t>(spec.M.cols());
  if (rows != spec.total_q() || cols != spec.total_n()) {
    add("coupling_shape", "M has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                              ", expected " + std::to_string(spec.total_q()) + "x" +
                              std::to_string(spec.total_n()));
    shapes_ok = false;
  }

  if (!phi && spec.phi_slack) phi = spec.phi_slack;
  if (phi) {
    if (phi->size() != spec.size()) {
      add("phi_slack", "Phi has " + std::to_string(phi->size()) + " entries, expected " +
                           std::to_string(spec.size()));
      shapes_ok = false;
    }
    for (double p : *phi)
      if (!(p >= 0.0)) add("phi_slack", "Phi entries must be non-negative");
  }
  if (shapes_ok && rep.ok()) {
    if (!phi) phi = std::vector<double>(spec.size(), 0.0);
    const auto hull = coupling_image_hull(spec);
    for (std::size_t i = 0; i < spec.size(); ++i) {
      const auto& s = spec.subsystems[i];
      for (std::size_t d = 0; d < s.arity.q; ++d) {
        const double tol = (*phi)[i] + 1e-12;
        if (hull[i].lower[d] < s.internal_bounds.lower[d] - tol ||
            hull[i].upper[d] > s.internal_bounds.upper[d] + tol)
          add("coupling_range", "subsystem '" + s.name + "': M maps the state box to [" +
                                    std::to_string(hull[i].lower[d]) + ", " +
                                    std::to_string(hull[i].upper[d]) + "] in internal input " +
                                    std::to_string(d + 1) + ", outside the internal bounds");
      }
    }
  }
  return rep;
}

std::vector<std::vector<double>> coupling_image(const NetworkSpec& spec,
                                                std::span<const double> x) {
  if (x.size() != spec.total_n() || static_cast<std::size_t>(spec.M.cols()) != x.size())
    throw DimensionError("coupling_image: state has length " + std::to_string(x.size()) +
                         ", expected " + std::to_string(spec.M.cols()));
  const Eigen::Map<const Eigen::VectorXd> xv(x.data(), static_cast<Eigen::Index>(x.size()));
  const Eigen::VectorXd w = spec.M * xv;
  std::vector<std::vector<double>> out;
  Eigen::Index row = 0;
  for (const auto& s : spec.subsystems) {
    std::vector<double> wi(s.arity.q);
    for (std::size_t d = 0; d < s.arity.q; ++d) wi[d] = w(row++);
    out.push_back(std::move(wi));
  }
  return out;
}

// ---------------------------------------------------------------------------
// System definition file

namespace {

VectorField parse_field(const KvSection& sec, const char* prefix, Arity arity) {
  std::vector<Expr> comps;
  for (std::size_t k = 1; k <= arity.n; ++k) {
    const std::string key = prefix + std::to_string(k);
    const KvEntry& e = sec.require(key);
    try {
      comps.push_back(Expr::parse(e.value));
    } catch (const ParseError& err) {
      throw InputError(sec.where(e) + ": " + key + ": syntax error at " + err.what());
    }
  }
  for (const auto& e : sec.entries) {
    if (e.key.rfind(prefix, 0) == 0 && e.key.size() > 1) {
      const std::string digits = e.key.substr(1);
      bool numeric = !digits.empty();
      for (char c : digits) numeric = numeric && c >= '0' && c <= '9';
      if (numeric && std::stoul(digits) > arity.n)
        throw InputError(sec.where(e) + ": component " + e.key + " exceeds n = " +
                         std::to_string(arity.n));
    }
  }
  try {
    return VectorField(std::move(comps), arity);
  } catch (const DimensionError& err) {
    throw InputError(sec.where() + ": [" + sec.kind + " " + sec.name + "] " + prefix +
                     ": " + err.what());
  }
}

std::size_t positive_dim(const KvSection& sec, const char* key) {
  const auto v = sec.get_int(key);
  if (v <= 0)
    throw InputError(sec.where(sec.require(key)) + ": " + key + " must be a positive integer");
  return static_cast<std::size_t>(v);
}

Box read_box(const KvSection& sec, const std::string& prefix) {
  Box b;
  b.lower = sec.get_numbers(prefix + "_lower");
  b.upper = sec.get_numbers(prefix + "_upper");
  return b;
}

}  // namespace

NetworkSpec load_network(const KvDocument& doc) {
  NetworkSpec spec;
  const auto subs = doc.all("subsystem");
  if (subs.empty()) throw InputError(doc.origin + ": no [subsystem <name>] sections");
  for (const KvSection* sec : subs) {
    SubsystemSpec s;
    s.name = sec->name.empty() ? std::to_string(spec.size() + 1) : sec->name;
    for (const auto& other : spec.subsystems)
      if (other.name == s.name)
        throw InputError(sec->where() + ": duplicate subsystem name '" + s.name + "'");
    s.line = sec->line;
    s.arity = {positive_dim(*sec, "n"), positive_dim(*sec, "q"), positive_dim(*sec, "m")};
    s.state_bounds = read_box(*sec, "state");
    s.internal_bounds = read_box(*sec, "internal");
    s.external_bounds = read_box(*sec, "external");
    s.flow = parse_field(*sec, "f", s.arity);
    s.jump = parse_field(*sec, "g", s.arity);
    s.tau = sec->get_number("tau");
    const auto zmin = sec->get_int("z_min");
    const auto zmax = sec->get_int("z_max");
    if (zmin < 0 || zmax < 0 || zmax > 1'000'000)
      throw InputError(sec->where(sec->require("z_min")) + ": dwell bounds out of range");
    s.z_min = static_cast<int>(zmin);
    s.z_max = static_cast<int>(zmax);
    s.phi = sec->get_number_opt("phi").value_or(0.0);
    spec.subsystems.push_back(std::move(s));
  }

  const KvSection* net = doc.first("network");
  const std::size_t rows = spec.total_q();
  const std::size_t cols = spec.total_n();
  if (!net) throw InputError(doc.origin + ": missing [network] section");
  const auto m = net->get_numbers("M");
  if (m.size() != rows * cols)
    throw InputError(net->where(net->require("M")) + ": M has " + std::to_string(m.size()) +
                     " entries, expected (sum q) x (sum n) = " + std::to_string(rows) + "x" +
                     std::to_string(cols));
  spec.M.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      spec.M(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m[r * cols + c];
  if (auto phi = net->get_numbers_opt("Phi")) {
    if (phi->size() != spec.size())
      throw InputError(net->where(net->require("Phi")) + ": Phi needs one entry per subsystem");
    spec.phi_slack = *phi;
  }
  return spec;
}

NetworkSpec load_network_file(const std::string& path) {
  return load_network(KvDocument::load(path));
}

}  // namespace impsym
