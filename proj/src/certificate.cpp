#include "impsym/certificate.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>

#include "impsym/error.hpp"
#include "impsym/parallel.hpp"
#include "impsym/sampling.hpp"

namespace impsym {

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

double norm_inf_diff(std::span<const double> a, std::span<const double> b) {
  double r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) r = std::max(r, std::abs(a[i] - b[i]));
  return r;
}

double sq_diff(std::span<const double> a, std::span<const double> b) {
  double r = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) r += (a[i] - b[i]) * (a[i] - b[i]);
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// KInfFn

KInfFn KInfFn::power(double a, double p) { return from_terms({{a, p}}); }

KInfFn KInfFn::from_terms(std::vector<Term> terms) {
  for (const auto& t : terms) {
    if (!(t.a > 0.0) || !std::isfinite(t.a))
      throw InputError("comparison function coefficient must be positive, got " + fmt(t.a));
    if (!(t.p >= 1.0) || !std::isfinite(t.p))
      throw InputError("comparison function exponent must be >= 1, got " + fmt(t.p));
  }
  KInfFn f;
  f.terms_ = std::move(terms);
  return f;
}

KInfFn KInfFn::parse(std::string_view text) {
  const std::string t = trim(text);
  if (t == "zero" || t == "0") return zero();
  std::vector<Term> terms;
  std::size_t pos = 0;
  while (pos <= t.size()) {
    const auto comma = t.find(',', pos);
    const std::string part =
        trim(std::string_view(t).substr(pos, comma == std::string::npos ? std::string::npos
                                                                           : comma - pos));
    const auto colon = part.find(':');
    if (part.empty() || colon == std::string::npos)
      throw InputError("comparison function '" + t +
                       "': expected 'zero' or terms 'coef:exp' separated by commas");
    terms.push_back({parse_number(trim(std::string_view(part).substr(0, colon))),
                     parse_number(trim(std::string_view(part).substr(colon + 1)))});
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return from_terms(std::move(terms));
}

std::optional<KInfFn::Term> KInfFn::single_term() const {
  if (terms_.size() != 1) return std::nullopt;
  return terms_[0];
}

double KInfFn::operator()(double r) const {
  double v = 0.0;
  for (const auto& t : terms_) v += t.a * std::pow(r, t.p);
  return v;
}

double KInfFn::inverse(double v) const {
  if (is_zero()) throw Error("the zero function has no inverse");
  if (!(v > 0.0)) return 0.0;
  if (terms_.size() == 1) return std::pow(v / terms_[0].a, 1.0 / terms_[0].p);
  double lo = 0.0, hi = 1.0;
  while ((*this)(hi) < v) hi *= 2.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if ((*this)(mid) < v)
      lo = mid;
    else
      hi = mid;
  }
  return hi;
}

std::string KInfFn::to_string() const {
  if (is_zero()) return "zero";
  std::string s;
  for (const auto& t : terms_) {
    if (!s.empty()) s += ", ";
    s += fmt(t.a) + ":" + fmt(t.p);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Certificate

double Certificate::eval_V(std::span<const double> x, std::span<const double> xh) const {
  Bindings b;
  b.x = x;
  b.xh = xh;
  return V.eval(b);
}

void Certificate::validate() const {
  const auto dim = static_cast<Eigen::Index>(arity.q + arity.n);
  const std::string who = origin.empty() ? "certificate '" + subsystem + "'" : origin;
  for (const auto* D : {&D_c, &D_d}) {
    const char* nm = D == &D_c ? "D_c" : "D_d";
    if (D->rows() != dim || D->cols() != dim)
      throw InputError(who + ": " + nm + " must be " + std::to_string(dim) + "x" +
                       std::to_string(dim));
    if ((*D - D->transpose()).cwiseAbs().maxCoeff() > 1e-12)
      throw InputError(who + ": " + nm + " is not symmetric");
  }
  if (!(kappa_d >= 0.0)) throw InputError(who + ": kappa_d must be nonnegative");
  if (!std::isfinite(kappa_c)) throw InputError(who + ": kappa_c must be finite");
  if (alpha_lower.is_zero() || alpha_upper.is_zero())
    throw InputError(who + ": alpha_lower and alpha_upper must be nonzero");
  for (const auto& v : V.variables())
    if (v.kind != VarKind::X && v.kind != VarKind::XH)
      throw InputError(who + ": V may only reference x<k> and xh<k>, found " + v.name());
  if (V.max_index(VarKind::X) > arity.n || V.max_index(VarKind::XH) > arity.n)
    throw InputError(who + ": V references a state index beyond n = " +
                     std::to_string(arity.n));
}

double supply(const Eigen::MatrixXd& D, std::span<const double> dw, std::span<const double> dx) {
  const std::size_t q = dw.size();
  const std::size_t dim = q + dx.size();
  double s = 0.0;
  auto z = [&](std::size_t i) { return i < q ? dw[i] : dx[i - q]; };
  for (std::size_t i = 0; i < dim; ++i) {
    const double zi = z(i);
    if (zi == 0.0) continue;
    for (std::size_t j = 0; j < dim; ++j)
      s += zi * D(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * z(j);
  }
  return s;
}

namespace {

Eigen::MatrixXd read_square(const KvSection& sec, const char* key, std::size_t dim) {
  const auto v = sec.get_numbers(key);
  if (v.size() != dim * dim)
    throw InputError(sec.where(sec.require(key)) + ": " + key + " has " +
                     std::to_string(v.size()) + " entries, expected " + std::to_string(dim) +
                     "x" + std::to_string(dim));
  Eigen::MatrixXd D(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < dim; ++r)
    for (std::size_t c = 0; c < dim; ++c)
      D(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v[r * dim + c];
  return D;
}

KInfFn read_kinf(const KvSection& sec, const char* key) {
  const auto& e = sec.require(key);
  try {
    return KInfFn::parse(e.value);
  } catch (const InputError& err) {
    throw InputError(sec.where(e) + ": " + key + ": " + err.what());
  }
}

}  // namespace

std::vector<Certificate> load_certificates(const KvDocument& doc, const NetworkSpec& spec) {
  std::vector<Certificate> out(spec.size());
  std::vector<bool> have(spec.size(), false);
  for (const KvSection* sec : doc.all("certificate")) {
    std::size_t i = 0;
    try {
      i = spec.index_of(sec->name);
    } catch (const InputError&) {
      throw InputError(sec->where() + ": certificate for unknown subsystem '" + sec->name + "'");
    }
    if (have[i]) throw InputError(sec->where() + ": duplicate certificate for '" + sec->name + "'");
    have[i] = true;
    const auto& s = spec.subsystems[i];
    Certificate c;
    c.subsystem = s.name;
    c.arity = s.arity;
    c.origin = sec->where();
    const auto& ve = sec->require("V");
    try {
      c.V = Expr::parse(ve.value);
    } catch (const ParseError& e) {
      throw InputError(sec->where(ve) + ": V: syntax error at offset " +
                       std::to_string(e.offset()) + ": " + e.detail());
    } catch (const InputError& e) {
      throw InputError(sec->where(ve) + ": V: " + e.what());
    }
    c.alpha_lower = read_kinf(*sec, "alpha_lower");
    c.alpha_upper = read_kinf(*sec, "alpha_upper");
    c.kappa_c = sec->get_number("kappa_c");
    c.kappa_d = sec->get_number("kappa_d");
    const std::size_t dim = s.arity.q + s.arity.n;
    c.D_c = read_square(*sec, "D_c", dim);
    c.D_d = read_square(*sec, "D_d", dim);
    c.rho_uc = read_kinf(*sec, "rho_uc");
    c.rho_ud = read_kinf(*sec, "rho_ud");
    c.gamma_hat = read_kinf(*sec, "gamma_hat");
    c.epsilon = sec->get_number_opt("epsilon").value_or(0.5);
    c.delta = sec->get_number_opt("delta").value_or(0.0);
    c.validate();
    out[i] = std::move(c);
  }
  for (std::size_t i = 0; i < spec.size(); ++i)
    if (!have[i])
      throw InputError(doc.origin + ": no [certificate " + spec.subsystems[i].name + "] section");
  return out;
}

std::vector<Certificate> load_certificates_file(const std::string& path,
                                                const NetworkSpec& spec) {
  return load_certificates(KvDocument::load(path), spec);
}

// ---------------------------------------------------------------------------
// Pointwise margins

std::pair<double, double> sandwich_margins(const Certificate& cert, std::span<const double> x,
                                           std::span<const double> xh) {
  const double r = norm_inf_diff(x, xh);
  const double v = cert.eval_V(x, xh);
  return {v - cert.alpha_lower(r), cert.alpha_upper(r) - v};
}

void grad_V(const Certificate& cert, std::span<const double> x, std::span<const double> xh,
            std::span<double> gx, std::span<double> gxh) {
  constexpr double h = 1e-6;
  std::vector<double> xp(x.begin(), x.end()), xhp(xh.begin(), xh.end());
  for (std::size_t k = 0; k < x.size(); ++k) {
    xp[k] = x[k] + h;
    const double vp = cert.eval_V(xp, xh);
    xp[k] = x[k] - h;
    const double vm = cert.eval_V(xp, xh);
    xp[k] = x[k];
    gx[k] = (vp - vm) / (2.0 * h);
  }
  for (std::size_t k = 0; k < xh.size(); ++k) {
    xhp[k] = xh[k] + h;
    const double vp = cert.eval_V(x, xhp);
    xhp[k] = xh[k] - h;
    const double vm = cert.eval_V(x, xhp);
    xhp[k] = xh[k];
    gxh[k] = (vp - vm) / (2.0 * h);
  }
}

namespace {

std::vector<double> diff(std::span<const double> a, std::span<const double> b) {
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return d;
}

}  // namespace

double flow_dissipativity_margin(const Certificate& cert, const SubsystemSpec& spec,
                                 std::span<const double> x, std::span<const double> xh,
                                 std::span<const double> w, std::span<const double> wh,
                                 std::span<const double> u, std::span<const double> uh) {
  const std::size_t n = spec.arity.n;
  std::vector<double> gx(n), gxh(n), fx(n), fxh(n);
  grad_V(cert, x, xh, gx, gxh);
  spec.flow.eval_into(x, w, u, fx);
  spec.flow.eval_into(xh, wh, uh, fxh);
  double lhs = 0.0;
  for (std::size_t k = 0; k < n; ++k) lhs += gx[k] * fx[k] + gxh[k] * fxh[k];
  const double rhs = -cert.kappa_c * cert.eval_V(x, xh) +
                     supply(cert.D_c, diff(w, wh), diff(x, xh)) +
                     cert.rho_uc(norm_inf_diff(u, uh));
  return rhs - lhs;
}

double jump_dissipativity_margin(const Certificate& cert, const SubsystemSpec& spec,
                                 std::span<const double> x, std::span<const double> xh,
                                 std::span<const double> w, std::span<const double> wh,
                                 std::span<const double> u, std::span<const double> uh) {
  const auto gx = spec.jump.eval(x, w, u);
  const auto gxh = spec.jump.eval(xh, wh, uh);
  const double lhs = cert.eval_V(gx, gxh);
  const double rhs = cert.kappa_d * cert.eval_V(x, xh) +
                     supply(cert.D_d, diff(w, wh), diff(x, xh)) +
                     cert.rho_ud(norm_inf_diff(u, uh));
  return rhs - lhs;
}

double triangle_margin(const Certificate& cert, std::span<const double> x,
                       std::span<const double> y, std::span<const double> z) {
  return cert.eval_V(x, z) + cert.gamma_hat(norm_inf_diff(y, z)) - cert.eval_V(x, y);
}

// ---------------------------------------------------------------------------
// Sampling engine

namespace {

struct Part {
  std::string name;
  const Box* box;
};

struct Eval {
  double margin;
  double scale;  // squared size of the stacked differences
};

using Objective = std::function<std::optional<Eval>(const std::vector<std::span<const double>>&)>;

struct Sample {
  double normalized = std::numeric_limits<double>::infinity();
  double margin = 0.0;
  std::size_t index = 0;
  std::vector<double> unit;  // coordinates in [0,1]^D
};

class Sampler {
public:
  Sampler(std::vector<Part> parts, Objective obj) : parts_(std::move(parts)), obj_(std::move(obj)) {
    for (const auto& p : parts_) dim_ += p.box->dim();
  }

  std::size_t dim() const { return dim_; }

  // Maps unit coordinates to the concatenated boxes and evaluates.
  std::optional<Eval> eval_unit(std::span<const double> unit, std::vector<double>& buf) const {
    buf.resize(dim_);
    std::vector<std::span<const double>> views;
    std::size_t off = 0;
    for (const auto& p : parts_) {
      for (std::size_t d = 0; d < p.box->dim(); ++d)
        buf[off + d] = p.box->lower[d] + unit[off + d] * (p.box->upper[d] - p.box->lower[d]);
      views.emplace_back(buf.data() + off, p.box->dim());
      off += p.box->dim();
    }
    try {
      return obj_(views);
    } catch (const EvalError&) {
      return std::nullopt;
    }
  }

  static double normalize(const Eval& e) { return e.margin / std::max(e.scale, 1e-6); }

  void refine(Sample& s) const {
    std::vector<double> buf;
    std::vector<double> u = s.unit;
    double best = s.normalized;
    double step = 0.1;
    int sweeps = 0;
    while (step > 1e-10 && sweeps < 2000) {
      ++sweeps;
      bool improved = false;
      for (std::size_t d = 0; d < dim_; ++d) {
        for (double sign : {1.0, -1.0}) {
          const double old = u[d];
          u[d] = std::clamp(old + sign * step, 0.0, 1.0);
          if (u[d] == old) continue;
          const auto e = eval_unit(u, buf);
          if (e && normalize(*e) < best) {
            best = normalize(*e);
            s.margin = e->margin;
            improved = true;
          } else {
            u[d] = old;
          }
        }
      }
      if (!improved) step *= 0.5;
    }
    s.normalized = best;
    s.unit = u;
  }

  CheckReport run(const std::string& name, const SampleOptions& opt) const {
    const std::size_t total = opt.samples;
    const std::size_t jobs = std::max<std::size_t>(1, opt.jobs);
    const std::size_t keep = std::max<std::size_t>(1, opt.refine);
    std::vector<std::vector<Sample>> worst(jobs);
    std::vector<std::size_t> skipped(jobs, 0);
    parallel_chunks(total, jobs, [&](std::size_t chunk, std::size_t begin, std::size_t end) {
      std::vector<double> unit(dim_), buf;
      auto& w = worst[chunk];
      for (std::size_t i = begin; i < end; ++i) {
        halton_point(opt.offset + i, unit);
        const auto e = eval_unit(unit, buf);
        if (!e) {
          ++skipped[chunk];
          continue;
        }
        Sample s{normalize(*e), e->margin, i, unit};
        w.push_back(std::move(s));
        std::sort(w.begin(), w.end(), [](const Sample& a, const Sample& b) {
          return a.normalized < b.normalized ||
                 (a.normalized == b.normalized && a.index < b.index);
        });
        if (w.size() > keep) w.pop_back();
      }
    });
    std::vector<Sample> all;
    std::size_t skip = 0;
    for (std::size_t j = 0; j < jobs; ++j) {
      all.insert(all.end(), worst[j].begin(), worst[j].end());
      skip += skipped[j];
    }
    std::sort(all.begin(), all.end(), [](const Sample& a, const Sample& b) {
      return a.normalized < b.normalized || (a.normalized == b.normalized && a.index < b.index);
    });
    if (all.size() > keep) all.resize(keep);
    if (opt.refine > 0)
      for (auto& s : all) refine(s);

    CheckReport rep;
    rep.name = name;
    rep.samples = total;
    rep.skipped = skip;
    if (all.empty()) {
      rep.pass = total == 0;
      return rep;
    }
    const Sample* w = &all[0];
    for (const auto& s : all)
      if (s.normalized < w->normalized) w = &s;
    rep.worst_normalized = w->normalized;
    rep.worst_margin = w->margin;
    rep.pass = w->normalized >= -opt.tol;
    std::vector<double> buf(dim_);
    std::size_t off = 0;
    for (const auto& p : parts_) {
      NamedVector nv{p.name, {}};
      for (std::size_t d = 0; d < p.box->dim(); ++d)
        nv.value.push_back(p.box->lower[d] +
                           w->unit[off + d] * (p.box->upper[d] - p.box->lower[d]));
      off += p.box->dim();
      rep.witness.push_back(std::move(nv));
    }
    return rep;
  }

private:
  std::vector<Part> parts_;
  Objective obj_;
  std::size_t dim_ = 0;
};

}  // namespace

CheckReport check_sandwich(const Certificate& cert, const SubsystemSpec& spec,
                           const SampleOptions& opt) {
  const Box* X = &spec.state_bounds;
  Sampler s({{"x", X}, {"xh", X}}, [&](const std::vector<std::span<const double>>& v) {
    const auto [lo, hi] = sandwich_margins(cert, v[0], v[1]);
    return std::optional<Eval>({std::min(lo, hi), sq_diff(v[0], v[1])});
  });
  return s.run("sandwich", opt);
}

CheckReport check_flow_dissipativity(const Certificate& cert, const SubsystemSpec& spec,
                                     const SampleOptions& opt) {
  const Box* X = &spec.state_bounds;
  const Box* W = &spec.internal_bounds;
  const Box* U = &spec.external_bounds;
  Sampler s({{"x", X}, {"xh", X}, {"w", W}, {"wh", W}, {"u", U}, {"uh", U}},
            [&](const std::vector<std::span<const double>>& v) {
              const double m = flow_dissipativity_margin(cert, spec, v[0], v[1], v[2], v[3],
                                                         v[4], v[5]);
              if (!std::isfinite(m)) return std::optional<Eval>();
              return std::optional<Eval>(
                  {m, sq_diff(v[0], v[1]) + sq_diff(v[2], v[3]) + sq_diff(v[4], v[5])});
            });
  auto rep = s.run("flow_dissipativity", opt);
  rep.extra.push_back({"fd_step", 1e-6});
  return rep;
}

CheckReport check_jump_dissipativity(const Certificate& cert, const SubsystemSpec& spec,
                                     const SampleOptions& opt) {
  const Box* X = &spec.state_bounds;
  const Box* W = &spec.internal_bounds;
  const Box* U = &spec.external_bounds;
  Sampler s({{"x", X}, {"xh", X}, {"w", W}, {"wh", W}, {"u", U}, {"uh", U}},
            [&](const std::vector<std::span<const double>>& v) {
              const double m = jump_dissipativity_margin(cert, spec, v[0], v[1], v[2], v[3],
                                                         v[4], v[5]);
              if (!std::isfinite(m)) return std::optional<Eval>();
              return std::optional<Eval>(
                  {m, sq_diff(v[0], v[1]) + sq_diff(v[2], v[3]) + sq_diff(v[4], v[5])});
            });
  return s.run("jump_dissipativity", opt);
}

CheckReport check_triangle(const Certificate& cert, const Box& box, const SampleOptions& opt) {
  Sampler s({{"x", &box}, {"y", &box}, {"z", &box}},
            [&](const std::vector<std::span<const double>>& v) {
              return std::optional<Eval>(
                  {triangle_margin(cert, v[0], v[1], v[2]), sq_diff(v[1], v[2])});
            });
  return s.run("triangle", opt);
}

// ---------------------------------------------------------------------------
// Quadratic oracle

double max_eigenvalue(const Eigen::MatrixXd& S) {
  if (S.rows() == 0) return -std::numeric_limits<double>::infinity();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw Error("eigenvalue computation did not converge");
  return es.eigenvalues().maxCoeff();
}

OracleVerdict quadratic_oracle(const Eigen::MatrixXd& P, const Eigen::MatrixXd& A,
                               const Eigen::MatrixXd& B_w, const Eigen::MatrixXd& B_u,
                               double kappa_c, const Eigen::MatrixXd& D_c, const KInfFn& rho_uc,
                               double tol) {
  const Eigen::Index n = P.rows();
  if (P.cols() != n || A.rows() != n || A.cols() != n)
    throw DimensionError("quadratic_oracle: P and A must be n x n");
  if ((P - P.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw InputError("quadratic_oracle: P is not symmetric");
  const Eigen::Index q = B_w.size() == 0 ? 0 : B_w.cols();
  if (q > 0 && B_w.rows() != n) throw DimensionError("quadratic_oracle: B_w must have n rows");
  if (D_c.rows() != q + n || D_c.cols() != q + n)
    throw DimensionError("quadratic_oracle: D_c must be (q + n) square");
  const bool with_u = B_u.size() > 0 && B_u.cwiseAbs().maxCoeff() > 0.0;
  Eigen::Index mu = 0;
  double a_u = 0.0;
  if (with_u) {
    if (B_u.rows() != n || B_u.cols() != 1)
      throw InputError("quadratic_oracle: a nonzero B_u must be n x 1");
    mu = 1;
    if (!rho_uc.is_zero()) {
      const auto t = rho_uc.single_term();
      if (!t || t->p != 2.0)
        throw InputError("quadratic_oracle: a nonzero B_u needs rho_uc = a r^2");
      a_u = t->a;
    }
  }
  const Eigen::Index dim = q + n + mu;
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(dim, dim);
  L.topLeftCorner(q + n, q + n) = -D_c;
  const Eigen::MatrixXd PA = P * A;
  L.block(q, q, n, n) += PA + PA.transpose() + kappa_c * P;
  if (q > 0) {
    const Eigen::MatrixXd PB = P * B_w;
    L.block(q, 0, n, q) += PB;
    L.block(0, q, q, n) += PB.transpose();
  }
  if (with_u) {
    const Eigen::MatrixXd PB = P * B_u;
    L.block(q, q + n, n, 1) += PB;
    L.block(q + n, q, 1, n) += PB.transpose();
    L(q + n, q + n) = -a_u;
  }
  OracleVerdict v;
  v.L = 0.5 * (L + L.transpose());
  v.max_eigenvalue = max_eigenvalue(v.L);
  v.holds = v.max_eigenvalue <= tol;
  return v;
}

// ---------------------------------------------------------------------------
// Dwell time, local simulation function

DwellReport check_dwell_time(double kappa_c, double kappa_d, double tau, int z_min, int z_max) {
  if (!(kappa_d > 0.0))
    throw InputError("dwell-time condition needs kappa_d > 0, got " + fmt(kappa_d));
  DwellReport r;
  r.value_at_zmin = std::log(kappa_d) - kappa_c * tau * z_min;
  r.value_at_zmax = std::log(kappa_d) - kappa_c * tau * z_max;
  r.pass = r.value_at_zmin < 0.0 && r.value_at_zmax < 0.0;
  return r;
}

const char* case_name(SimFnCase c) {
  switch (c) {
    case SimFnCase::A: return "A";
    case SimFnCase::B: return "B";
    case SimFnCase::C: return "C";
  }
  return "?";
}

std::optional<SimFnCase> classify_case(double kappa_c, double kappa_d) {
  if (kappa_d < 1.0 && kappa_c > 0.0) return SimFnCase::A;
  if (kappa_d >= 1.0 && kappa_c > 0.0) return SimFnCase::B;
  if (kappa_d < 1.0 && kappa_c <= 0.0) return SimFnCase::C;
  return std::nullopt;
}

double LocalSimFn::multiplier(int c) const {
  switch (kind) {
    case SimFnCase::A: return 1.0;
    case SimFnCase::B: return std::exp(cert->kappa_c * tau * epsilon * c);
    case SimFnCase::C: return std::pow(cert->kappa_d, static_cast<double>(c) / delta);
  }
  return 1.0;
}

double LocalSimFn::operator()(std::span<const double> x, std::span<const double> xh,
                              int c) const {
  return cert->eval_V(x, xh) * multiplier(c);
}

double LocalSimFn::min_multiplier() const {
  double m = multiplier(0);
  for (int c = 1; c <= z_max; ++c) m = std::min(m, multiplier(c));
  return m;
}

LocalSimFn build_local_simfn(const Certificate& cert, double epsilon, double delta, int z_max,
                             double tau) {
  const auto kind = classify_case(cert.kappa_c, cert.kappa_d);
  if (!kind)
    throw InputError("no local simulation function for kappa_d = " + fmt(cert.kappa_d) +
                     " >= 1 with kappa_c = " + fmt(cert.kappa_c) +
                     " <= 0: the dwell-time condition cannot hold");
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw InputError("epsilon must lie in (0, 1), got " + fmt(epsilon));
  if (!(delta > z_max))
    throw InputError("delta must exceed z_max = " + std::to_string(z_max) + ", got " +
                     fmt(delta));
  if (*kind == SimFnCase::C && !(cert.kappa_d > 0.0))
    throw InputError("case C needs kappa_d > 0");
  LocalSimFn f;
  f.cert = &cert;
  f.kind = *kind;
  f.epsilon = epsilon;
  f.delta = delta;
  f.tau = tau;
  f.z_max = z_max;
  return f;
}

// ---------------------------------------------------------------------------
// Compositional conditions

Eigen::MatrixXd assemble_block_matrix(const std::vector<SupplyBlock>& blocks,
                                      const std::vector<double>& mu) {
  if (mu.size() != blocks.size())
    throw DimensionError("one weight mu_i per subsystem is required");
  std::size_t qt = 0, nt = 0;
  for (const auto& b : blocks) {
    if (b.D.rows() != static_cast<Eigen::Index>(b.q + b.n) || b.D.cols() != b.D.rows())
      throw DimensionError("supply matrix must be (q + n) square");
    qt += b.q;
    nt += b.n;
  }
  for (double m : mu)
    if (!(m >= 0.0)) throw InputError("weights mu_i must be nonnegative");
  const auto Q = static_cast<Eigen::Index>(qt);
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(Q + static_cast<Eigen::Index>(nt),
                                            Q + static_cast<Eigen::Index>(nt));
  Eigen::Index qo = 0, no = 0;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto q = static_cast<Eigen::Index>(blocks[i].q);
    const auto n = static_cast<Eigen::Index>(blocks[i].n);
    const auto& Di = blocks[i].D;
    D.block(qo, qo, q, q) = mu[i] * Di.topLeftCorner(q, q);
    D.block(qo, Q + no, q, n) = mu[i] * Di.topRightCorner(q, n);
    D.block(Q + no, qo, n, q) = mu[i] * Di.bottomLeftCorner(n, q);
    D.block(Q + no, Q + no, n, n) = mu[i] * Di.bottomRightCorner(n, n);
    qo += q;
    no += n;
  }
  return D;
}

CompositionReport check_compositionality(const Eigen::MatrixXd& M,
                                         const std::vector<SupplyBlock>& blocks,
                                         const std::vector<double>& mu, double tol) {
  const Eigen::MatrixXd D = assemble_block_matrix(blocks, mu);
  Eigen::Index qt = 0, nt = 0;
  bool all_symmetric = true;
  for (const auto& b : blocks) {
    qt += static_cast<Eigen::Index>(b.q);
    nt += static_cast<Eigen::Index>(b.n);
    if (b.D.size() > 0 && (b.D - b.D.transpose()).cwiseAbs().maxCoeff() > 1e-12)
      all_symmetric = false;
  }
  if (M.rows() != qt || M.cols() != nt)
    throw DimensionError("M must be (sum q) x (sum n) = " + std::to_string(qt) + "x" +
                         std::to_string(nt));
  Eigen::MatrixXd T(qt + nt, nt);
  T << M, Eigen::MatrixXd::Identity(nt, nt);
  CompositionReport r;
  r.Q = T.transpose() * D * T;
  if (all_symmetric && nt > 0) {
    const double asym = (r.Q - r.Q.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-12 * (1.0 + r.Q.cwiseAbs().maxCoeff()))
      throw Error("assembled Q is not symmetric (deviation " + fmt(asym) + ")");
  }
  r.Q = 0.5 * (r.Q + r.Q.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(r.Q, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw Error("eigenvalue computation did not converge");
  r.eigenvalues = es.eigenvalues();
  r.max_eigenvalue = nt > 0 ? r.eigenvalues.maxCoeff() : 0.0;
  r.pass = r.max_eigenvalue <= tol;
  return r;
}

InclusionReport check_input_inclusion(const Eigen::MatrixXd& M,
                                      const std::vector<Grid>& state_grids,
                                      const std::vector<Grid>& internal_grids, std::size_t cap,
                                      double tol) {
  if (state_grids.size() != internal_grids.size())
    throw DimensionError("one state and one internal grid per subsystem");
  const std::size_t N = state_grids.size();
  std::size_t nt = 0, qt = 0;
  double card = 1.0;
  for (std::size_t i = 0; i < N; ++i) {
    nt += state_grids[i].dim();
    qt += internal_grids[i].dim();
    card *= static_cast<double>(state_grids[i].size());
  }
  if (M.rows() != static_cast<Eigen::Index>(qt) || M.cols() != static_cast<Eigen::Index>(nt))
    throw DimensionError("M must be (sum q) x (sum n)");
  if (card > static_cast<double>(cap))
    throw InputError("input inclusion check would enumerate " + fmt(card) +
                     " combined grid points (cap " + std::to_string(cap) +
                     "); coarsen the state grids for this check or raise inclusion_cap");

  std::vector<std::vector<std::vector<double>>> points(N);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t id = 0; id < state_grids[i].size(); ++id)
      points[i].push_back(state_grids[i].point(id));

  InclusionReport rep;
  std::vector<std::size_t> idx(N, 0);
  Eigen::VectorXd x(static_cast<Eigen::Index>(nt));
  const auto total = static_cast<std::size_t>(card);
  for (std::size_t count = 0; count < total; ++count) {
    Eigen::Index o = 0;
    for (std::size_t i = 0; i < N; ++i)
      for (double v : points[i][idx[i]]) x(o++) = v;
    const Eigen::VectorXd img = M * x;
    Eigen::Index wo = 0;
    for (std::size_t i = 0; i < N; ++i) {
      const Grid& g = internal_grids[i];
      std::string reason;
      for (std::size_t d = 0; d < g.dim() && reason.empty(); ++d) {
        const double v = img(wo + static_cast<Eigen::Index>(d));
        const double k = std::round(v / g.eta());
        const double p = k * g.eta();
        if (std::abs(p - v) > tol) {
          reason = "component " + std::to_string(d + 1) + " = " + fmt(v) +
                   " is not on the internal lattice (eta = " + fmt(g.eta()) + ")";
        } else {
          const double snap = kGridSnap * g.eta();
          if (p < g.bounds().lower[d] - snap || p > g.bounds().upper[d] + snap)
            reason = "component " + std::to_string(d + 1) + " = " + fmt(v) +
                     " lies outside the internal bounds";
        }
      }
      if (!reason.empty()) {
        ++rep.violation_count;
        if (rep.violations.size() < 16) {
          InclusionViolation v;
          v.state.assign(x.data(), x.data() + x.size());
          v.image.assign(img.data(), img.data() + img.size());
          v.subsystem = i;
          v.reason = reason;
          rep.violations.push_back(std::move(v));
        }
      }
      wo += static_cast<Eigen::Index>(g.dim());
    }
    ++rep.checked;
    for (std::size_t i = N; i-- > 0;) {
      if (++idx[i] < points[i].size()) break;
      idx[i] = 0;
    }
  }
  rep.pass = rep.violation_count == 0;
  return rep;
}

std::vector<std::vector<double>> mu_grid(const std::vector<double>& values, std::size_t N) {
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<std::vector<double>> out;
  if (sorted.empty() || N == 0) return out;
  std::vector<std::size_t> idx(N, 0);
  while (true) {
    std::vector<double> mu(N);
    bool nonzero = false;
    for (std::size_t i = 0; i < N; ++i) {
      mu[i] = sorted[idx[i]];
      nonzero = nonzero || mu[i] != 0.0;
    }
    if (nonzero) out.push_back(std::move(mu));
    std::size_t i = N;
    while (i-- > 0) {
      if (++idx[i] < sorted.size()) break;
      idx[i] = 0;
    }
    if (i == static_cast<std::size_t>(-1)) break;
  }
  return out;
}

MuSearchResult search_mu(const Eigen::MatrixXd& M,
                         const std::vector<std::vector<SupplyBlock>>& block_sets,
                         const std::vector<std::vector<double>>& candidates, double tol) {
  MuSearchResult r;
  bool have = false;
  for (const auto& mu : candidates) {
    double sum = 0.0;
    for (double m : mu) {
      if (!(m >= 0.0)) throw InputError("mu candidates must be nonnegative");
      sum += m;
    }
    if (sum == 0.0) continue;
    ++r.candidates;
    std::vector<double> nmu(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i) nmu[i] = mu[i] / sum;
    double score = -std::numeric_limits<double>::infinity();
    for (const auto& blocks : block_sets)
      score = std::max(score, check_compositionality(M, blocks, nmu, tol).max_eigenvalue);
    const bool better = !have || score < r.best_score - 1e-12 ||
                        (std::abs(score - r.best_score) <= 1e-12 && mu < r.best);
    if (better) {
      have = true;
      r.best = mu;
      r.best_score = score;
    }
  }
  if (!have) return r;
  bool pass = true;
  for (const auto& blocks : block_sets)
    pass = pass && check_compositionality(M, blocks, r.best, tol).pass;
  if (pass) r.mu = r.best;
  return r;
}

std::vector<SupplyBlock> supply_blocks(const NetworkSpec& spec,
                                       const std::vector<Certificate>& certs, bool jump) {
  std::vector<SupplyBlock> out;
  for (std::size_t i = 0; i < spec.size(); ++i)
    out.push_back({spec.subsystems[i].arity.q, spec.subsystems[i].arity.n,
                   jump ? certs.at(i).D_d : certs.at(i).D_c});
  return out;
}

}  // namespace impsym
