#include "impsym/expr.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>

#include "impsym/error.hpp"

namespace impsym {

namespace {

struct FunctionInfo {
  std::string_view name;
  Op op;
  int arity;
};

constexpr FunctionInfo kFunctions[] = {
    {"sin", Op::Sin, 1},   {"cos", Op::Cos, 1},   {"exp", Op::Exp, 1},
    {"ln", Op::Ln, 1},     {"tanh", Op::Tanh, 1}, {"sqrt", Op::Sqrt, 1},
    {"abs", Op::Abs, 1},   {"min", Op::Min, 2},   {"max", Op::Max, 2},
};

const FunctionInfo* find_function(std::string_view name) {
  for (const auto& f : kFunctions)
    if (f.name == name) return &f;
  return nullptr;
}

std::string_view function_name(Op op) {
  for (const auto& f : kFunctions)
    if (f.op == op) return f.name;
  return "?";
}

char binary_symbol(Op op) {
  switch (op) {
    case Op::Add: return '+';
    case Op::Sub: return '-';
    case Op::Mul: return '*';
    case Op::Div: return '/';
    case Op::Pow: return '^';
    default: return '?';
  }
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string describe_char(std::string_view text, std::size_t pos) {
  if (pos >= text.size()) return "end of input";
  return std::string("'") + text[pos] + "'";
}

}  // namespace

// ---------------------------------------------------------------------------
// Variables

std::string VarRef::name() const {
  static constexpr const char* prefixes[] = {"x", "w", "u", "xh", "wh", "uh"};
  return prefixes[static_cast<int>(kind)] + std::to_string(index + 1);
}

bool VarRef::valid_name(std::string_view name) noexcept {
  std::size_t p = 0;
  if (name.empty()) return false;
  if (name[0] != 'x' && name[0] != 'w' && name[0] != 'u') return false;
  p = 1;
  if (p < name.size() && name[p] == 'h') ++p;
  if (p >= name.size() || name[p] < '1' || name[p] > '9') return false;
  for (std::size_t i = p; i < name.size(); ++i)
    if (name[i] < '0' || name[i] > '9') return false;
  return name.size() - p <= 9;
}

VarRef VarRef::from_name(std::string_view name) {
  if (!valid_name(name))
    throw InputError("unknown variable pattern '" + std::string(name) +
                     "' (expected x<k>, w<k>, u<k>, xh<k>, wh<k> or uh<k>)");
  const bool hat = name.size() > 1 && name[1] == 'h';
  const std::size_t digits = hat ? 2 : 1;
  std::uint32_t k = 0;
  std::from_chars(name.data() + digits, name.data() + name.size(), k);
  VarKind kind{};
  switch (name[0]) {
    case 'x': kind = hat ? VarKind::XH : VarKind::X; break;
    case 'w': kind = hat ? VarKind::WH : VarKind::W; break;
    default: kind = hat ? VarKind::UH : VarKind::U; break;
  }
  return VarRef{kind, k - 1};
}

double Bindings::lookup(VarRef v) const {
  std::span<const double> s;
  switch (v.kind) {
    case VarKind::X: s = x; break;
    case VarKind::W: s = w; break;
    case VarKind::U: s = u; break;
    case VarKind::XH: s = xh; break;
    case VarKind::WH: s = wh; break;
    case VarKind::UH: s = uh; break;
  }
  if (v.index >= s.size()) throw EvalError("unbound variable '" + v.name() + "'");
  return s[v.index];
}

// ---------------------------------------------------------------------------
// Parser: recursive descent.
//
//   expr    := term (('+' | '-') term)*
//   term    := power (('*' | '/') power)*
//   power   := unary ('^' power)?
//   unary   := ('-' | '+') unary | primary
//   primary := number | variable | func '(' expr (',' expr)* ')' | '(' expr ')'

class ExprParser {
public:
  explicit ExprParser(std::string_view text) : text_(text) {}

  Expr run() {
    skip_ws();
    if (pos_ >= text_.size()) throw ParseError(0, "empty expression");
    out_.root_ = parse_sum();
    skip_ws();
    if (pos_ < text_.size())
      throw ParseError(pos_, "expected operator or end of input, found " +
                                 describe_char(text_, pos_));
    out_.source_ = std::string(text_);
    return std::move(out_);
  }

private:
  void skip_ws() {
    while (pos_ < text_.size() &&
           (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\n' ||
            text_[pos_] == '\r'))
      ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  std::int32_t add(Expr::Node n) {
    out_.nodes_.push_back(n);
    return static_cast<std::int32_t>(out_.nodes_.size() - 1);
  }

  std::int32_t binary(Op op, std::int32_t l, std::int32_t r, std::size_t at) {
    Expr::Node n;
    n.op = op;
    n.lhs = l;
    n.rhs = r;
    n.offset = static_cast<std::uint32_t>(at);
    return add(n);
  }

  std::int32_t parse_sum() {
    std::int32_t lhs = parse_product();
    for (;;) {
      skip_ws();
      const std::size_t at = pos_;
      if (accept('+'))
        lhs = binary(Op::Add, lhs, parse_product(), at);
      else if (accept('-'))
        lhs = binary(Op::Sub, lhs, parse_product(), at);
      else
        return lhs;
    }
  }

  std::int32_t parse_product() {
    std::int32_t lhs = parse_power();
    for (;;) {
      skip_ws();
      const std::size_t at = pos_;
      if (accept('*'))
        lhs = binary(Op::Mul, lhs, parse_power(), at);
      else if (accept('/'))
        lhs = binary(Op::Div, lhs, parse_power(), at);
      else
        return lhs;
    }
  }

  std::int32_t parse_power() {
    std::int32_t base = parse_unary();
    skip_ws();
    const std::size_t at = pos_;
    if (accept('^')) return binary(Op::Pow, base, parse_power(), at);
    return base;
  }

  std::int32_t parse_unary() {
    skip_ws();
    const std::size_t at = pos_;
    if (accept('-')) {
      const std::int32_t operand = parse_unary();
      Expr::Node n;
      n.op = Op::Neg;
      n.lhs = operand;
      n.offset = static_cast<std::uint32_t>(at);
      return add(n);
    }
    if (accept('+')) return parse_unary();
    return parse_primary();
  }

  std::int32_t parse_primary() {
    skip_ws();
    const std::size_t at = pos_;
    if (pos_ >= text_.size())
      throw ParseError(pos_, "expected operand, found end of input");
    const char c = text_[pos_];
    if ((c >= '0' && c <= '9') || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return parse_identifier();
    if (accept('(')) {
      const std::int32_t inner = parse_sum();
      if (!accept(')'))
        throw ParseError(pos_, "expected ')', found " + describe_char(text_, pos_));
      return inner;
    }
    throw ParseError(at, "expected operand, found " + describe_char(text_, at));
  }

  std::int32_t parse_number() {
    const std::size_t start = pos_;
    auto digits = [&] {
      std::size_t n = 0;
      while (pos_ < text_.size() && text_[pos_] >= '0' && text_[pos_] <= '9') {
        ++pos_;
        ++n;
      }
      return n;
    };
    std::size_t mantissa = digits();
    if (pos_ < text_.size() && text_[pos_] == '.') {
      ++pos_;
      mantissa += digits();
    }
    if (mantissa == 0) throw ParseError(start, "malformed number");
    if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
      ++pos_;
      if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) ++pos_;
      if (digits() == 0) throw ParseError(pos_, "expected exponent digits");
    }
    double value = 0.0;
    const auto res = std::from_chars(text_.data() + start, text_.data() + pos_, value);
    if (res.ec != std::errc() || !std::isfinite(value))
      throw ParseError(start, "number out of range");
    Expr::Node n;
    n.op = Op::Const;
    n.value = value;
    n.offset = static_cast<std::uint32_t>(start);
    return add(n);
  }

  std::int32_t parse_identifier() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
      ++pos_;
    const std::string_view name = text_.substr(start, pos_ - start);
    skip_ws();
    if (pos_ < text_.size() && text_[pos_] == '(') {
      const FunctionInfo* fn = find_function(name);
      if (!fn) throw ParseError(start, "unknown function '" + std::string(name) + "'");
      ++pos_;
      std::int32_t args[2] = {-1, -1};
      for (int i = 0; i < fn->arity; ++i) {
        if (i > 0 && !accept(','))
          throw ParseError(pos_, "expected ',' in call to " + std::string(name) +
                                     ", found " + describe_char(text_, pos_));
        args[i] = parse_sum();
      }
      if (!accept(')'))
        throw ParseError(pos_, "expected ')' closing call to " + std::string(name) +
                                   ", found " + describe_char(text_, pos_));
      Expr::Node n;
      n.op = fn->op;
      n.lhs = args[0];
      n.rhs = args[1];
      n.offset = static_cast<std::uint32_t>(start);
      return add(n);
    }
    if (!VarRef::valid_name(name))
      throw ParseError(start, "unknown variable pattern '" + std::string(name) + "'");
    Expr::Node n;
    n.op = Op::Var;
    n.var = VarRef::from_name(name);
    n.offset = static_cast<std::uint32_t>(start);
    out_.vars_.insert(n.var);
    return add(n);
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  Expr out_;
};

Expr Expr::parse(std::string_view text) { return ExprParser(text).run(); }

Expr parse_expr(std::string_view text) { return Expr::parse(text); }

// ---------------------------------------------------------------------------
// Evaluation

double Expr::eval(const Bindings& env) const {
  if (root_ < 0) throw EvalError("evaluating an empty expression");
  return eval_node(root_, env);
}

double Expr::eval(const std::map<std::string, double>& env) const {
  std::vector<double> slots[6];
  for (const VarRef& v : vars_) {
    auto it = env.find(v.name());
    if (it == env.end()) throw EvalError("unbound variable '" + v.name() + "'");
    auto& s = slots[static_cast<int>(v.kind)];
    if (s.size() <= v.index) s.resize(v.index + 1, 0.0);
    s[v.index] = it->second;
  }
  Bindings b{slots[0], slots[1], slots[2], slots[3], slots[4], slots[5]};
  return eval(b);
}

double eval_expr(const Expr& expr, const std::map<std::string, double>& env) {
  return expr.eval(env);
}

double Expr::eval_node(std::int32_t id, const Bindings& env) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  auto sub = [&](std::int32_t child) { return eval_node(child, env); };
  auto domain_error = [&](const char* what, double v) -> double {
    std::string text;
    print_node(id, text);
    throw EvalError(std::string(what) + " (argument " + format_number(v) + ") in '" + text +
                    "'");
  };
  switch (n.op) {
    case Op::Const: return n.value;
    case Op::Var: return env.lookup(n.var);
    case Op::Neg: return -sub(n.lhs);
    case Op::Add: return sub(n.lhs) + sub(n.rhs);
    case Op::Sub: return sub(n.lhs) - sub(n.rhs);
    case Op::Mul: return sub(n.lhs) * sub(n.rhs);
    case Op::Div: return sub(n.lhs) / sub(n.rhs);
    case Op::Pow: return std::pow(sub(n.lhs), sub(n.rhs));
    case Op::Sin: return std::sin(sub(n.lhs));
    case Op::Cos: return std::cos(sub(n.lhs));
    case Op::Exp: return std::exp(sub(n.lhs));
    case Op::Ln: {
      const double v = sub(n.lhs);
      if (!(v > 0.0)) return domain_error("ln of non-positive value", v);
      return std::log(v);
    }
    case Op::Tanh: return std::tanh(sub(n.lhs));
    case Op::Sqrt: {
      const double v = sub(n.lhs);
      if (v < 0.0 || std::isnan(v)) return domain_error("sqrt of negative value", v);
      return std::sqrt(v);
    }
    case Op::Abs: return std::abs(sub(n.lhs));
    case Op::Min: return std::min(sub(n.lhs), sub(n.rhs));
    case Op::Max: return std::max(sub(n.lhs), sub(n.rhs));
  }
  return 0.0;
}

std::uint32_t Expr::max_index(VarKind kind) const noexcept {
  std::uint32_t best = 0;
  for (const VarRef& v : vars_)
    if (v.kind == kind) best = std::max(best, v.index + 1);
  return best;
}

// ---------------------------------------------------------------------------
// Printing and comparison

void Expr::print_node(std::int32_t id, std::string& out) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  switch (n.op) {
    case Op::Const: out += format_number(n.value); return;
    case Op::Var: out += n.var.name(); return;
    case Op::Neg:
      out += "(-";
      print_node(n.lhs, out);
      out += ')';
      return;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
    case Op::Pow:
      out += '(';
      print_node(n.lhs, out);
      out += ' ';
      out += binary_symbol(n.op);
      out += ' ';
      print_node(n.rhs, out);
      out += ')';
      return;
    default:
      out += function_name(n.op);
      out += '(';
      print_node(n.lhs, out);
      if (n.rhs >= 0) {
        out += ", ";
        print_node(n.rhs, out);
      }
      out += ')';
      return;
  }
}

std::string Expr::to_string() const {
  std::string out;
  if (root_ >= 0) print_node(root_, out);
  return out;
}

bool Expr::equal_node(std::int32_t a, const Expr& other, std::int32_t b) const {
  if ((a < 0) != (b < 0)) return false;
  if (a < 0) return true;
  const Node& x = nodes_[static_cast<std::size_t>(a)];
  const Node& y = other.nodes_[static_cast<std::size_t>(b)];
  if (x.op != y.op) return false;
  if (x.op == Op::Const)
    return std::bit_cast<std::uint64_t>(x.value) == std::bit_cast<std::uint64_t>(y.value);
  if (x.op == Op::Var) return x.var == y.var;
  return equal_node(x.lhs, other, y.lhs) && equal_node(x.rhs, other, y.rhs);
}

bool Expr::structurally_equal(const Expr& other) const {
  return equal_node(root_, other, other.root_);
}

// ---------------------------------------------------------------------------
// VectorField

VectorField::VectorField(std::vector<Expr> components, Arity arity)
    : components_(std::move(components)), arity_(arity) {
  if (components_.size() != arity_.n)
    throw DimensionError("vector field has " + std::to_string(components_.size()) +
                         " components, expected n = " + std::to_string(arity_.n));
  for (std::size_t i = 0; i < components_.size(); ++i) {
    const Expr& e = components_[i];
    auto fail = [&](const std::string& why) {
      throw DimensionError("component " + std::to_string(i + 1) + " '" + e.source() + "': " +
                           why);
    };
    if (e.max_index(VarKind::X) > arity_.n) fail("references a state index beyond n");
    if (e.max_index(VarKind::W) > arity_.q) fail("references an internal input beyond q");
    if (e.max_index(VarKind::U) > arity_.m) fail("references an external input beyond m");
    if (e.references(VarKind::XH) || e.references(VarKind::WH) || e.references(VarKind::UH))
      fail("hatted variables are only allowed in storage functions");
  }
}

VectorField VectorField::parse(const std::vector<std::string>& texts, Arity arity) {
  std::vector<Expr> comps;
  comps.reserve(texts.size());
  for (const auto& t : texts) comps.push_back(Expr::parse(t));
  return VectorField(std::move(comps), arity);
}

void VectorField::eval_into(std::span<const double> x, std::span<const double> w,
                            std::span<const double> u, std::span<double> out) const {
  if (x.size() != arity_.n || w.size() != arity_.q || u.size() != arity_.m ||
      out.size() != arity_.n)
    throw DimensionError("vector field expects (n, q, m) = (" + std::to_string(arity_.n) +
                         ", " + std::to_string(arity_.q) + ", " + std::to_string(arity_.m) +
                         "), got (" + std::to_string(x.size()) + ", " +
                         std::to_string(w.size()) + ", " + std::to_string(u.size()) + ")");
  const Bindings b{x, w, u, {}, {}, {}};
  for (std::size_t i = 0; i < components_.size(); ++i) out[i] = components_[i].eval(b);
}

std::vector<double> VectorField::eval(std::span<const double> x, std::span<const double> w,
                                      std::span<const double> u) const {
  std::vector<double> out(arity_.n);
  eval_into(x, w, u, out);
  return out;
}

std::vector<double> eval_vector(const VectorField& field, std::span<const double> x,
                                std::span<const double> w, std::span<const double> u) {
  return field.eval(x, w, u);
}

}  // namespace impsym
