#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"

#include "impsym/error.hpp"
#include "impsym/expr.hpp"

using namespace impsym;

namespace {

// Independent reference: shunting-yard to RPN, then a stack machine.
class ShuntingYard {
public:
  explicit ShuntingYard(const std::string& text) { to_rpn(tokenize(text)); }

  double eval(const std::map<std::string, double>& env) const {
    std::vector<double> st;
    auto pop = [&] {
      const double v = st.back();
      st.pop_back();
      return v;
    };
    for (const Tok& t : rpn_) {
      switch (t.kind) {
        case Tok::Num: st.push_back(t.value); break;
        case Tok::Name: st.push_back(env.at(t.text)); break;
        case Tok::Neg: st.push_back(-pop()); break;
        case Tok::Op: {
          const double b = pop(), a = pop();
          const char c = t.text[0];
          st.push_back(c == '+' ? a + b : c == '-' ? a - b : c == '*' ? a * b : c == '/' ? a / b
                                                                                          : std::pow(a, b));
          break;
        }
        case Tok::Fn: {
          if (t.text == "min" || t.text == "max") {
            const double b = pop(), a = pop();
            st.push_back(t.text == "min" ? std::min(a, b) : std::max(a, b));
          } else {
            const double a = pop();
            if (t.text == "sin") st.push_back(std::sin(a));
            else if (t.text == "cos") st.push_back(std::cos(a));
            else if (t.text == "exp") st.push_back(std::exp(a));
            else if (t.text == "ln") st.push_back(std::log(a));
            else if (t.text == "tanh") st.push_back(std::tanh(a));
            else if (t.text == "sqrt") st.push_back(std::sqrt(a));
            else st.push_back(std::abs(a));
          }
          break;
        }
        default: throw std::logic_error("bad token");
      }
    }
    return st.back();
  }

private:
  struct Tok {
    enum Kind { Num, Name, Fn, Op, Neg, LParen, RParen, Comma } kind;
    std::string text;
    double value = 0.0;
  };

  static std::vector<Tok> tokenize(const std::string& s) {
    std::vector<Tok> out;
    std::size_t i = 0;
    while (i < s.size()) {
      const char c = s[i];
      if (c == ' ') {
        ++i;
      } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        char* end = nullptr;
        const double v = std::strtod(s.c_str() + i, &end);
        out.push_back({Tok::Num, "", v});
        i = static_cast<std::size_t>(end - s.c_str());
      } else if (std::isalpha(static_cast<unsigned char>(c))) {
        std::size_t j = i;
        while (j < s.size() && std::isalnum(static_cast<unsigned char>(s[j]))) ++j;
        const std::string name = s.substr(i, j - i);
        const bool fn = j < s.size() && s[j] == '(';
        out.push_back({fn ? Tok::Fn : Tok::Name, name});
        i = j;
      } else if (c == '(') {
        out.push_back({Tok::LParen, "("});
        ++i;
      } else if (c == ')') {
        out.push_back({Tok::RParen, ")"});
        ++i;
      } else if (c == ',') {
        out.push_back({Tok::Comma, ","});
        ++i;
      } else {
        // '-' is unary at the start or after an operator, '(' or ','.
        const bool unary = c == '-' && (out.empty() || out.back().kind == Tok::Op ||
                                        out.back().kind == Tok::Neg ||
                                        out.back().kind == Tok::LParen ||
                                        out.back().kind == Tok::Comma);
        out.push_back({unary ? Tok::Neg : Tok::Op, std::string(1, c)});
        ++i;
      }
    }
    return out;
  }

  static int prec(const Tok& t) {
    if (t.kind == Tok::Neg) return 4;
    const char c = t.text[0];
    return c == '^' ? 3 : (c == '*' || c == '/') ? 2 : 1;
  }
  static bool right_assoc(const Tok& t) { return t.kind == Tok::Neg || t.text == "^"; }

  void to_rpn(const std::vector<Tok>& toks) {
    std::vector<Tok> ops;
    for (const Tok& t : toks) {
      switch (t.kind) {
        case Tok::Num:
        case Tok::Name: rpn_.push_back(t); break;
        case Tok::Fn:
        case Tok::LParen: ops.push_back(t); break;
        case Tok::Neg: ops.push_back(t); break;
        case Tok::Op:
          while (!ops.empty() && (ops.back().kind == Tok::Op || ops.back().kind == Tok::Neg)) {
            const Tok& top = ops.back();
            if (prec(top) > prec(t) || (prec(top) == prec(t) && !right_assoc(t))) {
              rpn_.push_back(top);
              ops.pop_back();
            } else {
              break;
            }
          }
          ops.push_back(t);
          break;
        case Tok::Comma:
          while (ops.back().kind != Tok::LParen) {
            rpn_.push_back(ops.back());
            ops.pop_back();
          }
          break;
        case Tok::RParen:
          while (ops.back().kind != Tok::LParen) {
            rpn_.push_back(ops.back());
            ops.pop_back();
          }
          ops.pop_back();
          if (!ops.empty() && ops.back().kind == Tok::Fn) {
            rpn_.push_back(ops.back());
            ops.pop_back();
          }
          break;
      }
    }
    while (!ops.empty()) {
      rpn_.push_back(ops.back());
      ops.pop_back();
    }
  }

  std::vector<Tok> rpn_;
};

// Random syntactically valid text; parentheses are optional so precedence
// and associativity are exercised.
class TextGen {
public:
  explicit TextGen(unsigned seed) : rng_(seed) {}

  std::string expr(int depth) {
    std::string s = term(depth);
    for (int k = pick(2); k > 0; --k) s += (pick(2) ? " + " : " - ") + term(depth);
    return s;
  }

private:
  int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng_); }

  std::string term(int depth) {
    std::string s = factor(depth);
    for (int k = pick(2); k > 0; --k) s += (pick(2) ? "*" : "/") + factor(depth);
    return s;
  }
  std::string factor(int depth) {
    std::string s = unary(depth);
    if (pick(4) == 0) s += "^" + std::string(pick(2) ? "2" : "x2");
    return s;
  }
  std::string unary(int depth) { return pick(5) == 0 ? "-" + unary(depth) : primary(depth); }
  std::string primary(int depth) {
    const int c = depth <= 0 ? pick(2) : pick(6);
    static const char* vars[] = {"x1", "x2", "u1", "w1"};
    static const char* fns[] = {"sin", "cos", "exp", "tanh", "abs"};
    switch (c) {
      case 0: return std::to_string(pick(20) * 0.25);
      case 1: return vars[pick(4)];
      case 2: return "(" + expr(depth - 1) + ")";
      case 3: return std::string(fns[pick(5)]) + "(" + expr(depth - 1) + ")";
      case 4: return std::string(pick(2) ? "min" : "max") + "(" + expr(depth - 1) + ", " +
                     expr(depth - 1) + ")";
      default: return std::string(pick(2) ? "ln" : "sqrt") + "(1 + abs(" + expr(depth - 1) + "))";
    }
  }

  std::mt19937 rng_;
};

}  // namespace

TEST_CASE("expression examples") {
  const Expr e = parse_expr("-2*x1 + 0.5*w1 + u1");
  CHECK(eval_expr(e, {{"x1", 1.0}, {"w1", 2.0}, {"u1", 0.0}}) == -1.0);
  CHECK(eval_expr(parse_expr("sin(x1)^2"), {{"x1", 0.0}}) == 0.0);
  CHECK(eval_expr(parse_expr("exp(0)"), {}) == 1.0);
  CHECK(eval_expr(parse_expr("max(x1, u1)"), {{"x1", -1.0}, {"u1", 3.0}}) == 3.0);
  CHECK_THROWS_AS(eval_expr(parse_expr("ln(x1)"), {{"x1", -1.0}}), EvalError);
  CHECK_THROWS_AS(eval_expr(parse_expr("sqrt(x1)"), {{"x1", -1.0}}), EvalError);
}

TEST_CASE("syntax errors carry the offset") {
  try {
    parse_expr("x1 + * 2");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.offset() == 5);
  }
  CHECK_THROWS_AS(parse_expr(""), ParseError);
  CHECK_THROWS_AS(parse_expr("foo(x1)"), ParseError);
  CHECK_THROWS_AS(parse_expr("y1 + 1"), ParseError);
  CHECK_THROWS_AS(parse_expr("x0"), ParseError);
  CHECK_THROWS_AS(parse_expr("(x1"), ParseError);
  CHECK_THROWS_AS(parse_expr("min(x1)"), ParseError);
}

TEST_CASE("unbound variables are reported") {
  CHECK_THROWS_AS(eval_expr(parse_expr("x1 + x2"), {{"x1", 1.0}}), EvalError);
}

TEST_CASE("precedence and associativity") {
  const std::map<std::string, double> env{{"x1", 3.0}};
  CHECK(eval_expr(parse_expr("2 - 3 - 4"), env) == -5.0);
  CHECK(eval_expr(parse_expr("8 / 4 / 2"), env) == 1.0);
  CHECK(eval_expr(parse_expr("2 + 3 * 4"), env) == 14.0);
  CHECK(eval_expr(parse_expr("2 * 3 ^ 2"), env) == 18.0);
  CHECK(eval_expr(parse_expr("-x1^2"), env) == 9.0);
  CHECK(eval_expr(parse_expr("2^3^2"), env) == 512.0);
}

TEST_CASE("random expressions agree with the shunting-yard reference") {
  TextGen gen(7);
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> val(-2.0, 2.0);
  int compared = 0;
  for (int k = 0; k < 4000; ++k) {
    const std::string text = gen.expr(3);
    const Expr e = parse_expr(text);
    const ShuntingYard ref(text);
    const std::map<std::string, double> env{
        {"x1", val(rng)}, {"x2", val(rng)}, {"u1", val(rng)}, {"w1", val(rng)}};
    const double want = ref.eval(env);
    double got = 0.0;
    try {
      got = e.eval(env);
    } catch (const EvalError& err) {
      // Domain errors are raised where the reference produces NaN, which
      // min/max may then discard; such samples are not comparable.
      CHECK(std::string(err.what()).find("of ") != std::string::npos);
      continue;
    }
    if (!std::isfinite(want) || !std::isfinite(got)) continue;
    CHECK_MESSAGE(got == want, text);
    // Printing and re-parsing keeps the tree.
    const Expr again = parse_expr(e.to_string());
    CHECK(again.structurally_equal(e));
    ++compared;
  }
  CHECK(compared > 1500);
}

TEST_CASE("evaluation is deterministic") {
  const Expr e = parse_expr("tanh(x1)*exp(-x2) + sqrt(abs(x1*x2)) / (1 + x2^2)");
  const std::map<std::string, double> env{{"x1", 0.3}, {"x2", -1.7}};
  const double a = e.eval(env);
  for (int k = 0; k < 100; ++k) CHECK(e.eval(env) == a);
}

TEST_CASE("vector fields check their arity") {
  const Arity ar{1, 1, 1};
  const VectorField f = VectorField::parse({"-x1"}, ar);
  const std::vector<double> x{2.0}, w{0.0}, u{0.0};
  CHECK(eval_vector(f, x, w, u) == std::vector<double>{-2.0});
  CHECK_THROWS_AS(VectorField::parse({"-x1", "x1"}, ar), DimensionError);
  CHECK_THROWS_AS(VectorField::parse({"x2"}, ar), DimensionError);
  CHECK_THROWS_AS(VectorField::parse({"xh1"}, ar), DimensionError);
  const std::vector<double> x2{1.0, 2.0};
  CHECK_THROWS_AS(f.eval(x2, w, u), DimensionError);
}
