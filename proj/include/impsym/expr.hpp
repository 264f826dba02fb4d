#pragma once

// Scalar arithmetic expressions over named state/input variables.
//
// Variables are x<k>, w<k>, u<k> (state, internal input, external input) and
// the hatted copies xh<k>, wh<k>, uh<k> used by storage functions V(x, xh).
// k is a positive integer without leading zeros. The grammar is documented in
// docs/expression-grammar.md.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace impsym {

enum class VarKind : std::uint8_t { X, W, U, XH, WH, UH };

struct VarRef {
  VarKind kind = VarKind::X;
  std::uint32_t index = 0;  // 0-based; "x1" has index 0

  std::string name() const;
  static VarRef from_name(std::string_view name);  // throws InputError
  static bool valid_name(std::string_view name) noexcept;

  auto operator<=>(const VarRef&) const = default;
};

/// Values for every variable kind. Spans may be shorter than the largest
/// referenced index only if that kind is not referenced.
struct Bindings {
  std::span<const double> x, w, u, xh, wh, uh;

  double lookup(VarRef v) const;
};

enum class Op : std::uint8_t {
  Const, Var, Neg,
  Add, Sub, Mul, Div, Pow,
  Sin, Cos, Exp, Ln, Tanh, Sqrt, Abs,
  Min, Max
};

/// Immutable parsed expression. Nodes are stored in a flat arena; the object
/// holds no mutable state, so concurrent evaluation is safe.
class Expr {
public:
  struct Node {
    Op op = Op::Const;
    double value = 0.0;
    VarRef var{};
    std::int32_t lhs = -1;
    std::int32_t rhs = -1;
    std::uint32_t offset = 0;  // source offset of the token that created the node
  };

  Expr() = default;

  static Expr parse(std::string_view text);

  double eval(const Bindings& env) const;
  double eval(const std::map<std::string, double>& env) const;

  const std::set<VarRef>& variables() const noexcept { return vars_; }
  /// Largest 1-based index referenced for `kind`, 0 if the kind is unused.
  std::uint32_t max_index(VarKind kind) const noexcept;
  bool references(VarKind kind) const noexcept { return max_index(kind) > 0; }

  /// Fully parenthesised text that re-parses to a structurally identical tree.
  std::string to_string() const;
  const std::string& source() const noexcept { return source_; }

  bool structurally_equal(const Expr& other) const;
  bool empty() const noexcept { return nodes_.empty(); }
  std::span<const Node> nodes() const noexcept { return nodes_; }

private:
  friend class ExprParser;

  double eval_node(std::int32_t id, const Bindings& env) const;
  void print_node(std::int32_t id, std::string& out) const;
  bool equal_node(std::int32_t a, const Expr& other, std::int32_t b) const;

  std::vector<Node> nodes_;
  std::int32_t root_ = -1;
  std::string source_;
  std::set<VarRef> vars_;
};

Expr parse_expr(std::string_view text);
double eval_expr(const Expr& expr, const std::map<std::string, double>& env);

struct Arity {
  std::size_t n = 0;  // state
  std::size_t q = 0;  // internal input
  std::size_t m = 0;  // external input

  auto operator<=>(const Arity&) const = default;
};

/// One expression per state dimension, e.g. the flow map f or the jump map g.
class VectorField {
public:
  VectorField() = default;
  /// Throws DimensionError when the component count differs from arity.n or an
  /// expression references an index beyond the arity or a hatted variable.
  VectorField(std::vector<Expr> components, Arity arity);

  static VectorField parse(const std::vector<std::string>& texts, Arity arity);

  std::vector<double> eval(std::span<const double> x, std::span<const double> w,
                           std::span<const double> u) const;
  void eval_into(std::span<const double> x, std::span<const double> w,
                 std::span<const double> u, std::span<double> out) const;

  std::size_t dim() const noexcept { return components_.size(); }
  const Arity& arity() const noexcept { return arity_; }
  const std::vector<Expr>& components() const noexcept { return components_; }

private:
  std::vector<Expr> components_;
  Arity arity_{};
};

std::vector<double> eval_vector(const VectorField& field, std::span<const double> x,
                                std::span<const double> w, std::span<const double> u);

}  // namespace impsym
