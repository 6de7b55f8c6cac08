#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "stoflin/rational.hpp"

namespace stoflin {

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct ParseError : std::runtime_error {
    std::size_t offset;
    ParseError(std::string msg, std::size_t off)
        : std::runtime_error(std::move(msg) + " at offset " + std::to_string(off)), offset(off) {}
};

struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

struct UnboundParameter : std::runtime_error {
    explicit UnboundParameter(const std::string& name)
        : std::runtime_error("unbound parameter: " + name) {}
};

struct DimensionMismatch : std::runtime_error {
    explicit DimensionMismatch(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Numbers: exact rationals with float contagion
// ---------------------------------------------------------------------------

class Number {
  public:
    Number() : exact_(true), rat_(0), val_(0.0) {}
    static Number rational(const Rational& r) {
        Number n;
        n.exact_ = true;
        n.rat_ = r;
        n.val_ = r.to_double();
        return n;
    }
    static Number real(double d) {
        Number n;
        n.exact_ = false;
        n.val_ = d;
        return n;
    }

    bool exact() const { return exact_; }
    const Rational& rat() const { return rat_; }
    double value() const { return val_; }
    bool is_zero() const { return exact_ ? rat_.is_zero() : val_ == 0.0; }
    bool is(std::int64_t k) const { return exact_ ? rat_ == Rational(k) : val_ == double(k); }

    Number operator+(const Number& o) const { return binop(o, '+'); }
    Number operator-(const Number& o) const { return binop(o, '-'); }
    Number operator*(const Number& o) const { return binop(o, '*'); }
    Number operator/(const Number& o) const { return binop(o, '/'); }
    Number operator-() const {
        if (exact_) {
            try {
                return rational(-rat_);
            } catch (const RationalOverflow&) {
            }
        }
        return real(-val_);
    }

    bool same(const Number& o) const {
        if (exact_ != o.exact_) return false;
        return exact_ ? rat_ == o.rat_ : val_ == o.val_;
    }

    std::string str() const;

  private:
    Number binop(const Number& o, char op) const;

    bool exact_;
    Rational rat_;
    double val_;
};

// ---------------------------------------------------------------------------
// Expression AST
// ---------------------------------------------------------------------------

enum class NodeKind : std::uint8_t {
    Constant,
    Parameter,
    Var,
    Neg,
    Add,
    Mul,
    Div,
    Pow,
    Sin,
    Cos,
    Tan,
    Sec,
    Ln,
    Exp,
    Sqrt,
};

struct Node;
using NodePtr = std::shared_ptr<const Node>;

class Expr {
  public:
    Expr();  // the constant 0
    explicit Expr(NodePtr n) : node_(std::move(n)) {}

    const Node& node() const { return *node_; }
    const NodePtr& ptr() const { return node_; }
    NodeKind kind() const;

    bool is_constant() const { return kind() == NodeKind::Constant; }
    bool is_zero() const;
    bool is_one() const;

  private:
    NodePtr node_;
};

struct Node {
    NodeKind kind;
    Number number;           // Constant
    std::string name;        // Parameter
    int var_index = 0;       // Var, 1-based
    Rational exponent;       // Pow
    std::vector<Expr> kids;  // operands / function argument
    std::uint64_t hash = 0;
    std::int32_t size = 1;    // node count of the subtree
    std::int32_t max_var = 0; // highest state-variable index referenced
};

using ParamMap = std::map<std::string, double>;

struct Point {
    std::vector<double> coords;
    ParamMap params;
};

// Construction ---------------------------------------------------------------

Expr constant(double v);
Expr constant(const Rational& r);
Expr constant(const Number& n);
Expr integer(std::int64_t n);
Expr parameter(std::string name);
Expr variable(int index_1_based);

Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator*(const Expr& a, const Expr& b);
Expr operator/(const Expr& a, const Expr& b);
Expr operator-(const Expr& a);

Expr add_all(std::vector<Expr> terms);   // empty -> 0
Expr mul_all(std::vector<Expr> factors); // empty -> 1
Expr pow(const Expr& base, const Rational& exponent);
Expr sin(const Expr& a);
Expr cos(const Expr& a);
Expr tan(const Expr& a);
Expr sec(const Expr& a);
Expr ln(const Expr& a);
Expr exp(const Expr& a);
Expr sqrt(const Expr& a);

// Queries --------------------------------------------------------------------

bool equal(const Expr& a, const Expr& b);
int compare(const Expr& a, const Expr& b);  // deterministic total order

/// Rebuilds a node with the same kind and payload but new children.
Expr with_children(const Expr& e, std::vector<Expr> kids);
int node_count(const Expr& e);
int max_var_index(const Expr& e);
bool depends_on_var(const Expr& e, int index);

struct ExprLess {
    bool operator()(const Expr& a, const Expr& b) const { return compare(a, b) < 0; }
};

// Core operations --------------------------------------------------------------

std::string to_string(const Expr& e);
std::string format_double(double v);  // 17 significant digits

/// Parses `text` against the expression grammar with state variables x1..x<dim>.
Expr parse_expr(std::string_view text, int dim);

double evaluate(const Expr& e, const Point& p);

/// Exact symbolic partial derivative with respect to x<index>, simplified.
Expr differentiate(const Expr& e, int index);

/// Replaces Var(i) by replacements[i-1]; replacements must cover max_var_index.
Expr substitute_vars(const Expr& e, std::span<const Expr> replacements);

/// Replaces state variables by numeric values, keeping parameters symbolic.
Expr substitute_state(const Expr& e, std::span<const double> coords);

struct SimplifyOptions {
    double node_budget_factor = 4.0;  // result may not exceed this multiple of the input size
    int max_passes = 40;
};

Expr simplify(const Expr& e, const SimplifyOptions& opts = {});

// Compiled evaluation ---------------------------------------------------------
//
// Flat postfix tape for the simulation inner loops. Parameters are baked in at
// compile time except the reserved time parameter "t".

class CompiledExpr {
  public:
    double eval(std::span<const double> x, double t = 0.0) const;

    struct Op {
        std::uint8_t code;
        std::int32_t arg;
        double c;
    };
    std::vector<Op> tape;
    int stack_need = 0;
};

CompiledExpr compile(const Expr& e, int dim, const ParamMap& params);

}  // namespace stoflin
