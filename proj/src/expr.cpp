#include "stoflin/expr.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>

namespace stoflin {

namespace {

std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::uint64_t hash_combine(std::uint64_t h, std::uint64_t v) { return mix64(h ^ mix64(v)); }

std::uint64_t hash_double(double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    return bits;
}

NodePtr make_node(Node n) {
    std::uint64_t h = mix64(static_cast<std::uint64_t>(n.kind) + 0x51ull);
    std::int32_t size = 1;
    std::int32_t max_var = 0;
    switch (n.kind) {
        case NodeKind::Constant:
            h = hash_combine(h, n.number.exact() ? hash_combine(hash_double(n.number.value()), 1)
                                                 : hash_double(n.number.value()));
            break;
        case NodeKind::Parameter:
            for (char c : n.name) h = hash_combine(h, static_cast<std::uint64_t>(c));
            break;
        case NodeKind::Var:
            h = hash_combine(h, static_cast<std::uint64_t>(n.var_index));
            max_var = n.var_index;
            break;
        case NodeKind::Pow:
            h = hash_combine(h, hash_combine(static_cast<std::uint64_t>(n.exponent.num()),
                                             static_cast<std::uint64_t>(n.exponent.den())));
            break;
        default:
            break;
    }
    for (const Expr& k : n.kids) {
        h = hash_combine(h, k.node().hash);
        size += k.node().size;
        max_var = std::max(max_var, k.node().max_var);
    }
    n.hash = h;
    n.size = size;
    n.max_var = max_var;
    return std::make_shared<const Node>(std::move(n));
}

Expr make(NodeKind kind, std::vector<Expr> kids) {
    Node n;
    n.kind = kind;
    n.kids = std::move(kids);
    return Expr(make_node(std::move(n)));
}

const Expr& zero_expr() {
    static const Expr z = constant(Rational(0));
    return z;
}
const Expr& one_expr() {
    static const Expr o = constant(Rational(1));
    return o;
}

}  // namespace

// Number ---------------------------------------------------------------------

Number Number::binop(const Number& o, char op) const {
    if (exact_ && o.exact_) {
        try {
            switch (op) {
                case '+': return rational(rat_ + o.rat_);
                case '-': return rational(rat_ - o.rat_);
                case '*': return rational(rat_ * o.rat_);
                case '/':
                    if (o.rat_.is_zero()) throw DomainError("division by zero");
                    return rational(rat_ / o.rat_);
            }
        } catch (const RationalOverflow&) {
            // fall through to floating point
        }
    }
    switch (op) {
        case '+': return real(val_ + o.val_);
        case '-': return real(val_ - o.val_);
        case '*': return real(val_ * o.val_);
        default:
            if (std::abs(o.val_) <= 1e-300) throw DomainError("division by zero");
            return real(val_ / o.val_);
    }
}

std::string Number::str() const { return exact_ ? rat_.str() : format_double(val_); }

// Expr -----------------------------------------------------------------------

Expr::Expr() : node_(zero_expr().ptr()) {}

NodeKind Expr::kind() const { return node_->kind; }

bool Expr::is_zero() const { return is_constant() && node_->number.is_zero(); }
bool Expr::is_one() const { return is_constant() && node_->number.is(1); }

// Construction ----------------------------------------------------------------

Expr constant(const Number& num) {
    Node n;
    n.kind = NodeKind::Constant;
    n.number = num;
    return Expr(make_node(std::move(n)));
}

Expr constant(double v) { return constant(Number::real(v)); }
Expr constant(const Rational& r) { return constant(Number::rational(r)); }
Expr integer(std::int64_t n) { return constant(Rational(n)); }

Expr parameter(std::string name) {
    Node n;
    n.kind = NodeKind::Parameter;
    n.name = std::move(name);
    return Expr(make_node(std::move(n)));
}

Expr variable(int index) {
    if (index < 1) throw DimensionMismatch("variable index must be >= 1");
    Node n;
    n.kind = NodeKind::Var;
    n.var_index = index;
    return Expr(make_node(std::move(n)));
}

namespace {
void append_flat(std::vector<Expr>& out, const Expr& e, NodeKind kind) {
    if (e.kind() == kind) {
        for (const Expr& k : e.node().kids) out.push_back(k);
    } else {
        out.push_back(e);
    }
}
}  // namespace

Expr add_all(std::vector<Expr> terms) {
    if (terms.empty()) return zero_expr();
    if (terms.size() == 1) return terms[0];
    std::vector<Expr> flat;
    flat.reserve(terms.size());
    for (const Expr& t : terms) append_flat(flat, t, NodeKind::Add);
    return make(NodeKind::Add, std::move(flat));
}

Expr mul_all(std::vector<Expr> factors) {
    if (factors.empty()) return one_expr();
    if (factors.size() == 1) return factors[0];
    std::vector<Expr> flat;
    flat.reserve(factors.size());
    for (const Expr& f : factors) append_flat(flat, f, NodeKind::Mul);
    return make(NodeKind::Mul, std::move(flat));
}

Expr operator+(const Expr& a, const Expr& b) { return add_all({a, b}); }
Expr operator-(const Expr& a, const Expr& b) { return add_all({a, -b}); }
Expr operator*(const Expr& a, const Expr& b) { return mul_all({a, b}); }
Expr operator/(const Expr& a, const Expr& b) { return make(NodeKind::Div, {a, b}); }
Expr operator-(const Expr& a) { return make(NodeKind::Neg, {a}); }

Expr pow(const Expr& base, const Rational& e) {
    Node n;
    n.kind = NodeKind::Pow;
    n.exponent = e;
    n.kids = {base};
    return Expr(make_node(std::move(n)));
}

Expr sin(const Expr& a) { return make(NodeKind::Sin, {a}); }
Expr cos(const Expr& a) { return make(NodeKind::Cos, {a}); }
Expr tan(const Expr& a) { return make(NodeKind::Tan, {a}); }
Expr sec(const Expr& a) { return make(NodeKind::Sec, {a}); }
Expr ln(const Expr& a) { return make(NodeKind::Ln, {a}); }
Expr exp(const Expr& a) { return make(NodeKind::Exp, {a}); }
Expr sqrt(const Expr& a) { return make(NodeKind::Sqrt, {a}); }

// Queries ----------------------------------------------------------------------

int node_count(const Expr& e) { return e.node().size; }
int max_var_index(const Expr& e) { return e.node().max_var; }

bool depends_on_var(const Expr& e, int index) {
    const Node& n = e.node();
    if (n.max_var < index) return false;
    if (n.kind == NodeKind::Var) return n.var_index == index;
    for (const Expr& k : n.kids)
        if (depends_on_var(k, index)) return true;
    return false;
}

bool equal(const Expr& a, const Expr& b) {
    if (a.ptr() == b.ptr()) return true;
    if (a.node().hash != b.node().hash) return false;
    return compare(a, b) == 0;
}

Expr with_children(const Expr& e, std::vector<Expr> kids) {
    const Node& n = e.node();
    Node copy;
    copy.kind = n.kind;
    copy.number = n.number;
    copy.name = n.name;
    copy.var_index = n.var_index;
    copy.exponent = n.exponent;
    copy.kids = std::move(kids);
    return Expr(make_node(std::move(copy)));
}

int compare(const Expr& a, const Expr& b) {
    if (a.ptr() == b.ptr()) return 0;
    const Node& na = a.node();
    const Node& nb = b.node();
    if (na.kind != nb.kind) return na.kind < nb.kind ? -1 : 1;
    switch (na.kind) {
        case NodeKind::Constant: {
            const double va = na.number.value(), vb = nb.number.value();
            if (va != vb) return va < vb ? -1 : 1;
            if (na.number.exact() != nb.number.exact()) return na.number.exact() ? -1 : 1;
            return 0;
        }
        case NodeKind::Parameter:
            return na.name.compare(nb.name) < 0 ? -1 : (na.name == nb.name ? 0 : 1);
        case NodeKind::Var:
            return na.var_index < nb.var_index ? -1 : (na.var_index == nb.var_index ? 0 : 1);
        default:
            break;
    }
    if (na.kind == NodeKind::Pow) {
        if (na.exponent != nb.exponent) return na.exponent < nb.exponent ? -1 : 1;
    }
    if (na.kids.size() != nb.kids.size()) return na.kids.size() < nb.kids.size() ? -1 : 1;
    for (std::size_t i = 0; i < na.kids.size(); ++i) {
        const int c = compare(na.kids[i], nb.kids[i]);
        if (c != 0) return c;
    }
    return 0;
}

// Evaluation -------------------------------------------------------------------

namespace {
double finite_or_throw(double v, const char* what) {
    if (!std::isfinite(v)) throw DomainError(what);
    return v;
}

double pow_rational(double base, const Rational& e, bool* domain_ok) {
    *domain_ok = true;
    if (e.is_integer()) {
        std::int64_t k = e.num();
        if (k == 0) return 1.0;
        const bool inv = k < 0;
        if (inv) k = -k;
        double acc = 1.0, b = base;
        while (k > 0) {
            if (k & 1) acc *= b;
            b *= b;
            k >>= 1;
        }
        if (inv) {
            if (std::abs(acc) <= 1e-300) {
                *domain_ok = false;
                return 0.0;
            }
            acc = 1.0 / acc;
        }
        return acc;
    }
    if (base < 0.0 || (base == 0.0 && e.num() < 0)) {
        *domain_ok = false;
        return 0.0;
    }
    return std::pow(base, e.to_double());
}
}  // namespace

double evaluate(const Expr& e, const Point& p) {
    const Node& n = e.node();
    switch (n.kind) {
        case NodeKind::Constant:
            return n.number.value();
        case NodeKind::Parameter: {
            auto it = p.params.find(n.name);
            if (it == p.params.end()) throw UnboundParameter(n.name);
            return it->second;
        }
        case NodeKind::Var:
            if (n.var_index > static_cast<int>(p.coords.size()))
                throw DimensionMismatch("variable x" + std::to_string(n.var_index) +
                                        " outside point of dimension " + std::to_string(p.coords.size()));
            return p.coords[n.var_index - 1];
        case NodeKind::Neg:
            return -evaluate(n.kids[0], p);
        case NodeKind::Add: {
            double s = 0.0;
            for (const Expr& k : n.kids) s += evaluate(k, p);
            return finite_or_throw(s, "non-finite sum");
        }
        case NodeKind::Mul: {
            double s = 1.0;
            for (const Expr& k : n.kids) s *= evaluate(k, p);
            return finite_or_throw(s, "non-finite product");
        }
        case NodeKind::Div: {
            const double num = evaluate(n.kids[0], p);
            const double den = evaluate(n.kids[1], p);
            if (std::abs(den) <= 1e-300) throw DomainError("division by zero");
            return finite_or_throw(num / den, "non-finite quotient");
        }
        case NodeKind::Pow: {
            const double base = evaluate(n.kids[0], p);
            bool ok = true;
            const double v = pow_rational(base, n.exponent, &ok);
            if (!ok) throw DomainError("power outside domain");
            return finite_or_throw(v, "non-finite power");
        }
        case NodeKind::Sin:
            return std::sin(evaluate(n.kids[0], p));
        case NodeKind::Cos:
            return std::cos(evaluate(n.kids[0], p));
        case NodeKind::Tan: {
            const double c = std::cos(evaluate(n.kids[0], p));
            if (std::abs(c) <= 1e-300) throw DomainError("tan at pole");
            return std::sin(evaluate(n.kids[0], p)) / c;
        }
        case NodeKind::Sec: {
            const double c = std::cos(evaluate(n.kids[0], p));
            if (std::abs(c) <= 1e-300) throw DomainError("sec at pole");
            return 1.0 / c;
        }
        case NodeKind::Ln: {
            const double v = evaluate(n.kids[0], p);
            if (v <= 0.0) throw DomainError("ln of nonpositive value");
            return std::log(v);
        }
        case NodeKind::Exp:
            return finite_or_throw(std::exp(evaluate(n.kids[0], p)), "exp overflow");
        case NodeKind::Sqrt: {
            const double v = evaluate(n.kids[0], p);
            if (v < 0.0) throw DomainError("sqrt of negative value");
            return std::sqrt(v);
        }
    }
    throw std::logic_error("unreachable expression kind");
}

// Differentiation ----------------------------------------------------------------

namespace {
Expr diff_raw(const Expr& e, int i) {
    const Node& n = e.node();
    if (n.max_var < i && n.kind != NodeKind::Var) {
        // subtree cannot reference x_i
        bool touches = depends_on_var(e, i);
        if (!touches) return integer(0);
    }
    switch (n.kind) {
        case NodeKind::Constant:
        case NodeKind::Parameter:
            return integer(0);
        case NodeKind::Var:
            return integer(n.var_index == i ? 1 : 0);
        case NodeKind::Neg:
            return -diff_raw(n.kids[0], i);
        case NodeKind::Add: {
            std::vector<Expr> parts;
            parts.reserve(n.kids.size());
            for (const Expr& k : n.kids) parts.push_back(diff_raw(k, i));
            return add_all(std::move(parts));
        }
        case NodeKind::Mul: {
            std::vector<Expr> terms;
            for (std::size_t j = 0; j < n.kids.size(); ++j) {
                if (!depends_on_var(n.kids[j], i)) continue;
                std::vector<Expr> factors;
                factors.reserve(n.kids.size());
                for (std::size_t l = 0; l < n.kids.size(); ++l)
                    factors.push_back(l == j ? diff_raw(n.kids[l], i) : n.kids[l]);
                terms.push_back(mul_all(std::move(factors)));
            }
            return add_all(std::move(terms));
        }
        case NodeKind::Div: {
            const Expr& a = n.kids[0];
            const Expr& b = n.kids[1];
            return (diff_raw(a, i) * b - a * diff_raw(b, i)) / (b * b);
        }
        case NodeKind::Pow: {
            const Expr& b = n.kids[0];
            if (!depends_on_var(b, i)) return integer(0);
            return constant(Rational(n.exponent)) * pow(b, n.exponent - Rational(1)) * diff_raw(b, i);
        }
        case NodeKind::Sin:
            return cos(n.kids[0]) * diff_raw(n.kids[0], i);
        case NodeKind::Cos:
            return -(sin(n.kids[0]) * diff_raw(n.kids[0], i));
        case NodeKind::Tan: {
            const Expr t = tan(n.kids[0]);
            return (integer(1) + t * t) * diff_raw(n.kids[0], i);
        }
        case NodeKind::Sec:
            return sec(n.kids[0]) * tan(n.kids[0]) * diff_raw(n.kids[0], i);
        case NodeKind::Ln:
            return diff_raw(n.kids[0], i) / n.kids[0];
        case NodeKind::Exp:
            return exp(n.kids[0]) * diff_raw(n.kids[0], i);
        case NodeKind::Sqrt:
            return diff_raw(n.kids[0], i) / (integer(2) * sqrt(n.kids[0]));
    }
    throw std::logic_error("unreachable expression kind");
}
}  // namespace

Expr differentiate(const Expr& e, int i) {
    if (i < 1) throw DimensionMismatch("derivative index must be >= 1");
    return simplify(diff_raw(e, i));
}

// Substitution --------------------------------------------------------------------

Expr substitute_vars(const Expr& e, std::span<const Expr> repl) {
    const Node& n = e.node();
    if (n.max_var == 0) return e;
    if (n.kind == NodeKind::Var) {
        if (n.var_index > static_cast<int>(repl.size()))
            throw DimensionMismatch("substitution does not cover x" + std::to_string(n.var_index));
        return repl[n.var_index - 1];
    }
    std::vector<Expr> kids;
    kids.reserve(n.kids.size());
    bool changed = false;
    for (const Expr& k : n.kids) {
        Expr s = substitute_vars(k, repl);
        changed = changed || s.ptr() != k.ptr();
        kids.push_back(std::move(s));
    }
    if (!changed) return e;
    return with_children(e, std::move(kids));
}

Expr substitute_state(const Expr& e, std::span<const double> coords) {
    std::vector<Expr> repl;
    repl.reserve(coords.size());
    for (double c : coords) repl.push_back(constant(c));
    return substitute_vars(e, repl);
}

// Printing --------------------------------------------------------------------

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

namespace {

// precedence: 1 add, 2 mul/div, 3 unary minus operand, 4 pow base / atom
void print_rec(std::string& out, const Expr& e, int parent_prec);

bool is_atom_like(const Expr& e) {
    switch (e.kind()) {
        case NodeKind::Var:
        case NodeKind::Parameter:
        case NodeKind::Sin:
        case NodeKind::Cos:
        case NodeKind::Tan:
        case NodeKind::Sec:
        case NodeKind::Ln:
        case NodeKind::Exp:
        case NodeKind::Sqrt:
            return true;
        case NodeKind::Constant:
            return e.node().number.value() >= 0.0;
        default:
            return false;
    }
}

// Splits a flattened product into numerator/denominator factor strings. A
// leading negative coefficient is hoisted out as a prefix minus.
void print_mul(std::string& out, const std::vector<Expr>& kids, int parent_prec) {
    std::vector<Expr> num;
    std::vector<const Expr*> den;
    bool negative = false;
    for (const Expr& k : kids) {
        if (k.kind() == NodeKind::Pow && k.node().exponent.num() < 0) {
            den.push_back(&k);
        } else if (num.empty() && k.kind() == NodeKind::Constant &&
                   k.node().number.value() < 0.0) {
            negative = true;
            Number abs_val = -k.node().number;
            if (!(abs_val.is(1) && kids.size() > 1)) num.push_back(constant(abs_val));
        } else {
            num.push_back(k);
        }
    }
    std::string s;
    if (negative) s += "-";
    if (num.empty()) {
        s += "1";
    } else {
        bool first = true;
        for (const Expr& f : num) {
            if (!first) s += "*";
            print_rec(s, f, 2);
            first = false;
        }
    }
    for (const Expr* f : den) {
        const Node& n = f->node();
        const Rational flipped = -n.exponent;
        Expr positive = flipped == Rational(1) ? n.kids[0] : pow(n.kids[0], flipped);
        s += "/";
        print_rec(s, positive, 3);
    }
    const bool wrap = parent_prec > (negative ? 1 : 2);
    if (wrap) out += "(";
    out += s;
    if (wrap) out += ")";
}

void print_rec(std::string& out, const Expr& e, int parent_prec) {
    const Node& n = e.node();
    switch (n.kind) {
        case NodeKind::Constant: {
            const bool negative = n.number.value() < 0.0;
            const bool wrap = negative && parent_prec >= 2;
            if (wrap) out += "(";
            out += n.number.str();
            if (wrap) out += ")";
            return;
        }
        case NodeKind::Parameter:
            out += n.name;
            return;
        case NodeKind::Var:
            out += "x" + std::to_string(n.var_index);
            return;
        case NodeKind::Neg: {
            const bool wrap = parent_prec > 1;
            if (wrap) out += "(";
            out += "-";
            print_rec(out, n.kids[0], 3);
            if (wrap) out += ")";
            return;
        }
        case NodeKind::Add: {
            const bool wrap = parent_prec > 1;
            if (wrap) out += "(";
            bool first = true;
            for (const Expr& k : n.kids) {
                // render "+ -t" as "- t" for readability
                bool minus = false;
                Expr term = k;
                if (k.kind() == NodeKind::Neg) {
                    minus = true;
                    term = k.node().kids[0];
                } else if (k.kind() == NodeKind::Constant && k.node().number.value() < 0.0) {
                    minus = true;
                    term = constant(-k.node().number);
                } else if (k.kind() == NodeKind::Mul && k.node().kids[0].kind() == NodeKind::Constant &&
                           k.node().kids[0].node().number.value() < 0.0) {
                    minus = true;
                    const std::vector<Expr>& kk = k.node().kids;
                    Number abs_val = -kk[0].node().number;
                    std::vector<Expr> rest(kk.begin() + 1, kk.end());
                    if (!abs_val.is(1)) rest.insert(rest.begin(), constant(abs_val));
                    term = rest.size() == 1 ? rest[0] : mul_all(std::move(rest));
                }
                if (first) {
                    if (minus) out += "-";
                } else {
                    out += minus ? " - " : " + ";
                }
                print_rec(out, term, 2);
                first = false;
            }
            if (wrap) out += ")";
            return;
        }
        case NodeKind::Mul:
            print_mul(out, n.kids, parent_prec);
            return;
        case NodeKind::Div: {
            const bool wrap = parent_prec > 2;
            if (wrap) out += "(";
            print_rec(out, n.kids[0], 2);
            out += "/";
            print_rec(out, n.kids[1], 3);
            if (wrap) out += ")";
            return;
        }
        case NodeKind::Pow: {
            if (is_atom_like(n.kids[0])) {
                print_rec(out, n.kids[0], 4);
            } else {
                out += "(";
                print_rec(out, n.kids[0], 0);
                out += ")";
            }
            out += "^" + n.exponent.str();
            return;
        }
        case NodeKind::Sin: out += "sin("; break;
        case NodeKind::Cos: out += "cos("; break;
        case NodeKind::Tan: out += "tan("; break;
        case NodeKind::Sec: out += "sec("; break;
        case NodeKind::Ln: out += "ln("; break;
        case NodeKind::Exp: out += "exp("; break;
        case NodeKind::Sqrt: out += "sqrt("; break;
    }
    print_rec(out, n.kids[0], 0);
    out += ")";
}

}  // namespace

std::string to_string(const Expr& e) {
    std::string out;
    print_rec(out, e, 0);
    return out;
}

// Compiled tape -----------------------------------------------------------------

namespace {
enum : std::uint8_t {
    OP_CONST,
    OP_VAR,
    OP_TIME,
    OP_NEG,
    OP_ADD,
    OP_MUL,
    OP_DIV,
    OP_POW_INT,
    OP_POW_REAL,
    OP_SIN,
    OP_COS,
    OP_TAN,
    OP_SEC,
    OP_LN,
    OP_EXP,
    OP_SQRT,
};

int emit(const Expr& e, int dim, const ParamMap& params, CompiledExpr& out) {
    const Node& n = e.node();
    switch (n.kind) {
        case NodeKind::Constant:
            out.tape.push_back({OP_CONST, 0, n.number.value()});
            return 1;
        case NodeKind::Parameter: {
            if (n.name == "t") {
                out.tape.push_back({OP_TIME, 0, 0.0});
                return 1;
            }
            auto it = params.find(n.name);
            if (it == params.end()) throw UnboundParameter(n.name);
            out.tape.push_back({OP_CONST, 0, it->second});
            return 1;
        }
        case NodeKind::Var:
            if (n.var_index > dim)
                throw DimensionMismatch("variable x" + std::to_string(n.var_index) +
                                        " outside dimension " + std::to_string(dim));
            out.tape.push_back({OP_VAR, n.var_index - 1, 0.0});
            return 1;
        case NodeKind::Neg: {
            int d = emit(n.kids[0], dim, params, out);
            out.tape.push_back({OP_NEG, 0, 0.0});
            return d;
        }
        case NodeKind::Add:
        case NodeKind::Mul: {
            int depth = emit(n.kids[0], dim, params, out);
            for (std::size_t i = 1; i < n.kids.size(); ++i) {
                depth = std::max(depth, 1 + emit(n.kids[i], dim, params, out));
                out.tape.push_back({n.kind == NodeKind::Add ? OP_ADD : OP_MUL, 0, 0.0});
            }
            return depth;
        }
        case NodeKind::Div: {
            int d1 = emit(n.kids[0], dim, params, out);
            int d2 = emit(n.kids[1], dim, params, out);
            out.tape.push_back({OP_DIV, 0, 0.0});
            return std::max(d1, 1 + d2);
        }
        case NodeKind::Pow: {
            int d = emit(n.kids[0], dim, params, out);
            if (n.exponent.is_integer())
                out.tape.push_back({OP_POW_INT, static_cast<std::int32_t>(n.exponent.num()), 0.0});
            else
                out.tape.push_back({OP_POW_REAL, 0, n.exponent.to_double()});
            return d;
        }
        default: {
            int d = emit(n.kids[0], dim, params, out);
            std::uint8_t code = OP_SIN;
            switch (n.kind) {
                case NodeKind::Sin: code = OP_SIN; break;
                case NodeKind::Cos: code = OP_COS; break;
                case NodeKind::Tan: code = OP_TAN; break;
                case NodeKind::Sec: code = OP_SEC; break;
                case NodeKind::Ln: code = OP_LN; break;
                case NodeKind::Exp: code = OP_EXP; break;
                case NodeKind::Sqrt: code = OP_SQRT; break;
                default: throw std::logic_error("unreachable");
            }
            out.tape.push_back({code, 0, 0.0});
            return d;
        }
    }
}

double powi(double b, std::int64_t k, bool* ok) {
    *ok = true;
    const bool inv = k < 0;
    if (inv) k = -k;
    double acc = 1.0;
    while (k > 0) {
        if (k & 1) acc *= b;
        b *= b;
        k >>= 1;
    }
    if (inv) {
        if (std::abs(acc) <= 1e-300) {
            *ok = false;
            return 0.0;
        }
        return 1.0 / acc;
    }
    return acc;
}
}  // namespace

CompiledExpr compile(const Expr& e, int dim, const ParamMap& params) {
    CompiledExpr c;
    c.stack_need = emit(e, dim, params, c);
    return c;
}

double CompiledExpr::eval(std::span<const double> x, double t) const {
    double stack[64];
    int top = -1;
    for (const Op& op : tape) {
        switch (op.code) {
            case OP_CONST: stack[++top] = op.c; break;
            case OP_VAR: stack[++top] = x[op.arg]; break;
            case OP_TIME: stack[++top] = t; break;
            case OP_NEG: stack[top] = -stack[top]; break;
            case OP_ADD: --top; stack[top] += stack[top + 1]; break;
            case OP_MUL: --top; stack[top] *= stack[top + 1]; break;
            case OP_DIV: {
                --top;
                if (std::abs(stack[top + 1]) <= 1e-300) throw DomainError("division by zero");
                stack[top] /= stack[top + 1];
                break;
            }
            case OP_POW_INT: {
                bool ok = true;
                stack[top] = powi(stack[top], op.arg, &ok);
                if (!ok) throw DomainError("power outside domain");
                break;
            }
            case OP_POW_REAL:
                if (stack[top] < 0.0) throw DomainError("power outside domain");
                stack[top] = std::pow(stack[top], op.c);
                break;
            case OP_SIN: stack[top] = std::sin(stack[top]); break;
            case OP_COS: stack[top] = std::cos(stack[top]); break;
            case OP_TAN: {
                const double cv = std::cos(stack[top]);
                if (std::abs(cv) <= 1e-300) throw DomainError("tan at pole");
                stack[top] = std::sin(stack[top]) / cv;
                break;
            }
            case OP_SEC: {
                const double cv = std::cos(stack[top]);
                if (std::abs(cv) <= 1e-300) throw DomainError("sec at pole");
                stack[top] = 1.0 / cv;
                break;
            }
            case OP_LN:
                if (stack[top] <= 0.0) throw DomainError("ln of nonpositive value");
                stack[top] = std::log(stack[top]);
                break;
            case OP_EXP:
                stack[top] = std::exp(stack[top]);
                if (!std::isfinite(stack[top])) throw DomainError("exp overflow");
                break;
            case OP_SQRT:
                if (stack[top] < 0.0) throw DomainError("sqrt of negative value");
                stack[top] = std::sqrt(stack[top]);
                break;
        }
    }
    const double v = stack[0];
    if (!std::isfinite(v)) throw DomainError("non-finite value");
    return v;
}

}  // namespace stoflin
