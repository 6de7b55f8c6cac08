#include "stoflin/integrate.hpp"

namespace stoflin {

namespace {

// u = A*x_var + B with A nonzero and free of x_var; returns A.
std::optional<Expr> affine_slope(const Expr& u, int var) {
    Expr a = differentiate(u, var);
    if (a.is_zero() || depends_on_var(a, var)) return std::nullopt;
    return a;
}

Expr sec_antiderivative(const Expr& u) {
    const Expr half_u = simplify(constant(Rational(1, 2)) * u);
    return ln(cos(half_u) + sin(half_u)) - ln(cos(half_u) - sin(half_u));
}

// Antiderivative of a single dependent core factor; nullopt on table miss.
std::optional<Expr> integrate_core(const Expr& core, int var) {
    switch (core.kind()) {
        case NodeKind::Var:
            if (core.node().var_index != var) return std::nullopt;
            return constant(Rational(1, 2)) * core * core;
        case NodeKind::Pow: {
            const Expr& base = core.node().kids[0];
            const Rational& r = core.node().exponent;
            if (base.kind() == NodeKind::Cos && r == Rational(-1)) {
                const Expr& u = base.node().kids[0];
                auto a = affine_slope(u, var);
                if (!a) return std::nullopt;
                return sec_antiderivative(u) / *a;
            }
            auto a = affine_slope(base, var);
            if (!a) return std::nullopt;
            if (r == Rational(-1)) return ln(base) / *a;
            const Rational rp1 = r + Rational(1);
            return pow(base, rp1) / (constant(rp1) * *a);
        }
        case NodeKind::Sin: {
            const Expr& u = core.node().kids[0];
            auto a = affine_slope(u, var);
            if (!a) return std::nullopt;
            return -(cos(u) / *a);
        }
        case NodeKind::Cos: {
            const Expr& u = core.node().kids[0];
            auto a = affine_slope(u, var);
            if (!a) return std::nullopt;
            return sin(u) / *a;
        }
        case NodeKind::Tan: {
            const Expr& u = core.node().kids[0];
            auto a = affine_slope(u, var);
            if (!a) return std::nullopt;
            return -(ln(cos(u)) / *a);
        }
        case NodeKind::Sec: {
            const Expr& u = core.node().kids[0];
            auto a = affine_slope(u, var);
            if (!a) return std::nullopt;
            return sec_antiderivative(u) / *a;
        }
        case NodeKind::Exp: {
            const Expr& u = core.node().kids[0];
            auto a = affine_slope(u, var);
            if (!a) return std::nullopt;
            return core / *a;
        }
        default:
            return std::nullopt;
    }
}

Expr integrate_term(const Expr& term, int var) {
    if (!depends_on_var(term, var)) return term * variable(var);
    std::vector<Expr> free_factors;
    std::vector<Expr> dependent;
    if (term.kind() == NodeKind::Mul) {
        for (const Expr& f : term.node().kids)
            (depends_on_var(f, var) ? dependent : free_factors).push_back(f);
    } else {
        dependent.push_back(term);
    }
    if (dependent.size() != 1)
        throw NonIntegrable("product of several x" + std::to_string(var) +
                            "-dependent factors: " + to_string(term));
    auto anti = integrate_core(dependent[0], var);
    if (!anti)
        throw NonIntegrable("no table entry for " + to_string(dependent[0]));
    free_factors.push_back(*anti);
    return mul_all(std::move(free_factors));
}

}  // namespace

Expr integrate_table(const Expr& e, int var) {
    const Expr canon = simplify(e);
    std::vector<Expr> parts;
    if (canon.kind() == NodeKind::Add) {
        for (const Expr& t : canon.node().kids) parts.push_back(integrate_term(t, var));
    } else {
        parts.push_back(integrate_term(canon, var));
    }
    return simplify(add_all(std::move(parts)));
}

}  // namespace stoflin
