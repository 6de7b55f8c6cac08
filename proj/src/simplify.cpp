#include <cmath>
#include <map>
#include <unordered_map>
#include <vector>

#include "stoflin/expr.hpp"

namespace stoflin {

namespace {

using FactorMap = std::map<Expr, Rational, ExprLess>;

// Bottom-up canonicalizer. One pass flattens and sorts n-ary nodes, folds
// constants, collects like terms/powers and applies the trig and ln/exp
// rewrite set. simplify() iterates it to a fixed point.
struct Canon {
    std::unordered_map<const Node*, Expr> memo;

    Expr run(const Expr& e) {
        auto it = memo.find(e.ptr().get());
        if (it != memo.end()) return it->second;
        Expr r = rewrite(e);
        memo.emplace(e.ptr().get(), r);
        return r;
    }

    Expr rewrite(const Expr& e) {
        const Node& n = e.node();
        switch (n.kind) {
            case NodeKind::Constant:
            case NodeKind::Parameter:
            case NodeKind::Var:
                return e;
            case NodeKind::Neg:
                return canon_mul({integer(-1), run(n.kids[0])});
            case NodeKind::Div:
                return canon_mul({run(n.kids[0]), canon_pow(run(n.kids[1]), Rational(-1))});
            case NodeKind::Sqrt:
                return canon_pow(run(n.kids[0]), Rational(1, 2));
            case NodeKind::Pow:
                return canon_pow(run(n.kids[0]), n.exponent);
            case NodeKind::Add: {
                std::vector<Expr> kids;
                kids.reserve(n.kids.size());
                for (const Expr& k : n.kids) kids.push_back(run(k));
                return canon_add(std::move(kids));
            }
            case NodeKind::Mul: {
                std::vector<Expr> kids;
                kids.reserve(n.kids.size());
                for (const Expr& k : n.kids) kids.push_back(run(k));
                return canon_mul(std::move(kids));
            }
            default:
                return canon_func(n.kind, run(n.kids[0]));
        }
    }

    Expr canon_func(NodeKind kind, const Expr& a) {
        if (a.is_constant()) {
            const Number& num = a.node().number;
            const double v = num.value();
            if (num.exact()) {
                // exact special values
                if (num.is_zero()) {
                    switch (kind) {
                        case NodeKind::Sin:
                        case NodeKind::Tan:
                            return integer(0);
                        case NodeKind::Cos:
                        case NodeKind::Sec:
                        case NodeKind::Exp:
                            return integer(1);
                        case NodeKind::Sqrt:
                            return integer(0);
                        default:
                            break;  // ln(0) stays symbolic (domain error at evaluation)
                    }
                }
                if (kind == NodeKind::Ln && num.is(1)) return integer(0);
                if (kind == NodeKind::Sqrt && num.rat().num() >= 0) {
                    const auto root_of = [](std::int64_t k) -> std::int64_t {
                        const std::int64_t r = static_cast<std::int64_t>(std::llround(std::sqrt(double(k))));
                        for (std::int64_t c = std::max<std::int64_t>(0, r - 1); c <= r + 1; ++c)
                            if (c * c == k) return c;
                        return -1;
                    };
                    const std::int64_t rn = root_of(num.rat().num());
                    const std::int64_t rd = root_of(num.rat().den());
                    if (rn >= 0 && rd > 0) return constant(Rational(rn, rd));
                }
            }
            switch (kind) {
                case NodeKind::Sin: return constant(std::sin(v));
                case NodeKind::Cos: return constant(std::cos(v));
                case NodeKind::Tan:
                    if (std::abs(std::cos(v)) > 1e-300) return constant(std::tan(v));
                    break;
                case NodeKind::Sec:
                    if (std::abs(std::cos(v)) > 1e-300) return constant(1.0 / std::cos(v));
                    break;
                case NodeKind::Ln:
                    if (v > 0.0) return constant(std::log(v));
                    break;
                case NodeKind::Exp: {
                    const double r = std::exp(v);
                    if (std::isfinite(r)) return constant(r);
                    break;
                }
                case NodeKind::Sqrt:
                    if (v >= 0.0) return constant(std::sqrt(v));
                    break;
                default:
                    break;
            }
        }
        if (kind == NodeKind::Ln && a.kind() == NodeKind::Exp) return a.node().kids[0];
        if (kind == NodeKind::Exp && a.kind() == NodeKind::Ln) return a.node().kids[0];
        switch (kind) {
            case NodeKind::Sin: return sin(a);
            case NodeKind::Cos: return cos(a);
            case NodeKind::Tan: return tan(a);
            case NodeKind::Sec: return sec(a);
            case NodeKind::Ln: return ln(a);
            case NodeKind::Exp: return exp(a);
            default: return sqrt(a);
        }
    }

    Expr canon_pow(const Expr& base, const Rational& r) {
        if (r == Rational(0)) return integer(1);
        if (r == Rational(1)) return base;
        if (base.is_constant()) {
            const Number& num = base.node().number;
            if (num.exact() && r.is_integer() && !(num.is_zero() && r.num() < 0)) {
                try {
                    return constant(num.rat().pow_int(r.num()));
                } catch (const RationalOverflow&) {
                    return constant(std::pow(num.value(), double(r.num())));
                }
            }
            if (num.value() > 0.0 || (num.value() == 0.0 && r.num() > 0))
                return constant(std::pow(num.value(), r.to_double()));
            if (r.is_integer()) return constant(std::pow(num.value(), double(r.num())));
            return pow(base, r);  // negative base, fractional exponent: leave symbolic
        }
        if (base.kind() == NodeKind::Pow) {
            try {
                return canon_pow(base.node().kids[0], base.node().exponent * r);
            } catch (const RationalOverflow&) {
                return pow(base, r);
            }
        }
        if (base.kind() == NodeKind::Mul && r.is_integer()) {
            std::vector<Expr> factors;
            factors.reserve(base.node().kids.size());
            for (const Expr& k : base.node().kids) factors.push_back(canon_pow(k, r));
            return canon_mul(std::move(factors));
        }
        return pow(base, r);
    }

    Expr canon_mul(std::vector<Expr> kids) {
        std::vector<Expr> flat;
        flat.reserve(kids.size());
        for (const Expr& k : kids) {
            if (k.kind() == NodeKind::Mul)
                for (const Expr& kk : k.node().kids) flat.push_back(kk);
            else
                flat.push_back(k);
        }
        Number coeff = Number::rational(Rational(1));
        FactorMap powers;
        std::vector<Expr> opaque;  // factors whose exponents overflowed
        for (const Expr& f : flat) {
            if (f.is_constant()) {
                coeff = coeff * f.node().number;
                continue;
            }
            Expr base = f;
            Rational expo(1);
            if (f.kind() == NodeKind::Pow) {
                base = f.node().kids[0];
                expo = f.node().exponent;
            }
            try {
                auto [it, inserted] = powers.try_emplace(base, expo);
                if (!inserted) it->second = it->second + expo;
            } catch (const RationalOverflow&) {
                opaque.push_back(f);
            }
        }
        if (coeff.is_zero()) return constant(coeff);

        std::vector<Expr> factors;
        for (const auto& [base, expo] : powers) {
            if (expo == Rational(0)) continue;
            Expr f = canon_pow(base, expo);
            if (f.is_constant())
                coeff = coeff * f.node().number;
            else
                factors.push_back(f);
        }
        for (const Expr& f : opaque) factors.push_back(f);
        if (coeff.is_zero()) return constant(coeff);

        // sin(u)*cos(u) -> (1/2)*sin(2u)
        for (bool changed = true; changed;) {
            changed = false;
            for (std::size_t i = 0; i < factors.size() && !changed; ++i) {
                if (factors[i].kind() != NodeKind::Sin) continue;
                for (std::size_t j = 0; j < factors.size(); ++j) {
                    if (factors[j].kind() != NodeKind::Cos) continue;
                    if (!equal(factors[i].node().kids[0], factors[j].node().kids[0])) continue;
                    const Expr arg = factors[i].node().kids[0];
                    factors.erase(factors.begin() + std::max(i, j));
                    factors.erase(factors.begin() + std::min(i, j));
                    factors.push_back(canon_func(NodeKind::Sin, canon_mul({integer(2), arg})));
                    coeff = coeff * Number::rational(Rational(1, 2));
                    changed = true;
                    break;
                }
            }
        }
        std::sort(factors.begin(), factors.end(), ExprLess{});

        if (factors.empty()) return constant(coeff);
        if (coeff.is(1) && factors.size() == 1) return factors[0];
        // linear distribution: c*(a + b) -> c*a + c*b (constant coefficient only)
        if (factors.size() == 1 && factors[0].kind() == NodeKind::Add) {
            const Expr c = constant(coeff);
            std::vector<Expr> terms;
            terms.reserve(factors[0].node().kids.size());
            for (const Expr& t : factors[0].node().kids) terms.push_back(canon_mul({c, t}));
            return canon_add(std::move(terms));
        }
        std::vector<Expr> out;
        out.reserve(factors.size() + 1);
        if (!coeff.is(1)) out.push_back(constant(coeff));
        for (Expr& f : factors) out.push_back(std::move(f));
        if (out.size() == 1) return out[0];
        Expr m = mul_all(std::move(out));
        return m;
    }

    struct Term {
        Number coeff;
        Expr key;  // canonical product without the numeric coefficient; 1 for pure constants
    };

    static Term decompose(const Expr& t) {
        if (t.is_constant()) return {t.node().number, integer(1)};
        if (t.kind() == NodeKind::Mul && t.node().kids[0].is_constant()) {
            const std::vector<Expr>& kids = t.node().kids;
            std::vector<Expr> rest(kids.begin() + 1, kids.end());
            Expr key = rest.size() == 1 ? rest[0] : mul_all(std::move(rest));
            return {t.node().kids[0].node().number, key};
        }
        return {Number::rational(Rational(1)), t};
    }

    static FactorMap factor_map(const Expr& key) {
        FactorMap m;
        const auto insert = [&m](const Expr& f) {
            if (f.kind() == NodeKind::Pow)
                m.emplace(f.node().kids[0], f.node().exponent);
            else
                m.emplace(f, Rational(1));
        };
        if (key.kind() == NodeKind::Mul)
            for (const Expr& k : key.node().kids) insert(k);
        else if (!key.is_one())
            insert(key);
        return m;
    }

    Expr key_from_factor_map(const FactorMap& m) {
        std::vector<Expr> factors;
        for (const auto& [base, expo] : m) factors.push_back(canon_pow(base, expo));
        if (factors.empty()) return integer(1);
        if (factors.size() == 1) return factors[0];
        std::sort(factors.begin(), factors.end(), ExprLess{});
        return mul_all(std::move(factors));
    }

    // Detects m_big == m_small + {fn(u)^2}; returns the squared-function base.
    static bool differs_by_square(const FactorMap& m_big, const FactorMap& m_small, NodeKind fn,
                                  Expr* arg) {
        if (m_big.size() != m_small.size() + 1) return false;
        auto ib = m_big.begin();
        auto is = m_small.begin();
        const Expr* extra = nullptr;
        const Rational* extra_exp = nullptr;
        while (ib != m_big.end()) {
            if (is != m_small.end() && equal(ib->first, is->first) && ib->second == is->second) {
                ++ib;
                ++is;
            } else {
                if (extra) return false;
                extra = &ib->first;
                extra_exp = &ib->second;
                ++ib;
            }
        }
        if (is != m_small.end() || !extra) return false;
        if (*extra_exp != Rational(2) || extra->kind() != fn) return false;
        *arg = extra->node().kids[0];
        return true;
    }

    // Detects keys equal except fn1(u)^2 in one and fn2(u)^2 in the other.
    static bool differ_in_squares(const FactorMap& a, const FactorMap& b, NodeKind fn1, NodeKind fn2,
                                  Expr* arg, FactorMap* rest) {
        if (a.size() != b.size()) return false;
        auto ia = a.begin();
        auto ib = b.begin();
        bool found = false;
        FactorMap common;
        while (ia != a.end() && ib != b.end()) {
            if (equal(ia->first, ib->first) && ia->second == ib->second) {
                common.insert(*ia);
                ++ia;
                ++ib;
                continue;
            }
            if (found) return false;
            if (ia->second != Rational(2) || ib->second != Rational(2)) return false;
            if (ia->first.kind() == fn1 && ib->first.kind() == fn2 &&
                equal(ia->first.node().kids[0], ib->first.node().kids[0])) {
                *arg = ia->first.node().kids[0];
            } else if (ia->first.kind() == fn2 && ib->first.kind() == fn1 &&
                       equal(ia->first.node().kids[0], ib->first.node().kids[0])) {
                *arg = ia->first.node().kids[0];
            } else {
                return false;
            }
            found = true;
            ++ia;
            ++ib;
        }
        if (ia != a.end() || ib != b.end() || !found) return false;
        *rest = std::move(common);
        return true;
    }

    Expr canon_add(std::vector<Expr> kids) {
        std::vector<Expr> flat;
        flat.reserve(kids.size());
        for (const Expr& k : kids) {
            if (k.kind() == NodeKind::Add)
                for (const Expr& kk : k.node().kids) flat.push_back(kk);
            else
                flat.push_back(k);
        }
        std::map<Expr, Number, ExprLess> terms;
        for (const Expr& t : flat) {
            Term d = decompose(t);
            auto [it, inserted] = terms.try_emplace(d.key, d.coeff);
            if (!inserted) it->second = it->second + d.coeff;
        }
        for (auto it = terms.begin(); it != terms.end();) {
            if (it->second.is_zero())
                it = terms.erase(it);
            else
                ++it;
        }

        apply_trig_rules(terms);

        std::vector<Expr> out;
        out.reserve(terms.size());
        for (const auto& [key, coeff] : terms) {
            if (key.is_one()) {
                out.push_back(constant(coeff));
            } else if (coeff.is(1)) {
                out.push_back(key);
            } else {
                std::vector<Expr> factors{constant(coeff)};
                if (key.kind() == NodeKind::Mul)
                    for (const Expr& k : key.node().kids) factors.push_back(k);
                else
                    factors.push_back(key);
                out.push_back(mul_all(std::move(factors)));
            }
        }
        if (out.empty()) return integer(0);
        if (out.size() == 1) return out[0];
        std::sort(out.begin(), out.end(), ExprLess{});
        return add_all(std::move(out));
    }

    void apply_trig_rules(std::map<Expr, Number, ExprLess>& terms) {
        bool changed = true;
        int guard = 0;
        while (changed && ++guard < 32) {
            changed = false;
            std::vector<std::pair<Expr, FactorMap>> items;
            items.reserve(terms.size());
            for (const auto& [key, coeff] : terms) items.emplace_back(key, factor_map(key));

            for (std::size_t i = 0; i < items.size() && !changed; ++i) {
                for (std::size_t j = 0; j < items.size() && !changed; ++j) {
                    if (i == j) continue;
                    const Number ci = terms.at(items[i].first);
                    const Number cj = terms.at(items[j].first);
                    Expr arg;
                    FactorMap rest;
                    // c*M*sin(u)^2 + c*M*cos(u)^2 -> c*M
                    if (ci.same(cj) &&
                        differ_in_squares(items[i].second, items[j].second, NodeKind::Sin,
                                          NodeKind::Cos, &arg, &rest)) {
                        terms.erase(items[i].first);
                        terms.erase(items[j].first);
                        merge_term(terms, key_from_factor_map(rest), ci);
                        changed = true;
                        break;
                    }
                    // c*M*cos(u)^2 - c*M*sin(u)^2 -> c*M*cos(2u), keyed on the cos^2 term
                    if (ci.same(-cj) && items[i].second.size() == items[j].second.size() &&
                        differ_in_squares(items[i].second, items[j].second, NodeKind::Cos,
                                          NodeKind::Sin, &arg, &rest)) {
                        // orient: coefficient of the cos^2 term wins
                        const bool i_has_cos = has_square(items[i].second, NodeKind::Cos, arg);
                        const Number c = i_has_cos ? ci : cj;
                        FactorMap with_cos2 = rest;
                        with_cos2.emplace(canon_func(NodeKind::Cos, canon_mul({integer(2), arg})),
                                          Rational(1));
                        terms.erase(items[i].first);
                        terms.erase(items[j].first);
                        merge_term(terms, key_from_factor_map(with_cos2), c);
                        changed = true;
                        break;
                    }
                    // c*M - c*M*cos(u)^2 -> c*M*sin(u)^2   (and sin -> cos symmetrically)
                    if (ci.same(-cj) &&
                        differs_by_square(items[j].second, items[i].second, NodeKind::Cos, &arg)) {
                        FactorMap with_sin2 = items[i].second;
                        with_sin2.emplace(canon_func(NodeKind::Sin, arg), Rational(2));
                        terms.erase(items[i].first);
                        terms.erase(items[j].first);
                        merge_term(terms, key_from_factor_map(with_sin2), ci);
                        changed = true;
                        break;
                    }
                    if (ci.same(-cj) &&
                        differs_by_square(items[j].second, items[i].second, NodeKind::Sin, &arg)) {
                        FactorMap with_cos2 = items[i].second;
                        with_cos2.emplace(canon_func(NodeKind::Cos, arg), Rational(2));
                        terms.erase(items[i].first);
                        terms.erase(items[j].first);
                        merge_term(terms, key_from_factor_map(with_cos2), ci);
                        changed = true;
                        break;
                    }
                }
            }
        }
    }

    static bool has_square(const FactorMap& m, NodeKind fn, const Expr& arg) {
        for (const auto& [base, expo] : m)
            if (expo == Rational(2) && base.kind() == fn && equal(base.node().kids[0], arg))
                return true;
        return false;
    }

    static void merge_term(std::map<Expr, Number, ExprLess>& terms, const Expr& key,
                           const Number& coeff) {
        auto [it, inserted] = terms.try_emplace(key, coeff);
        if (!inserted) it->second = it->second + coeff;
        if (it->second.is_zero()) terms.erase(it);
    }
};

}  // namespace

Expr simplify(const Expr& e, const SimplifyOptions& opts) {
    Expr cur = e;
    for (int pass = 0; pass < opts.max_passes; ++pass) {
        Canon canon;
        Expr next = canon.run(cur);
        if (equal(next, cur)) break;
        cur = next;
    }
    if (node_count(cur) > opts.node_budget_factor * node_count(e) + 8) return e;
    return cur;
}

}  // namespace stoflin
