#include <cctype>
#include <cstdlib>

#include "stoflin/expr.hpp"

namespace stoflin {

namespace {

// Grammar:
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := ['-'] atom ['^' signed-rational]
//   atom   := number | ident | func '(' expr ')' | '(' expr ')'
// x[1-9][0-9]* is a state variable, any other ident a parameter.
struct Parser {
    std::string_view text;
    std::size_t pos = 0;
    int dim;

    void skip_ws() {
        while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    }
    bool eof() {
        skip_ws();
        return pos >= text.size();
    }
    char peek() {
        skip_ws();
        return pos < text.size() ? text[pos] : '\0';
    }
    bool accept(char c) {
        if (peek() == c) {
            ++pos;
            return true;
        }
        return false;
    }
    void expect(char c, const char* what) {
        if (!accept(c)) throw ParseError(std::string("expected '") + c + "' (" + what + ")", pos);
    }

    Expr parse() {
        Expr e = expr();
        if (!eof()) throw ParseError("syntax error", pos);
        return e;
    }

    Expr expr() {
        Expr e = term();
        while (true) {
            if (accept('+'))
                e = e + term();
            else if (accept('-'))
                e = e - term();
            else
                return e;
        }
    }

    Expr term() {
        Expr e = factor();
        while (true) {
            if (accept('*'))
                e = e * factor();
            else if (accept('/'))
                e = e / factor();
            else
                return e;
        }
    }

    Expr factor() {
        const bool negate = accept('-');
        Expr e = atom();
        if (accept('^')) e = pow(e, signed_rational());
        return negate ? -e : e;
    }

    Expr atom() {
        const char c = peek();
        if (c == '(') {
            ++pos;
            Expr e = expr();
            expect(')', "closing parenthesis");
            return e;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return identifier();
        throw ParseError("syntax error", pos);
    }

    Expr number() {
        skip_ws();
        const std::size_t start = pos;
        bool has_dot = false, has_exp = false;
        while (pos < text.size()) {
            const char c = text[pos];
            if (std::isdigit(static_cast<unsigned char>(c))) {
                ++pos;
            } else if (c == '.' && !has_dot && !has_exp) {
                has_dot = true;
                ++pos;
            } else if ((c == 'e' || c == 'E') && !has_exp && pos + 1 < text.size() &&
                       (std::isdigit(static_cast<unsigned char>(text[pos + 1])) ||
                        ((text[pos + 1] == '+' || text[pos + 1] == '-') && pos + 2 < text.size() &&
                         std::isdigit(static_cast<unsigned char>(text[pos + 2]))))) {
                has_exp = true;
                pos += (text[pos + 1] == '+' || text[pos + 1] == '-') ? 2 : 1;
            } else {
                break;
            }
        }
        const std::string token(text.substr(start, pos - start));
        if (token.empty() || token == ".") throw ParseError("malformed number", start);
        if (!has_dot && !has_exp) {
            errno = 0;
            char* end = nullptr;
            const long long v = std::strtoll(token.c_str(), &end, 10);
            if (errno == 0 && end && *end == '\0') return integer(v);
        }
        return constant(std::strtod(token.c_str(), nullptr));
    }

    Expr identifier() {
        skip_ws();
        const std::size_t start = pos;
        while (pos < text.size() &&
               (std::isalnum(static_cast<unsigned char>(text[pos])) || text[pos] == '_'))
            ++pos;
        const std::string name(text.substr(start, pos - start));
        const std::size_t after = pos;
        if (peek() == '(') {
            ++pos;
            Expr arg = expr();
            expect(')', "closing parenthesis of function call");
            if (name == "sin") return sin(arg);
            if (name == "cos") return cos(arg);
            if (name == "tan") return tan(arg);
            if (name == "sec") return sec(arg);
            if (name == "ln") return ln(arg);
            if (name == "exp") return exp(arg);
            if (name == "sqrt") return sqrt(arg);
            throw ParseError("unknown function name '" + name + "'", start);
        }
        pos = after;
        if (name.size() >= 2 && name[0] == 'x' && name[1] >= '1' && name[1] <= '9') {
            bool all_digits = true;
            for (std::size_t i = 1; i < name.size(); ++i)
                if (!std::isdigit(static_cast<unsigned char>(name[i]))) all_digits = false;
            if (all_digits) {
                const long idx = std::strtol(name.c_str() + 1, nullptr, 10);
                if (idx > dim)
                    throw ParseError("variable " + name + " exceeds dimension " + std::to_string(dim),
                                     start);
                return variable(static_cast<int>(idx));
            }
        }
        return parameter(name);
    }

    Rational signed_rational() {
        skip_ws();
        const bool wrapped = accept('(');
        const bool neg = accept('-');
        const std::int64_t num = raw_integer();
        std::int64_t den = 1;
        // "x^3/2" is the exponent 3/2, but "x^3/(...)" is a division
        if (peek() == '/') {
            const std::size_t save = pos;
            ++pos;
            skip_ws();
            if (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos])))
                den = raw_integer();
            else
                pos = save;
        }
        if (wrapped) expect(')', "closing parenthesis of exponent");
        if (den == 0) throw ParseError("exponent with zero denominator", pos);
        return Rational(neg ? -num : num, den);
    }

    std::int64_t raw_integer() {
        skip_ws();
        const std::size_t start = pos;
        while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
        if (pos == start) throw ParseError("expected integer exponent", start);
        return std::strtoll(std::string(text.substr(start, pos - start)).c_str(), nullptr, 10);
    }
};

// Folds quotients of numeric literals so rationals like 1/2 stay exact.
Expr fold_literal_quotients(const Expr& e) {
    const Node& n = e.node();
    if (n.kids.empty()) return e;
    std::vector<Expr> kids;
    kids.reserve(n.kids.size());
    bool changed = false;
    for (const Expr& k : n.kids) {
        Expr f = fold_literal_quotients(k);
        changed = changed || f.ptr() != k.ptr();
        kids.push_back(std::move(f));
    }
    if (n.kind == NodeKind::Div && kids[0].is_constant() && kids[1].is_constant() &&
        !kids[1].node().number.is_zero()) {
        return constant(kids[0].node().number / kids[1].node().number);
    }
    if (!changed) return e;
    return with_children(e, std::move(kids));
}

}  // namespace

Expr parse_expr(std::string_view text, int dim) {
    if (dim < 1) throw DimensionMismatch("dimension must be >= 1");
    Parser p{text, 0, dim};
    return fold_literal_quotients(p.parse());
}

}  // namespace stoflin
