#include <doctest.h>

#include <cmath>

#include "stoflin/fields.hpp"
#include "stoflin/propcheck.hpp"

using namespace stoflin;

namespace {

const ParamMap kCraneParams{{"g", 9.81}, {"l", 1.0}, {"mC", 10.0}, {"mL", 1.0}, {"F", 1.0}};

VectorField crane_f() {
    return VectorField(
        2, {parse_expr("x2", 2),
            parse_expr("-sin(x1)*(g*(mL+mC)+l*mL*x2*cos(x1))/(l*(mC+mL-mL*cos(x1)^2))", 2)});
}

VectorField crane_g() {
    return VectorField(2, {integer(0), parse_expr("-cos(x1)/(l*(mC+mL-mL*cos(x1)^2))", 2)});
}

Expr crane_lambda() {
    return parse_expr("ln(cos(1/2*x1)+sin(1/2*x1)) - ln(cos(1/2*x1)-sin(1/2*x1))", 2);
}

// directional derivative by finite differences, the independent oracle
double directional_fd(const VectorField& f, const Expr& h, const Point& p, double eps = 1e-6) {
    Point hi = p, lo = p;
    for (int i = 0; i < f.dim; ++i) {
        const double v = evaluate(f[i], p);
        hi.coords[static_cast<std::size_t>(i)] += eps * v;
        lo.coords[static_cast<std::size_t>(i)] -= eps * v;
    }
    return (evaluate(h, hi) - evaluate(h, lo)) / (2.0 * eps);
}

}  // namespace

TEST_CASE("lie_derivative: coordinate selection and the crane chain") {
    const VectorField f(2, {parse_expr("x2", 2), parse_expr("-x1", 2)});
    CHECK(equal(lie_derivative(f, variable(1)), variable(2)));

    // the worked example: L_f lambda = x2 * sec(x1)
    const Expr t2 = lie_derivative(crane_f(), crane_lambda());
    const DomainSampler box = DomainSampler::unit_box(2, 5);
    CHECK(equivalent(t2, parse_expr("x2*sec(x1)", 2), box, 1e-9, kCraneParams));

    const VectorField id2(2, {parse_expr("x1", 2), parse_expr("x2", 2)});
    CHECK(equivalent(lie_derivative(id2, parse_expr("x1*x2", 2)), parse_expr("2*x1*x2", 2), box,
                     1e-12));

    CHECK_THROWS_AS(lie_derivative(VectorField(1, {integer(1)}), parse_expr("x2", 2)),
                    DimensionMismatch);
}

TEST_CASE("lie_derivative agrees with the directional finite difference") {
    const DomainSampler box = DomainSampler::unit_box(2, 41);
    for (int id = 0; id < 20; ++id) {
        const VectorField f = random_safe_field(900, static_cast<std::uint64_t>(id), 2, 3);
        const Expr h = random_safe_expr(901, static_cast<std::uint64_t>(id), 2, 3);
        const Expr lf = lie_derivative(f, h);
        for (int k = 0; k < 5; ++k) {
            Point p{box.sample(static_cast<std::uint64_t>(k)), {}};
            const double oracle = directional_fd(f, h, p);
            CHECK(std::abs(evaluate(lf, p) - oracle) <= 1e-6 * (1.0 + std::abs(oracle)));
        }
    }
}

TEST_CASE("multi_lie recursion") {
    const VectorField f(2, {parse_expr("x2", 2), integer(0)});
    const Expr h = variable(1);
    CHECK(equal(multi_lie(f, h, 0), h));
    CHECK(equal(multi_lie(f, h, 1), variable(2)));
    CHECK(multi_lie(f, h, 2).is_zero());

    const DomainSampler box = DomainSampler::unit_box(2, 5);
    CHECK(equivalent(multi_lie(crane_f(), crane_lambda(), 1), parse_expr("x2*sec(x1)", 2), box,
                     1e-9, kCraneParams));
}

TEST_CASE("lie_bracket: antisymmetry and the hand oracle") {
    const VectorField f(2, {parse_expr("x2", 2), integer(0)});
    const VectorField g(2, {integer(0), integer(1)});
    const VectorField br = lie_bracket(f, g);
    CHECK(equal(br[0], integer(-1)));
    CHECK(br[1].is_zero());

    // [f,f] = 0 and [f,g] + [g,f] = 0 structurally after simplify
    for (int id = 0; id < 10; ++id) {
        const VectorField a = random_safe_field(902, static_cast<std::uint64_t>(2 * id), 2, 3);
        const VectorField b = random_safe_field(902, static_cast<std::uint64_t>(2 * id + 1), 2, 3);
        const VectorField aa = lie_bracket(a, a);
        for (int c = 0; c < 2; ++c) CHECK(aa[c].is_zero());
        const VectorField ab = lie_bracket(a, b);
        const VectorField ba = lie_bracket(b, a);
        for (int c = 0; c < 2; ++c) CHECK(simplify(ab[c] + ba[c]).is_zero());
    }
}

TEST_CASE("Leibniz rule holds numerically") {
    const DomainSampler box = DomainSampler::unit_box(2, 17);
    for (int id = 0; id < 15; ++id) {
        const VectorField f = random_safe_field(903, static_cast<std::uint64_t>(3 * id), 2, 4);
        const VectorField g = random_safe_field(903, static_cast<std::uint64_t>(3 * id + 1), 2, 4);
        const Expr h = random_safe_expr(903, static_cast<std::uint64_t>(3 * id + 2), 2, 4);
        const Expr lhs = lie_derivative(lie_bracket(f, g), h);
        const Expr rhs = simplify(lie_derivative(f, lie_derivative(g, h)) -
                                  lie_derivative(g, lie_derivative(f, h)));
        CHECK(equivalent(lhs, rhs, box, 1e-7));
    }
}

TEST_CASE("ad_iter recursion and memoized prefixes") {
    const VectorField f(2, {parse_expr("x2", 2), integer(0)});
    const VectorField g(2, {integer(0), integer(1)});
    CHECK(equal(ad_iter(f, g, 0)[0], g[0]));
    CHECK(equal(ad_iter(f, g, 0)[1], g[1]));
    const VectorField ad1 = ad_iter(f, g, 1);
    const VectorField br = lie_bracket(f, g);
    CHECK(equal(ad1[0], br[0]));
    CHECK(equal(ad1[1], br[1]));
    // prefix consistency: ad^3 = [f, ad^2]
    const VectorField f2 = random_safe_field(904, 1, 3, 3);
    const VectorField g2 = random_safe_field(904, 2, 3, 3);
    const VectorField lhs = ad_iter(f2, g2, 3);
    const VectorField rhs = lie_bracket(f2, ad_iter(f2, g2, 2));
    for (int c = 0; c < 3; ++c) CHECK(equal(lhs[c], rhs[c]));
}

TEST_CASE("equivalence of the two decoupling condition sets") {
    const DomainSampler box = DomainSampler::unit_box(3, 23);
    const VectorField f(3, {parse_expr("x2", 3), parse_expr("x3", 3), parse_expr("sin(x1)", 3)});
    const VectorField g(3, {integer(0), integer(0), integer(1)});
    const Expr h = variable(1);
    for (int i = 0; i <= 1; ++i) {
        const Expr route_a = lie_derivative(g, multi_lie(f, h, i));
        const Expr route_b = lie_derivative(ad_iter(f, g, i), h);
        CHECK(equivalent(route_a, integer(0), box, 1e-6));
        CHECK(equivalent(route_b, integer(0), box, 1e-6));
    }
    // the first nonzero index agrees up to the stated sign bookkeeping
    const Expr a2 = lie_derivative(g, multi_lie(f, h, 2));
    const Expr b2 = lie_derivative(ad_iter(f, g, 2), h);
    CHECK(equivalent(a2, b2, box, 1e-6));
}

TEST_CASE("distribution rank") {
    const Distribution d(
        {VectorField(2, {integer(1), integer(0)}), VectorField(2, {integer(0), integer(1)})});
    CHECK(distribution_rank(d, Point{{0.4, -0.2}, {}}, 1e-8) == 2);

    // crane: {g, [f,g]} has full rank at (0.3, 0.1)
    const Distribution crane({crane_g(), lie_bracket(crane_f(), crane_g())});
    CHECK(distribution_rank(crane, Point{{0.3, 0.1}, kCraneParams}, 1e-8) == 2);

    const Distribution dependent({VectorField(2, {parse_expr("x1", 2), integer(0)}),
                                  VectorField(2, {parse_expr("2*x1", 2), integer(0)})});
    CHECK(distribution_rank(dependent, Point{{1.0, 0.0}, {}}, 1e-8) == 1);
}

TEST_CASE("involutivity") {
    const DomainSampler box3 = DomainSampler::unit_box(3, 31);
    // single generator: always involutive
    CHECK(involutive(Distribution({crane_g()}), DomainSampler::unit_box(2, 3), 1e-8, kCraneParams));
    // constant fields commute
    CHECK(involutive(Distribution({VectorField(3, {integer(1), integer(0), integer(0)}),
                                   VectorField(3, {integer(0), integer(1), integer(0)})}),
                     box3, 1e-8));
    // contact-structure pair: the bracket leaves the span
    CHECK_FALSE(
        involutive(Distribution({VectorField(3, {integer(1), integer(0), parse_expr("-x2", 3)}),
                                 VectorField(3, {integer(0), integer(1), parse_expr("x1", 3)})}),
                   box3, 1e-8));
    // dependent generators raise
    CHECK_THROWS_AS(involutive(Distribution({VectorField(2, {integer(1), integer(0)}),
                                             VectorField(2, {integer(2), integer(0)})}),
                               DomainSampler::unit_box(2, 3), 1e-8),
                    SingularDistribution);
}

TEST_CASE("second_order_apply") {
    const VectorField f(2, {parse_expr("x2", 2), parse_expr("-x1", 2)});
    const Expr h = parse_expr("x1^2*x2 + sin(x2)", 2);
    // zero matrix degenerates to the Lie derivative, structurally
    CHECK(equal(second_order_apply(f, MatrixField::zero(2, 2), h), lie_derivative(f, h)));

    // 1D: f = 0, F = (1/2) x1^2, h = x1^2 -> x1^2
    MatrixField F(1, 1);
    F.at(0, 0) = simplify(constant(Rational(1, 2)) * parse_expr("x1^2", 1));
    const Expr r = second_order_apply(VectorField(1, {integer(0)}), F, parse_expr("x1^2", 1));
    CHECK(equal(r, simplify(parse_expr("x1^2", 1))));

    // with sigma = 0 the iterated operator chain is the iterated Lie derivative
    const VectorField g(2, {integer(0), integer(1)});
    const Expr chain2 = second_order_apply(g, MatrixField::zero(2, 2),
                                           second_order_apply(f, MatrixField::zero(2, 2), h));
    const Expr lie2 = lie_derivative(g, lie_derivative(f, h));
    CHECK(equal(simplify(chain2), simplify(lie2)));

    CHECK_THROWS_AS(second_order_apply(f, MatrixField::zero(1, 2), h), DimensionMismatch);
}

TEST_CASE("second-order commutator residual is genuinely third order") {
    // constant coefficient matrices: everything vanishes
    MatrixField Fc(2, 2), Gc(2, 2);
    Fc.at(0, 0) = integer(2);
    Gc.at(1, 1) = integer(3);
    CHECK(second_order_commutator_residual(Fc, Gc, parse_expr("x1^3*x2^2", 2)).is_zero());

    // F = G: antisymmetric, so zero
    MatrixField Fv(2, 2);
    Fv.at(0, 0) = parse_expr("x2", 2);
    CHECK(second_order_commutator_residual(Fv, Fv, parse_expr("x1^2*x2^2", 2)).is_zero());

    // hand-expanded oracle: F = diag(x2, 0), G = diag(0, x1), h = x1*x2^2;
    // only (i,j) = (1,1) contributes: 2*x2 * dG_22/dx1 * d3h/dx1 dx2 dx2 = 4*x2
    MatrixField Gv(2, 2);
    Gv.at(1, 1) = parse_expr("x1", 2);
    const Expr res = second_order_commutator_residual(Fv, Gv, parse_expr("x1*x2^2", 2));
    const DomainSampler box = DomainSampler::unit_box(2, 13);
    CHECK(equivalent(res, parse_expr("4*x2", 2), box, 1e-12));

    // consistency with the full operator commutator minus its low-order parts
    const Expr h = parse_expr("x1^2*x2^2", 2);
    const VectorField zero2 = VectorField::zero(2);
    const Expr full = simplify(second_order_apply(zero2, Fv, second_order_apply(zero2, Gv, h)) -
                               second_order_apply(zero2, Gv, second_order_apply(zero2, Fv, h)));
    std::vector<Expr> low;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j)
            for (int k = 0; k < 2; ++k)
                for (int l = 0; l < 2; ++l) {
                    const Expr d2G = differentiate(differentiate(Gv.at(k, l), i + 1), j + 1);
                    const Expr d2F = differentiate(differentiate(Fv.at(k, l), i + 1), j + 1);
                    const Expr d2h = differentiate(differentiate(h, k + 1), l + 1);
                    low.push_back((Fv.at(i, j) * d2G - Gv.at(i, j) * d2F) * d2h);
                }
    const Expr expected_third = simplify(full - add_all(std::move(low)));
    const Expr residual = second_order_commutator_residual(Fv, Gv, h);
    CHECK(equivalent(residual, expected_third, box, 1e-10));
}

TEST_CASE("bracket pushforward invariance") {
    for (int id = 0; id < 8; ++id) {
        const int dim = 2;
        const VectorField f = random_safe_field(905, static_cast<std::uint64_t>(3 * id), dim, 3);
        const VectorField g = random_safe_field(905, static_cast<std::uint64_t>(3 * id + 1), dim, 3);
        const Diffeo T = random_invertible_diffeo(905, static_cast<std::uint64_t>(id), dim);

        const VectorField lhs = pushforward(T, lie_bracket(f, g));
        const VectorField rhs = lie_bracket(pushforward(T, f), pushforward(T, g));
        const DomainSampler xbox = DomainSampler::unit_box(dim, 600 + id);
        for (int k = 0; k < 20; ++k) {
            Point px{xbox.sample(static_cast<std::uint64_t>(k)), {}};
            Point pz{T.apply(px.coords, {}), {}};
            for (int c = 0; c < dim; ++c) {
                const double a = evaluate(lhs[c], pz);
                const double b = evaluate(rhs[c], pz);
                CHECK(std::abs(a - b) <= 1e-6 * (1.0 + std::max(std::abs(a), std::abs(b))));
            }
        }
    }
}
