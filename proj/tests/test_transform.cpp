#include <doctest.h>

#include <cmath>

#include "stoflin/propcheck.hpp"
#include "stoflin/system.hpp"

using namespace stoflin;

namespace {

StochasticSystem system_1d(const char* f, const char* g, const char* sigma, Convention conv) {
    StochasticSystem s;
    s.dim = 1;
    s.f = VectorField(1, {parse_expr(f, 1)});
    s.g = VectorField(1, {parse_expr(g, 1)});
    s.sigma = MatrixField::from_column(VectorField(1, {parse_expr(sigma, 1)}));
    s.convention = conv;
    s.x0 = {0.0};
    s.sampler = DomainSampler({Interval{0.2, 2.0}}, 8);
    return s;
}

}  // namespace

TEST_CASE("ito term") {
    // linear T or zero sigma: vanishes
    const Diffeo lin(2, {parse_expr("2*x1 + x2", 2), parse_expr("x2", 2)});
    const MatrixField sig =
        MatrixField::from_column(VectorField(2, {parse_expr("sin(x1)", 2), parse_expr("x2", 2)}));
    const VectorField p1 = ito_term(sig, lin);
    CHECK(p1[0].is_zero());
    CHECK(p1[1].is_zero());

    const VectorField p2 = ito_term(MatrixField::zero(2, 1), Diffeo(2, {parse_expr("sin(x1)*x2", 2),
                                                                        parse_expr("exp(x2)", 2)}));
    CHECK(p2[0].is_zero());
    CHECK(p2[1].is_zero());

    // 1D: sigma = x1, T = ln(x1) -> -1/2
    const VectorField p3 =
        ito_term(VectorField(1, {variable(1)}), Diffeo(1, {parse_expr("ln(x1)", 1)}));
    CHECK(equal(p3[0], constant(Rational(-1, 2))));
}

TEST_CASE("correcting term") {
    // constant dispersion
    CHECK(correcting_term(VectorField(2, {integer(3), integer(-1)}))[0].is_zero());
    CHECK(correcting_term(VectorField(2, {integer(3), integer(-1)}))[1].is_zero());

    // the crane dispersion has zero correcting term
    const VectorField crane_sigma(2, {integer(0), parse_expr("F*cos(x1)/(mL*l)", 2)});
    const VectorField c = correcting_term(crane_sigma);
    CHECK(c[0].is_zero());
    CHECK(c[1].is_zero());

    // 1D sigma = x1 -> -x1/2
    const VectorField c1 = correcting_term(VectorField(1, {variable(1)}));
    CHECK(equal(c1[0], simplify(parse_expr("-1/2*x1", 1))));
}

TEST_CASE("apply_correcting: direction, tags, and bijection") {
    StochasticSystem s = system_1d("0", "1", "x1", Convention::Ito);
    const StochasticSystem strat = apply_correcting(s, CorrDirection::Forward);
    CHECK(strat.convention == Convention::Stratonovich);
    CHECK(equal(strat.f[0], simplify(parse_expr("-1/2*x1", 1))));

    // constant sigma: drift unchanged, only the tag flips
    StochasticSystem cs = system_1d("sin(x1)", "1", "2", Convention::Ito);
    const StochasticSystem cstrat = apply_correcting(cs, CorrDirection::Forward);
    CHECK(equal(cstrat.f[0], simplify(parse_expr("sin(x1)", 1))));

    // inverse of forward restores the drift structurally
    const StochasticSystem back = apply_correcting(strat, CorrDirection::Inverse);
    CHECK(back.convention == Convention::Ito);
    CHECK(equal(back.f[0], simplify(s.f[0])));

    CHECK_THROWS_AS(apply_correcting(strat, CorrDirection::Forward), PreconditionError);
    CHECK_THROWS_AS(apply_correcting(s, CorrDirection::Inverse), PreconditionError);
}

TEST_CASE("coord_transform: identity, 1D log example") {
    StochasticSystem s = system_1d("0", "1", "x1", Convention::Ito);
    const StochasticSystem same = coord_transform(s, Diffeo::identity(1));
    CHECK(equal(same.f[0], simplify(s.f[0])));
    CHECK(equal(same.g[0], simplify(s.g[0])));

    // dx = x dw under z = ln(x): dz = -1/2 dt + dw
    const Diffeo logT(1, {parse_expr("ln(x1)", 1)},
                      std::optional<std::vector<Expr>>({parse_expr("exp(x1)", 1)}));
    StochasticSystem off = s;
    off.x0 = {1.0};  // ln maps the equilibrium to 0
    const StochasticSystem z = coord_transform(off, logT);
    CHECK(equal(z.f[0], constant(Rational(-1, 2))));
    CHECK(equal(z.sigma.at(0, 0), integer(1)));

    // missing inverse
    CHECK_THROWS_AS(coord_transform(off, Diffeo(1, {parse_expr("ln(x1)", 1)})), PreconditionError);
    // non-equilibrium-preserving flag (x0 = 0 is outside ln's domain too)
    CHECK_THROWS_AS(coord_transform(s, logT), PreconditionError);
    StochasticSystem shifted = s;
    shifted.x0 = {2.0};
    CHECK_THROWS_AS(coord_transform(shifted, logT), PreconditionError);
    CHECK_NOTHROW(coord_transform(shifted, logT, false));
}

TEST_CASE("crane transform makes the dispersion constant") {
    // the pushforward of sigma through [lambda, L_f lambda] is [0, F/(mL l)];
    // checked in source coordinates (the half-angle log form has no symbolic
    // inverse in this grammar)
    const ParamMap params{{"g", 9.81}, {"l", 1.0}, {"mC", 10.0}, {"mL", 1.0}, {"F", 1.0}};
    const Expr lambda =
        parse_expr("ln(cos(1/2*x1)+sin(1/2*x1)) - ln(cos(1/2*x1)-sin(1/2*x1))", 2);
    const VectorField f(
        2, {parse_expr("x2", 2),
            parse_expr("-sin(x1)*(g*(mL+mC)+l*mL*x2*cos(x1))/(l*(mC+mL-mL*cos(x1)^2))", 2)});
    const VectorField sigma(2, {integer(0), parse_expr("F*cos(x1)/(mL*l)", 2)});
    const Expr t2 = lie_derivative(f, lambda);
    const Diffeo T(2, {lambda, t2});
    const VectorField pushed = pushforward_in_source(T, sigma);
    const DomainSampler box = DomainSampler::unit_box(2, 3);
    CHECK(equivalent(pushed[0], integer(0), box, 1e-9, params));
    CHECK(equivalent(pushed[1], parse_expr("F/(mL*l)", 2), box, 1e-9, params));
}

TEST_CASE("feedback transform") {
    StochasticSystem s = system_1d("sin(x1)", "1 + 1/2*x1^2", "x1", Convention::Ito);
    s.sampler = DomainSampler({Interval{-1.0, 1.0}}, 4);

    Feedback id;
    const StochasticSystem same = feedback_transform(s, id);
    CHECK(equal(same.f[0], simplify(s.f[0])));
    CHECK(equal(same.g[0], simplify(s.g[0])));

    Feedback fb;
    fb.alpha = parse_expr("-sin(x1)*x1", 1);
    fb.beta = parse_expr("1 + 1/2*x1^2", 1);
    const StochasticSystem closed = feedback_transform(s, fb);
    const DomainSampler box = s.sampler;
    CHECK(equivalent(closed.f[0], simplify(s.f[0] + s.g[0] * fb.alpha), box, 1e-12));
    CHECK(equivalent(closed.g[0], simplify(s.g[0] * fb.beta), box, 1e-12));

    // inverse feedback restores the system up to sampling tolerance
    const StochasticSystem back = feedback_transform(closed, fb.inverse());
    CHECK(equivalent(back.f[0], s.f[0], box, 1e-10));
    CHECK(equivalent(back.g[0], s.g[0], box, 1e-10));

    // alpha must vanish at x0, beta must stay regular
    Feedback bad;
    bad.alpha = integer(1);
    CHECK_THROWS_AS(feedback_transform(s, bad), PreconditionError);
    Feedback singular;
    singular.beta = variable(1);  // vanishes inside the box
    CHECK_THROWS_AS(feedback_transform(s, singular), PreconditionError);
}

TEST_CASE("feedback and coordinate change can be interchanged") {
    // F_{a,b} o T equals T o F_{a',b'} with the coefficients rewritten in the
    // source coordinates: alpha' = alpha o T, beta' = beta o T.
    const StochasticSystem s = random_ito_system(906, 4, 2, 3);
    const Diffeo T = random_invertible_diffeo(906, 4, 2);
    Feedback fb;
    fb.alpha = simplify(constant(0.4) * variable(1) + constant(0.2) * sin(variable(2)) * variable(1));
    fb.beta = simplify(integer(1) + constant(0.25) * cos(variable(1)));

    const StochasticSystem route1 = feedback_transform(coord_transform(s, T, false), fb);
    Feedback fb_in_x;
    fb_in_x.alpha = simplify(substitute_vars(fb.alpha, T.forward));
    fb_in_x.beta = simplify(substitute_vars(fb.beta, T.forward));
    const StochasticSystem route2 = coord_transform(feedback_transform(s, fb_in_x), T, false);

    for (int c = 0; c < 2; ++c) {
        for (int k = 0; k < 40; ++k) {
            Point px{s.sampler.sample(static_cast<std::uint64_t>(k)), {}};
            Point pz{T.apply(px.coords, {}), {}};
            const double a = evaluate(route1.f[c], pz);
            const double b = evaluate(route2.f[c], pz);
            CHECK(std::abs(a - b) <= 1e-8 * (1.0 + std::max(std::abs(a), std::abs(b))));
            const double ga = evaluate(route1.g[c], pz);
            const double gb = evaluate(route2.g[c], pz);
            CHECK(std::abs(ga - gb) <= 1e-8 * (1.0 + std::max(std::abs(ga), std::abs(gb))));
        }
    }
}

TEST_CASE("compose_diffeos") {
    const Diffeo S = random_invertible_diffeo(907, 1, 2);
    const Diffeo composed = compose_diffeos(Diffeo::identity(2), S);
    const DomainSampler box = DomainSampler::unit_box(2, 55);
    for (int c = 0; c < 2; ++c)
        CHECK(equivalent(composed.forward[static_cast<std::size_t>(c)],
                         S.forward[static_cast<std::size_t>(c)], box, 1e-12));

    // numeric composition oracle on a fresh pair
    const Diffeo R = random_invertible_diffeo(907, 2, 2);
    const Diffeo SR = compose_diffeos(R, S);
    for (int k = 0; k < 30; ++k) {
        const auto x = box.sample(static_cast<std::uint64_t>(k));
        const auto direct = S.apply(R.apply(x, {}), {});
        const auto joint = SR.apply(x, {});
        for (int c = 0; c < 2; ++c)
            CHECK(std::abs(direct[static_cast<std::size_t>(c)] - joint[static_cast<std::size_t>(c)]) <=
                  1e-10 * (1.0 + std::abs(direct[static_cast<std::size_t>(c)])));
    }
    CHECK(SR.has_inverse());
    CHECK(SR.check_inverse(box, 1e-8));
}

TEST_CASE("pushforward") {
    const VectorField v(2, {parse_expr("sin(x1)", 2), parse_expr("x1*x2", 2)});
    const VectorField same = pushforward(Diffeo::identity(2), v);
    CHECK(equal(same[0], simplify(v[0])));
    CHECK(equal(same[1], simplify(v[1])));

    // linear map: A v(A^{-1} z)
    const Diffeo lin(2, {parse_expr("2*x1", 2), parse_expr("x2 + x1", 2)},
                     std::optional<std::vector<Expr>>(
                         {parse_expr("1/2*x1", 2), parse_expr("x2 - 1/2*x1", 2)}));
    const VectorField lv = pushforward(lin, v);
    const DomainSampler box = DomainSampler::unit_box(2, 66);
    CHECK(equivalent(lv[0], parse_expr("2*sin(1/2*x1)", 2), box, 1e-10));
    CHECK(equivalent(lv[1], parse_expr("sin(1/2*x1) + 1/2*x1*(x2 - 1/2*x1)", 2), box, 1e-10));

    CHECK_THROWS_AS(pushforward(Diffeo(2, lin.forward), v), PreconditionError);
}

TEST_CASE("correcting diagram commutes (sampled ensemble)") {
    PropOptions opts;
    opts.seed = 31;
    opts.cases = 12;
    opts.points = 100;
    opts.tol = 1e-9;
    const PropertyReport rep = verify_corr_diagram(opts);
    CHECK(rep.passed);
    CHECK(rep.max_residual <= 1e-9);
}

TEST_CASE("correcting diagram with feedback appended") {
    PropOptions opts;
    opts.seed = 32;
    opts.cases = 8;
    opts.points = 80;
    opts.tol = 1e-9;
    const PropertyReport rep = verify_feedback_diagram(opts);
    CHECK(rep.passed);
}

TEST_CASE("half L_sigma L_sigma identity") {
    PropOptions opts;
    opts.seed = 33;
    opts.cases = 25;
    opts.points = 64;
    opts.tol = 1e-10;
    const PropertyReport rep = verify_eq140(opts);
    CHECK(rep.passed);
    CHECK(rep.max_residual <= 1e-10);
}

TEST_CASE("second-order term equals the correcting-term defect") {
    PropOptions opts;
    opts.seed = 34;
    opts.cases = 15;
    opts.points = 64;
    opts.tol = 1e-8;
    const PropertyReport rep = verify_eq215(opts);
    CHECK(rep.passed);
}

TEST_CASE("composition of transformations is functorial") {
    PropOptions opts;
    opts.seed = 35;
    opts.cases = 10;
    opts.points = 80;
    opts.tol = 1e-9;
    const PropertyReport rep = verify_composition(opts);
    CHECK(rep.passed);
}

TEST_CASE("system validation and equilibrium checks") {
    StochasticSystem s = system_1d("x1", "1", "0", Convention::Deterministic);
    CHECK_NOTHROW(s.validate());
    s.sigma.at(0, 0) = parse_expr("x1", 1);
    CHECK_THROWS_AS(s.validate(), PreconditionError);

    StochasticSystem eq = system_1d("x1", "1", "x1", Convention::Ito);
    eq.x0 = {0.0};
    CHECK_NOTHROW(eq.require_equilibrium());
    eq.f = VectorField(1, {integer(1)});
    CHECK_THROWS_AS(eq.require_equilibrium(), PreconditionError);
}
