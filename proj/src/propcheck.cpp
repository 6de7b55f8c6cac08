#include "stoflin/propcheck.hpp"
#include <limits>

#include <cmath>

namespace stoflin {

namespace {

struct Draw {
    CounterRng rng;
    std::uint64_t id;
    std::uint64_t counter = 0;

    Draw(std::uint64_t seed, std::uint64_t id_) : rng(seed), id(id_) {}

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * rng.uniform01(id, counter++, 0x5eed);
    }
    int pick(int n) { return static_cast<int>(uniform(0.0, double(n))) % n; }
};

Expr random_expr_rec(Draw& d, int dim, int depth) {
    if (depth <= 0 || d.uniform(0, 1) < 0.25) {
        const int choice = d.pick(3);
        if (choice == 0) return variable(1 + d.pick(dim));
        if (choice == 1) return constant(std::round(d.uniform(-1.5, 1.5) * 100.0) / 100.0);
        return integer(d.pick(3));
    }
    switch (d.pick(4)) {
        case 0: return random_expr_rec(d, dim, depth - 1) + random_expr_rec(d, dim, depth - 1);
        case 1: return random_expr_rec(d, dim, depth - 1) * random_expr_rec(d, dim, depth - 1);
        case 2: return sin(random_expr_rec(d, dim, depth - 1));
        default: return cos(random_expr_rec(d, dim, depth - 1));
    }
}

// scalar invertible primitives phi(u) with phi(0) = 0 and symbolic inverse
struct Primitive {
    Expr fwd;  // in terms of placeholder variable u = x1
    Expr inv;
};

Primitive random_primitive(Draw& d) {
    const double a_mag = d.uniform(0.6, 1.5);
    const double a = d.uniform(0, 1) < 0.5 ? a_mag : -a_mag;
    const Expr u = variable(1);
    switch (d.pick(3)) {
        case 0:
            return {constant(a) * u, u / constant(a)};
        case 1:
            // exp(a u) - 1  <->  ln(1 + z)/a
            return {exp(constant(a) * u) - integer(1), ln(integer(1) + u) / constant(a)};
        default: {
            // ln(a u + sqrt(1 + (a u)^2))  <->  (exp(z) - exp(-z)) / (2 a)
            const Expr au = constant(a) * u;
            return {ln(au + sqrt(integer(1) + au * au)),
                    (exp(u) - exp(-u)) / (integer(2) * constant(a))};
        }
    }
}

Expr apply_univariate(const Expr& tmpl, const Expr& arg) {
    const std::vector<Expr> repl{arg};
    return substitute_vars(tmpl, repl);
}

Expr random_shear(Draw& d, int prev_dims) {
    if (prev_dims == 0 || d.uniform(0, 1) < 0.3) return integer(0);
    const double c = std::round(d.uniform(-0.7, 0.7) * 100.0) / 100.0;
    const Expr xj = variable(1 + d.pick(prev_dims));
    switch (d.pick(3)) {
        case 0: return constant(c) * sin(xj);
        case 1: return constant(c) * xj * xj;
        default: return constant(c) * xj;
    }
}

}  // namespace

Expr random_safe_expr(std::uint64_t seed, std::uint64_t id, int dim, int depth) {
    Draw d(seed, id);
    return simplify(random_expr_rec(d, dim, depth));
}

VectorField random_safe_field(std::uint64_t seed, std::uint64_t id, int dim, int depth) {
    std::vector<Expr> comps;
    comps.reserve(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; ++i)
        comps.push_back(random_safe_expr(seed, id * 131 + static_cast<std::uint64_t>(i), dim, depth));
    return VectorField(dim, std::move(comps));
}

Diffeo random_invertible_diffeo(std::uint64_t seed, std::uint64_t id, int dim) {
    Draw d(seed, id ^ 0xd1ffe0ull);
    std::vector<Expr> fwd(static_cast<std::size_t>(dim));
    std::vector<Expr> inv(static_cast<std::size_t>(dim));
    for (int i = 0; i < dim; ++i) {
        const Primitive prim = random_primitive(d);
        const Expr shear = random_shear(d, i);
        fwd[static_cast<std::size_t>(i)] =
            simplify(apply_univariate(prim.fwd, variable(i + 1)) + shear);
        // x_i = phi^{-1}(z_i - shear(x_1..x_{i-1})), previous x already in z
        Expr arg = variable(i + 1) - substitute_vars(shear, std::span<const Expr>(inv.data(),
                                                                                  static_cast<std::size_t>(i)));
        inv[static_cast<std::size_t>(i)] = simplify(apply_univariate(prim.inv, simplify(arg)));
    }
    return Diffeo(dim, std::move(fwd), std::move(inv));
}

StochasticSystem random_ito_system(std::uint64_t seed, std::uint64_t id, int dim, int depth) {
    StochasticSystem s;
    s.dim = dim;
    s.f = random_safe_field(seed, id * 1009 + 1, dim, depth);
    s.g = random_safe_field(seed, id * 1009 + 2, dim, depth);
    s.sigma = MatrixField::from_column(random_safe_field(seed, id * 1009 + 3, dim, depth));
    s.convention = Convention::Ito;
    s.x0.assign(static_cast<std::size_t>(dim), 0.0);
    s.sampler = DomainSampler::unit_box(dim, seed ^ (id * 77));
    return s;
}

namespace {

double drift_route_residual(const StochasticSystem& ito_route, const StochasticSystem& corr_route,
                            const StochasticSystem& src, const Diffeo& T, int points) {
    double worst = 0.0;
    Point px{std::vector<double>(static_cast<std::size_t>(src.dim), 0.0), src.params};
    Point pz = px;
    int checked = 0;
    for (int i = 0; checked < points && i < points * 2; ++i) {
        px.coords = src.sampler.sample(static_cast<std::uint64_t>(i));
        try {
            pz.coords = T.apply(px.coords, src.params);
            for (int c = 0; c < src.dim; ++c) {
                const double va = evaluate(ito_route.f[c], pz);
                const double vb = evaluate(corr_route.f[c], pz);
                worst = std::max(worst,
                                 std::abs(va - vb) / (1.0 + std::max(std::abs(va), std::abs(vb))));
            }
            ++checked;
        } catch (const DomainError&) {
        }
    }
    if (checked < points) throw TooManyDomainFailures(points - checked, points);
    return worst;
}

}  // namespace

PropertyReport verify_corr_diagram_on(const StochasticSystem& s, const Diffeo& T, int points,
                                      double tol) {
    PropertyReport rep;
    rep.theorem = "corr-diagram";
    const StochasticSystem direct = coord_transform(s, T, false);
    const StochasticSystem strat = coord_transform(apply_correcting(s, CorrDirection::Forward), T, false);
    const StochasticSystem routed = apply_correcting(strat, CorrDirection::Inverse);

    // control and dispersion columns transform contravariantly on both routes
    for (int c = 0; c < s.dim; ++c) {
        if (!equal(direct.g[c], routed.g[c]) ||
            !equal(direct.sigma.at(c, 0), routed.sigma.at(c, 0))) {
            rep.max_residual = std::numeric_limits<double>::infinity();
            rep.cases = 1;
            return rep;
        }
    }

    rep.max_residual = drift_route_residual(direct, routed, s, T, points);
    rep.cases = 1;
    rep.passed = rep.max_residual <= tol;
    return rep;
}

PropertyReport verify_corr_diagram(const PropOptions& opts) {
    PropertyReport rep;
    rep.theorem = "corr-diagram";
    rep.passed = true;
    for (int c = 0; c < opts.cases; ++c) {
        const int dim = 1 + static_cast<int>(mix_bits(opts.seed ^ (c * 7919ull)) % 3);
        const StochasticSystem s =
            random_ito_system(opts.seed, static_cast<std::uint64_t>(c), dim, 3);
        const Diffeo T = random_invertible_diffeo(opts.seed, static_cast<std::uint64_t>(c), dim);
        const PropertyReport one = verify_corr_diagram_on(s, T, opts.points, opts.tol);
        rep.max_residual = std::max(rep.max_residual, one.max_residual);
        rep.passed = rep.passed && one.passed;
        ++rep.cases;
    }
    return rep;
}

PropertyReport verify_feedback_diagram(const PropOptions& opts) {
    PropertyReport rep;
    rep.theorem = "feedback-diagram";
    rep.passed = true;
    for (int c = 0; c < opts.cases; ++c) {
        const int dim = 1 + static_cast<int>(mix_bits(opts.seed ^ (c * 104729ull)) % 3);
        const StochasticSystem s =
            random_ito_system(opts.seed, static_cast<std::uint64_t>(c) + 1000, dim, 3);
        const Diffeo T = random_invertible_diffeo(opts.seed, static_cast<std::uint64_t>(c) + 1000, dim);
        Feedback fb;
        fb.alpha = simplify(constant(0.4) * variable(1) +
                            random_safe_expr(opts.seed, c + 2000, dim, 2) * variable(1));
        fb.beta = simplify(integer(1) + constant(0.3) * sin(variable(dim)));

        const StochasticSystem routeA = feedback_transform(coord_transform(s, T, false), fb);
        const StochasticSystem strat =
            coord_transform(apply_correcting(s, CorrDirection::Forward), T, false);
        StochasticSystem strat_fb = strat;
        {
            // the feedback acts identically on the Stratonovich member
            std::vector<Expr> drift, control;
            for (int i = 0; i < s.dim; ++i) {
                drift.push_back(simplify(strat.f[i] + strat.g[i] * fb.alpha));
                control.push_back(simplify(strat.g[i] * fb.beta));
            }
            strat_fb.f = VectorField(s.dim, std::move(drift));
            strat_fb.g = VectorField(s.dim, std::move(control));
        }
        const StochasticSystem routeB = apply_correcting(strat_fb, CorrDirection::Inverse);
        const double res = drift_route_residual(routeA, routeB, s, T, opts.points);
        rep.max_residual = std::max(rep.max_residual, res);
        rep.passed = rep.passed && res <= opts.tol;
        ++rep.cases;
    }
    return rep;
}

PropertyReport verify_eq140_on(const StochasticSystem& s, const Diffeo& T, int points, double tol) {
    PropertyReport rep;
    rep.theorem = "eq140";
    const VectorField sigma = s.sigma_col(0);
    const VectorField corr = correcting_term(s.sigma);
    const VectorField pst = ito_term(s.sigma, T);
    double worst = 0.0;
    for (int i = 0; i < T.dim; ++i) {
        const Expr& Ti = T.forward[static_cast<std::size_t>(i)];
        const Expr lhs = simplify(constant(Rational(1, 2)) *
                                  lie_derivative(sigma, lie_derivative(sigma, Ti)));
        const Expr rhs = simplify(pst[i] - lie_derivative(corr, Ti));
        EquivalenceOptions opts;
        opts.points = points;
        worst = std::max(worst, sampled_deviation(lhs, rhs, s.sampler, s.params, opts).max_rel);
    }
    rep.max_residual = worst;
    rep.cases = 1;
    rep.passed = worst <= tol;
    return rep;
}

PropertyReport verify_eq140(const PropOptions& opts) {
    PropertyReport rep;
    rep.theorem = "eq140";
    rep.passed = true;
    for (int c = 0; c < opts.cases; ++c) {
        const int dim = 1 + static_cast<int>(mix_bits(opts.seed ^ (c * 271ull)) % 3);
        const StochasticSystem s =
            random_ito_system(opts.seed, static_cast<std::uint64_t>(c) + 3000, dim, 3);
        // any smooth T works here; no inverse is needed for the identity
        std::vector<Expr> fwd;
        for (int i = 0; i < dim; ++i)
            fwd.push_back(random_safe_expr(opts.seed, static_cast<std::uint64_t>(c) * 31 + i + 4000,
                                           dim, 3));
        const Diffeo T(dim, std::move(fwd));
        const PropertyReport one = verify_eq140_on(s, T, opts.points, opts.tol);
        rep.max_residual = std::max(rep.max_residual, one.max_residual);
        rep.passed = rep.passed && one.passed;
        ++rep.cases;
    }
    return rep;
}

PropertyReport verify_eq215_on(const StochasticSystem& s, const Diffeo& T, int points, double tol) {
    PropertyReport rep;
    rep.theorem = "eq215";
    if (!T.has_inverse()) throw PreconditionError("eq215 needs an invertible transform");
    const VectorField pst = ito_term(s.sigma, T);                       // in x
    const VectorField corr_push = pushforward_in_source(T, correcting_term(s.sigma));  // in x
    MatrixField sigma_z(s.dim, s.noise);
    for (int j = 0; j < s.noise; ++j) {
        const VectorField col = pushforward(T, s.sigma.col(j));
        for (int r = 0; r < s.dim; ++r) sigma_z.at(r, j) = col[r];
    }
    const VectorField corr_z = correcting_term(sigma_z);  // in z

    double worst = 0.0;
    Point px{std::vector<double>(static_cast<std::size_t>(s.dim), 0.0), s.params};
    Point pz = px;
    int checked = 0;
    for (int i = 0; checked < points && i < points * 2; ++i) {
        px.coords = s.sampler.sample(static_cast<std::uint64_t>(i));
        try {
            pz.coords = T.apply(px.coords, s.params);
            for (int c = 0; c < s.dim; ++c) {
                const double lhs = evaluate(pst[c], px);
                const double rhs = evaluate(corr_push[c], px) - evaluate(corr_z[c], pz);
                worst = std::max(worst, std::abs(lhs - rhs) /
                                            (1.0 + std::max(std::abs(lhs), std::abs(rhs))));
            }
            ++checked;
        } catch (const DomainError&) {
        }
    }
    if (checked < points) throw TooManyDomainFailures(points - checked, points);
    rep.max_residual = worst;
    rep.cases = 1;
    rep.passed = worst <= tol;
    return rep;
}

PropertyReport verify_eq215(const PropOptions& opts) {
    PropertyReport rep;
    rep.theorem = "eq215";
    rep.passed = true;
    for (int c = 0; c < opts.cases; ++c) {
        const int dim = 1 + static_cast<int>(mix_bits(opts.seed ^ (c * 113ull)) % 3);
        const StochasticSystem s =
            random_ito_system(opts.seed, static_cast<std::uint64_t>(c) + 5000, dim, 3);
        const Diffeo T = random_invertible_diffeo(opts.seed, static_cast<std::uint64_t>(c) + 5000, dim);
        const PropertyReport one = verify_eq215_on(s, T, opts.points, opts.tol);
        rep.max_residual = std::max(rep.max_residual, one.max_residual);
        rep.passed = rep.passed && one.passed;
        ++rep.cases;
    }
    return rep;
}

PropertyReport verify_composition_on(const StochasticSystem& s, const Diffeo& R, const Diffeo& S,
                                     int points, double tol) {
    PropertyReport rep;
    rep.theorem = "composition";
    const StochasticSystem seq = coord_transform(coord_transform(s, R, false), S, false);
    const StochasticSystem joint = coord_transform(s, compose_diffeos(R, S), false);

    double worst = 0.0;
    Point px{std::vector<double>(static_cast<std::size_t>(s.dim), 0.0), s.params};
    Point pz = px;
    int checked = 0;
    for (int i = 0; checked < points && i < points * 2; ++i) {
        px.coords = s.sampler.sample(static_cast<std::uint64_t>(i));
        try {
            pz.coords = S.apply(R.apply(px.coords, s.params), s.params);
            for (int c = 0; c < s.dim; ++c) {
                const double va = evaluate(seq.f[c], pz);
                const double vb = evaluate(joint.f[c], pz);
                worst = std::max(worst, std::abs(va - vb) /
                                            (1.0 + std::max(std::abs(va), std::abs(vb))));
                const double ga = evaluate(seq.g[c], pz);
                const double gb = evaluate(joint.g[c], pz);
                worst = std::max(worst,
                                 std::abs(ga - gb) / (1.0 + std::max(std::abs(ga), std::abs(gb))));
                const double sa = evaluate(seq.sigma.at(c, 0), pz);
                const double sb = evaluate(joint.sigma.at(c, 0), pz);
                worst = std::max(worst,
                                 std::abs(sa - sb) / (1.0 + std::max(std::abs(sa), std::abs(sb))));
            }
            ++checked;
        } catch (const DomainError&) {
        }
    }
    if (checked < points) throw TooManyDomainFailures(points - checked, points);
    rep.max_residual = worst;
    rep.cases = 1;
    rep.passed = worst <= tol;
    return rep;
}

PropertyReport verify_composition(const PropOptions& opts) {
    PropertyReport rep;
    rep.theorem = "composition";
    rep.passed = true;
    for (int c = 0; c < opts.cases; ++c) {
        const StochasticSystem s =
            random_ito_system(opts.seed, static_cast<std::uint64_t>(c) + 6000, 1, 3);
        const Diffeo R = random_invertible_diffeo(opts.seed, static_cast<std::uint64_t>(c) * 2 + 6000, 1);
        const Diffeo S = random_invertible_diffeo(opts.seed, static_cast<std::uint64_t>(c) * 2 + 6001, 1);
        const PropertyReport one = verify_composition_on(s, R, S, opts.points, opts.tol);
        rep.max_residual = std::max(rep.max_residual, one.max_residual);
        rep.passed = rep.passed && one.passed;
        ++rep.cases;
    }
    return rep;
}

PropertyReport verify_theorem(const std::string& name, const StochasticSystem& s,
                              const std::optional<Diffeo>& doc_transform, const PropOptions& opts) {
    const auto diffeo_for = [&](std::uint64_t salt, bool need_inverse) {
        if (doc_transform && (!need_inverse || doc_transform->has_inverse())) return *doc_transform;
        return random_invertible_diffeo(opts.seed, salt, s.dim);
    };
    if (name == "corr-diagram") {
        PropertyReport rep;
        rep.theorem = name;
        rep.passed = true;
        for (int c = 0; c < opts.cases; ++c) {
            const PropertyReport one = verify_corr_diagram_on(
                s, diffeo_for(static_cast<std::uint64_t>(c), true), opts.points, opts.tol);
            rep.max_residual = std::max(rep.max_residual, one.max_residual);
            rep.passed = rep.passed && one.passed;
            ++rep.cases;
        }
        return rep;
    }
    if (name == "eq140") {
        PropertyReport rep;
        rep.theorem = name;
        rep.passed = true;
        for (int c = 0; c < opts.cases; ++c) {
            const PropertyReport one =
                verify_eq140_on(s, diffeo_for(static_cast<std::uint64_t>(c), false), opts.points,
                                opts.tol);
            rep.max_residual = std::max(rep.max_residual, one.max_residual);
            rep.passed = rep.passed && one.passed;
            ++rep.cases;
        }
        return rep;
    }
    if (name == "eq215") {
        PropertyReport rep;
        rep.theorem = name;
        rep.passed = true;
        for (int c = 0; c < opts.cases; ++c) {
            const PropertyReport one = verify_eq215_on(
                s, diffeo_for(static_cast<std::uint64_t>(c), true), opts.points, opts.tol);
            rep.max_residual = std::max(rep.max_residual, one.max_residual);
            rep.passed = rep.passed && one.passed;
            ++rep.cases;
        }
        return rep;
    }
    if (name == "composition") {
        PropertyReport rep;
        rep.theorem = name;
        rep.passed = true;
        for (int c = 0; c < opts.cases; ++c) {
            const Diffeo R =
                random_invertible_diffeo(opts.seed, static_cast<std::uint64_t>(c) * 2 + 1, s.dim);
            const Diffeo S =
                random_invertible_diffeo(opts.seed, static_cast<std::uint64_t>(c) * 2 + 2, s.dim);
            const PropertyReport one = verify_composition_on(s, R, S, opts.points, opts.tol);
            rep.max_residual = std::max(rep.max_residual, one.max_residual);
            rep.passed = rep.passed && one.passed;
            ++rep.cases;
        }
        return rep;
    }
    throw std::invalid_argument("unknown theorem: " + name);
}

}  // namespace stoflin
