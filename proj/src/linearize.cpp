#include "stoflin/linearize.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "stoflin/integrate.hpp"

namespace stoflin {

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Det: return "det";
        case Variant::StratG: return "strat-g";
        case Variant::StratGsigma: return "strat-gsigma";
        case Variant::ItoGCommuting: return "ito-g-commuting";
        case Variant::ItoGsigma: return "ito-gsigma";
        default: return "sigma";
    }
}

Variant variant_from_name(const std::string& name) {
    if (name == "det") return Variant::Det;
    if (name == "strat-g") return Variant::StratG;
    if (name == "strat-gsigma") return Variant::StratGsigma;
    if (name == "ito-g-commuting") return Variant::ItoGCommuting;
    if (name == "ito-gsigma") return Variant::ItoGsigma;
    if (name == "sigma") return Variant::Sigma;
    throw std::invalid_argument("unknown variant: " + name);
}

namespace {

constexpr double kRankTol = 1e-8;  // relative SVD threshold for numeric ranks

int matrix_rank(const Eigen::MatrixXd& M) {
    if (M.size() == 0) return 0;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || sv(0) == 0.0) return 0;
    int rank = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv(i) > kRankTol * sv(0)) ++rank;
    return rank;
}

// max over sampled points of |e| / (1 + |e|); domain errors skipped
double sampled_abs_max(const Expr& e, const DomainSampler& sampler, const ParamMap& params) {
    return sampled_deviation(e, integer(0), sampler, params).max_rel;
}

double sampled_abs_min(const Expr& e, const DomainSampler& sampler, const ParamMap& params) {
    const EquivalenceOptions opts;
    const int budget = static_cast<int>(std::ceil(opts.points / (1.0 - opts.max_skip_fraction))) + 1;
    double lo = std::numeric_limits<double>::infinity();
    int checked = 0, skipped = 0;
    Point p;
    p.params = params;
    for (int draw = 0; draw < budget && checked < opts.points; ++draw) {
        p.coords = sampler.sample(static_cast<std::uint64_t>(draw));
        try {
            lo = std::min(lo, std::abs(evaluate(e, p)));
            ++checked;
        } catch (const DomainError&) {
            ++skipped;
        }
    }
    if (checked < opts.points) throw TooManyDomainFailures(skipped, checked + skipped);
    return lo;
}

VectorField corrected_drift(const StochasticSystem& s) {
    const VectorField corr = correcting_term(s.sigma);
    std::vector<Expr> comps;
    comps.reserve(static_cast<std::size_t>(s.dim));
    for (int i = 0; i < s.dim; ++i) comps.push_back(simplify(s.f[i] + corr[i]));
    return VectorField(s.dim, std::move(comps));
}

MatrixField half_sigma_outer(const StochasticSystem& s) {
    MatrixField F(s.dim, s.dim);
    const Rational half(1, 2);
    for (int i = 0; i < s.dim; ++i)
        for (int j = 0; j < s.dim; ++j) {
            std::vector<Expr> terms;
            for (int l = 0; l < s.noise; ++l) terms.push_back(s.sigma.at(i, l) * s.sigma.at(j, l));
            F.at(i, j) = simplify(constant(half) * add_all(std::move(terms)));
        }
    return F;
}

}  // namespace

LinearityReport verify_linear(const StochasticSystem& s, double tol) {
    const int n = s.dim;
    LinearityReport rep;
    rep.dim = n;
    Point p0{s.x0, s.params};

    // A from the drift Jacobian at x0
    Eigen::MatrixXd A(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) A(i, j) = evaluate(differentiate(s.f[i], j + 1), p0);
    rep.A.resize(static_cast<std::size_t>(n * n));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) rep.A[static_cast<std::size_t>(i * n + j)] = A(i, j);

    Eigen::MatrixXd B(n, 1), S(n, s.noise);
    for (int i = 0; i < n; ++i) B(i, 0) = evaluate(s.g[i], p0);
    for (int i = 0; i < n; ++i)
        for (int l = 0; l < s.noise; ++l) S(i, l) = evaluate(s.sigma.at(i, l), p0);
    rep.B.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) rep.B[static_cast<std::size_t>(i)] = B(i, 0);
    rep.S.resize(static_cast<std::size_t>(n * s.noise));
    for (int i = 0; i < n; ++i)
        for (int l = 0; l < s.noise; ++l) rep.S[static_cast<std::size_t>(i * s.noise + l)] = S(i, l);

    // sampled residuals against the fitted linear model
    double res_f = 0.0, res_g = 0.0, res_s = 0.0;
    for (int i = 0; i < n; ++i) {
        std::vector<Expr> ax_terms;
        for (int j = 0; j < n; ++j) ax_terms.push_back(constant(A(i, j)) * variable(j + 1));
        const Expr axi = add_all(std::move(ax_terms));
        res_f = std::max(res_f, sampled_deviation(s.f[i], axi, s.sampler, s.params).max_rel);
        res_g = std::max(res_g,
                         sampled_deviation(s.g[i], constant(B(i, 0)), s.sampler, s.params).max_rel);
        for (int l = 0; l < s.noise; ++l)
            res_s = std::max(res_s, sampled_deviation(s.sigma.at(i, l), constant(S(i, l)), s.sampler,
                                                      s.params)
                                        .max_rel);
    }
    rep.residuals["f_linear"] = res_f;
    rep.residuals["g_constant"] = res_g;
    rep.residuals["sigma_constant"] = res_s;
    rep.is_g_linear = res_f <= tol && res_g <= tol;
    rep.is_sigma_linear = res_f <= tol && res_s <= tol;
    rep.is_gsigma_linear = rep.is_g_linear && rep.is_sigma_linear;

    // controllability ranks
    Eigen::MatrixXd CB(n, n), CS(n, n * s.noise), CU(n, n + n * s.noise);
    Eigen::MatrixXd Ak = Eigen::MatrixXd::Identity(n, n);
    for (int k = 0; k < n; ++k) {
        CB.col(k) = Ak * B;
        CS.block(0, k * s.noise, n, s.noise) = Ak * S;
        Ak = A * Ak;
    }
    CU << CB, CS;
    rep.g_controllable = matrix_rank(CB) == n;
    rep.sigma_controllable = matrix_rank(CS) == n;
    rep.gsigma_controllable = matrix_rank(CU) == n;
    return rep;
}

SfbConditions check_det_sfb(const StochasticSystem& s, const DomainSampler& sampler, double tol) {
    const int n = s.dim;
    SfbConditions out;
    std::vector<VectorField> ads;
    ads.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) ads.push_back(ad_iter(s.f, s.g, i));

    Distribution full(ads);
    bool nonsingular = true;
    const EquivalenceOptions opts;
    const int budget = static_cast<int>(std::ceil(opts.points / (1.0 - opts.max_skip_fraction))) + 1;
    int checked = 0;
    for (int draw = 0; draw < budget && checked < opts.points && nonsingular; ++draw) {
        Point p{sampler.sample(static_cast<std::uint64_t>(draw)), s.params};
        try {
            if (distribution_rank(full, p, kRankTol) < n) nonsingular = false;
            ++checked;
        } catch (const DomainError&) {
        }
    }
    out.nonsingular = nonsingular && checked > 0;

    if (n == 1) {
        out.involutive = true;  // empty bracket set
        return out;
    }
    std::vector<VectorField> lower(ads.begin(), ads.end() - 1);
    try {
        out.involutive = involutive(Distribution(lower), sampler, tol, s.params);
    } catch (const SingularDistribution&) {
        out.involutive = false;
    }
    return out;
}

LinearizingTransformation chain_from_lambda(const StochasticSystem& s, const Expr& lambda_in,
                                            ChainKind kind, double tol) {
    const int n = s.dim;
    if (max_var_index(lambda_in) > n)
        throw DimensionMismatch("lambda references variables beyond the system dimension");

    // fix the additive gauge so that T(x0) = 0
    Expr lambda = lambda_in;
    {
        const Expr at_x0 = simplify(substitute_state(lambda_in, s.x0));
        if (!at_x0.is_zero()) lambda = simplify(lambda_in - at_x0);
    }

    const VectorField sigma = s.sigma_col(0);
    const VectorField fbar = kind == ChainKind::ItoCommuting ? corrected_drift(s) : s.f;
    const MatrixField F =
        kind == ChainKind::ItoGeneral ? half_sigma_outer(s) : MatrixField::zero(n, n);

    const auto step = [&](const Expr& Ti) -> Expr {
        switch (kind) {
            case ChainKind::Deterministic:
                return lie_derivative(s.f, Ti);
            case ChainKind::ItoCommuting: {
                const Expr diffusion = lie_derivative(sigma, lie_derivative(sigma, Ti));
                return simplify(lie_derivative(fbar, Ti) + constant(Rational(1, 2)) * diffusion);
            }
            default:
                return second_order_apply(s.f, F, Ti);
        }
    };

    std::vector<Expr> T;
    T.reserve(static_cast<std::size_t>(n));
    T.push_back(simplify(lambda));
    for (int i = 1; i < n; ++i) T.push_back(step(T.back()));

    LinearizingTransformation lt;
    lt.lambda = lambda;

    // decoupling conditions L_g T_i = 0 for i < n
    for (int i = 0; i + 1 < n; ++i) {
        const Expr lg = lie_derivative(s.g, T[static_cast<std::size_t>(i)]);
        const double res = sampled_abs_max(lg, s.sampler, s.params);
        lt.residuals["chain_" + std::to_string(i + 1)] = res;
        if (res > tol)
            throw ChainError("chain break: L_g T_" + std::to_string(i + 1) +
                             " does not vanish (residual " + format_double(res) + ")");
    }
    const Expr den = lie_derivative(s.g, T.back());
    const double den_min = sampled_abs_min(den, s.sampler, s.params);
    lt.residuals["decoupling_min"] = den_min;
    if (den_min < 1e-10)
        throw ChainError("vanishing decoupling term L_g T_n (min " + format_double(den_min) + ")");

    // transformation must be a local diffeomorphism at x0
    {
        Point p0{s.x0, s.params};
        Eigen::MatrixXd J(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                J(i, j) = evaluate(differentiate(T[static_cast<std::size_t>(i)], j + 1), p0);
        if (matrix_rank(J) < n)
            throw ChainError("transformation Jacobian is rank deficient at x0");
    }

    const Expr num = step(T.back());
    lt.fb.alpha = simplify(-(num / den));
    lt.fb.beta = simplify(integer(1) / den);

    bool is_identity = true;
    for (int i = 0; i < n; ++i) {
        Expr ti = simplify(T[static_cast<std::size_t>(i)]);
        T[static_cast<std::size_t>(i)] = ti;
        if (!equal(ti, variable(i + 1))) is_identity = false;
    }
    lt.T = is_identity ? Diffeo::identity(n) : Diffeo(n, T);
    lt.passed = true;
    switch (kind) {
        case ChainKind::Deterministic: lt.variant = Variant::Det; break;
        case ChainKind::ItoCommuting: lt.variant = Variant::ItoGCommuting; break;
        default: lt.variant = Variant::ItoGsigma; break;
    }
    return lt;
}

GsigmaCheck strat_gsigma_check(const StochasticSystem& s, const LinearizingTransformation& lt,
                               double tol) {
    if (s.convention != Convention::Stratonovich)
        throw PreconditionError("dispersion check expects a Stratonovich system");
    const VectorField sigma = s.sigma_col(0);
    GsigmaCheck out;
    out.passed = true;
    for (int i = 0; i < s.dim; ++i) {
        const VectorField ad_sigma = ad_iter(s.f, sigma, i);
        const Expr cond = lie_derivative(ad_sigma, lt.lambda);
        const SampledStats st = sampled_stats(cond, s.sampler, s.params);
        out.s_constants.push_back(st.mean);
        const double rel = st.stddev / (1.0 + std::abs(st.mean));
        if (rel > out.worst_stddev) {
            out.worst_stddev = rel;
            out.worst_index = i;
        }
        if (rel > tol) out.passed = false;
    }
    return out;
}

std::vector<Expr> solve_lambda_n2(const StochasticSystem& s) {
    if (s.dim != 2) throw PreconditionError("the restricted solver handles n = 2 only");
    const Expr w1 = simplify(-s.g[1]);
    const Expr w2 = simplify(s.g[0]);
    const bool w1_zero = w1.is_zero();
    const bool w2_zero = w2.is_zero();
    if (w1_zero && w2_zero) throw UnsupportedForm("control field vanishes identically");

    // leaf coordinate cases: the annihilator is a single coordinate direction
    if (w2_zero) return {variable(1)};  // g = [0, g2], lambda = any function of x1
    if (w1_zero) return {variable(2)};  // g = [g1, 0], lambda = any function of x2

    const auto potential_oriented = [&](const Expr& oa, const Expr& ob, int va, int vb) -> Expr {
        Expr mu = integrate_table(oa, va);
        const Expr rem = simplify(ob - differentiate(mu, vb));
        if (depends_on_var(rem, va))
            throw NonIntegrable("one-form potential has mixed remainder " + to_string(rem));
        if (!rem.is_zero()) mu = simplify(mu + integrate_table(rem, vb));
        return mu;
    };
    const auto potential = [&](const Expr& o1, const Expr& o2) -> Expr {
        try {
            return potential_oriented(o1, o2, 1, 2);
        } catch (const NonIntegrable&) {
            return potential_oriented(o2, o1, 2, 1);
        }
    };

    const Expr d12 = differentiate(w1, 2);
    const Expr d21 = differentiate(w2, 1);
    const Expr mismatch = simplify(d12 - d21);
    try {
        if (mismatch.is_zero() || equivalent(mismatch, integer(0), s.sampler, 1e-10, s.params))
            return {simplify(potential(w1, w2))};
    } catch (const TooManyDomainFailures&) {
    }

    // integrating factor depending on a single coordinate (exactness equation)
    try {
        const Expr r1 = simplify(mismatch / w2);
        if (!depends_on_var(r1, 2)) {
            const Expr c = simplify(exp(integrate_table(r1, 1)));
            return {simplify(potential(simplify(c * w1), simplify(c * w2)))};
        }
    } catch (const NonIntegrable&) {
    }
    try {
        const Expr r2 = simplify(simplify(-mismatch) / w1);
        if (!depends_on_var(r2, 1)) {
            const Expr c = simplify(exp(integrate_table(r2, 2)));
            return {simplify(potential(simplify(c * w1), simplify(c * w2)))};
        }
    } catch (const NonIntegrable&) {
    }
    throw UnsupportedForm("no separable integrating factor for the annihilator one-form");
}

namespace {

// Chooses the scalar reparameterization lambda = c(mu) that makes the
// transformed dispersion constant. Handles the single-coordinate leaf case;
// returns mu unchanged when sigma contributes nothing.
Expr select_gsigma_lambda(const StochasticSystem& s, const Expr& mu, double tol, bool* gauge_free) {
    const VectorField sigma = s.sigma_col(0);
    const Expr p = lie_derivative(sigma, mu);                        // dispersion of T1
    const Expr q = lie_derivative(sigma, lie_derivative(s.f, mu));   // dispersion of T2 for c = id
    const auto is_zero_expr = [&](const Expr& e) {
        if (e.is_zero()) return true;
        try {
            return equivalent(e, integer(0), s.sampler, 1e-10, s.params);
        } catch (const TooManyDomainFailures&) {
            return false;
        }
    };
    const bool p_zero = is_zero_expr(p);
    const bool q_zero = is_zero_expr(q);
    *gauge_free = false;
    if (p_zero && q_zero) {
        *gauge_free = true;  // sigma invisible; the deterministic sign gauge applies
        return mu;
    }

    int leaf = 0;
    for (int j = 1; j <= s.dim; ++j) {
        if (!depends_on_var(mu, j)) continue;
        if (leaf != 0) return mu;  // multivariate generator: try it as-is
        leaf = j;
    }
    if (leaf == 0) return mu;

    const Expr target = p_zero ? q : p;
    for (int j = 1; j <= s.dim; ++j) {
        if (j == leaf) continue;
        try {
            if (!equivalent(differentiate(target, j), integer(0), s.sampler, 1e-9, s.params))
                return mu;  // dispersion condition not a function of the leaf; keep mu
        } catch (const TooManyDomainFailures&) {
            return mu;
        }
    }

    const Expr s_target = simplify(substitute_state(target, s.x0));
    {
        Point p0{s.x0, s.params};
        if (std::abs(evaluate(s_target, p0)) < 1e-12)
            throw UnsupportedForm("dispersion condition vanishes at x0; cannot normalize");
    }
    const Expr cprime = simplify(s_target / target);
    Expr lambda;
    try {
        lambda = integrate_table(cprime, leaf);
    } catch (const NonIntegrable& e) {
        throw UnsupportedForm(std::string("dispersion reparameterization not integrable: ") +
                              e.what());
    }
    (void)tol;
    return simplify(lambda - simplify(substitute_state(lambda, s.x0)));
}

// beta(x0) > 0 gauge via lambda -> -lambda, for pipelines whose lambda came
// from the solver rather than the user.
LinearizingTransformation normalize_beta_sign(const StochasticSystem& s,
                                              LinearizingTransformation lt, ChainKind kind,
                                              double tol) {
    Point p0{s.x0, s.params};
    if (evaluate(lt.fb.beta, p0) < 0.0) {
        LinearizingTransformation flipped = chain_from_lambda(s, simplify(-lt.lambda), kind, tol);
        flipped.variant = lt.variant;
        return flipped;
    }
    return lt;
}

Expr default_generator(const StochasticSystem& s) {
    if (s.dim == 1) return variable(1);
    if (s.dim == 2) return solve_lambda_n2(s).front();
    throw UnsupportedForm(
        "no constructive solver for n > 2; supply lambda explicitly (--lambda)");
}

}  // namespace

LinearizingTransformation ito_gsigma_linearize(const StochasticSystem& s,
                                               std::optional<Expr> user_lambda, double tol) {
    if (s.convention != Convention::Ito)
        throw PreconditionError("ito-gsigma pipeline expects an Ito system");
    {
        Point p0{s.x0, s.params};
        const VectorField corr = correcting_term(s.sigma);
        for (int i = 0; i < s.dim; ++i) {
            if (std::abs(evaluate(s.f[i], p0)) > 1e-10)
                throw PreconditionError("equilibrium: f(x0) != 0 in component " +
                                        std::to_string(i + 1));
            if (std::abs(evaluate(corr[i], p0)) > 1e-10)
                throw PreconditionError("equilibrium: corr(x0) != 0 in component " +
                                        std::to_string(i + 1));
        }
    }

    const StochasticSystem strat = apply_correcting(s, CorrDirection::Forward);

    const SfbConditions cond = check_det_sfb(strat, strat.sampler, tol);
    if (!cond.nonsingular || !cond.involutive)
        throw ChainError(std::string("conditions stage: distribution ") +
                         (!cond.nonsingular ? "singular" : "not involutive"));

    bool gauge_free = false;
    Expr lambda = integer(0);
    if (user_lambda) {
        lambda = *user_lambda;
    } else {
        const Expr mu = default_generator(strat);
        lambda = select_gsigma_lambda(strat, mu, tol, &gauge_free);
    }

    LinearizingTransformation lt = chain_from_lambda(strat, lambda, ChainKind::Deterministic, tol);
    lt.variant = Variant::ItoGsigma;
    if (gauge_free && !user_lambda) lt = normalize_beta_sign(strat, lt, ChainKind::Deterministic, tol);
    lt.variant = Variant::ItoGsigma;

    const GsigmaCheck gs = strat_gsigma_check(strat, lt, tol);
    lt.s_constants = gs.s_constants;
    lt.residuals["dispersion_worst_stddev"] = gs.worst_stddev;
    if (!gs.passed)
        throw ChainError("dispersion stage: L_{ad_f^" + std::to_string(gs.worst_index) +
                         " sigma} lambda is not constant (stddev " +
                         format_double(gs.worst_stddev) + ")");

    // backward correcting term of the transformed system: sigma~ is constant,
    // so its correcting term vanishes; the stddev above is the witness.
    lt.residuals["backward_corr"] = gs.worst_stddev;
    lt.passed = true;
    return lt;
}

LinearizingTransformation ito_g_commuting_linearize(const StochasticSystem& s,
                                                    std::optional<Expr> user_lambda, double tol) {
    if (s.convention != Convention::Ito)
        throw PreconditionError("ito-g-commuting pipeline expects an Ito system");
    const VectorField fbar = corrected_drift(s);
    const VectorField sigma = s.sigma_col(0);

    double worst = 0.0;
    int worst_i = -1;
    for (int i = 0; i < s.dim; ++i) {
        const VectorField br = lie_bracket(ad_iter(fbar, s.g, i), sigma);
        for (int c = 0; c < s.dim; ++c) {
            const double res = sampled_abs_max(br[c], s.sampler, s.params);
            if (res > worst) {
                worst = res;
                worst_i = i;
            }
        }
    }
    if (worst > 1e-8)
        throw PreconditionError("commutation violated: [ad_fbar^" + std::to_string(worst_i) +
                                " g, sigma] has residual " + format_double(worst));

    StochasticSystem aux = s;
    aux.f = fbar;
    const SfbConditions cond = check_det_sfb(aux, s.sampler, tol);
    if (!cond.nonsingular || !cond.involutive)
        throw ChainError(std::string("conditions stage: distribution ") +
                         (!cond.nonsingular ? "singular" : "not involutive"));

    const bool solver_lambda = !user_lambda.has_value();
    const Expr lambda = user_lambda ? *user_lambda : default_generator(aux);
    LinearizingTransformation lt = chain_from_lambda(s, lambda, ChainKind::ItoCommuting, tol);
    lt.variant = Variant::ItoGCommuting;
    lt.residuals["commutation_worst"] = worst;
    if (solver_lambda) {
        lt = normalize_beta_sign(s, lt, ChainKind::ItoCommuting, tol);
        lt.variant = Variant::ItoGCommuting;
        lt.residuals["commutation_worst"] = worst;
    }
    lt.passed = true;
    return lt;
}

ItoGConditions ito_g_conditions_given_lambda(const StochasticSystem& s, const Expr& lambda,
                                             double tol, bool first_order_form) {
    if (s.convention != Convention::Ito)
        throw PreconditionError("ito g-conditions expect an Ito system");
    const int n = s.dim;
    const VectorField sigma = s.sigma_col(0);
    const MatrixField F = half_sigma_outer(s);
    const VectorField fbar = corrected_drift(s);

    const auto step = [&](const Expr& Ti) -> Expr {
        if (!first_order_form) return second_order_apply(s.f, F, Ti);
        const Expr Si = lie_derivative(sigma, Ti);  // auxiliary first-order unknown
        return simplify(lie_derivative(fbar, Ti) +
                        constant(Rational(1, 2)) * lie_derivative(sigma, Si));
    };

    ItoGConditions out;
    Expr Ti = simplify(lambda);
    for (int i = 0; i < n; ++i) {
        const Expr lg = lie_derivative(s.g, Ti);
        if (i < n - 1) {
            const double res = sampled_abs_max(lg, s.sampler, s.params);
            out.residuals.push_back(res);
            out.pass.push_back(res <= tol);
        } else {
            out.decoupling_min = sampled_abs_min(lg, s.sampler, s.params);
            out.residuals.push_back(out.decoupling_min);
            out.pass.push_back(out.decoupling_min > 1e-10);
        }
        if (i < n - 1) Ti = step(Ti);
    }
    out.all_passed = true;
    for (bool b : out.pass) out.all_passed = out.all_passed && b;
    if (out.all_passed) {
        const Expr den = lie_derivative(s.g, Ti);
        const Expr num = step(Ti);
        Feedback fb;
        fb.alpha = simplify(-(num / den));
        fb.beta = simplify(integer(1) / den);
        out.fb = std::move(fb);
    }
    return out;
}

SigmaCheck sigma_linearize_check(const StochasticSystem& s, const Expr& alpha,
                                 const DomainSampler& sampler, double tol) {
    const int n = s.dim;
    const VectorField sigma = s.sigma_col(0);
    std::vector<Expr> fmod_comps;
    fmod_comps.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) fmod_comps.push_back(simplify(s.f[i] + s.g[i] * alpha));
    const VectorField fmod(n, std::move(fmod_comps));

    SigmaCheck out;
    out.passed = true;
    for (int l = 1; l <= 2 * n - 1; l += 2) {
        const VectorField br = lie_bracket(sigma, ad_iter(fmod, sigma, l));
        double res = 0.0;
        for (int c = 0; c < n; ++c) res = std::max(res, sampled_abs_max(br[c], sampler, s.params));
        out.residuals["odd_bracket_" + std::to_string(l)] = res;
        if (res > tol) out.passed = false;
    }

    std::vector<VectorField> gens;
    gens.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) gens.push_back(ad_iter(fmod, sigma, i));
    const Distribution dist(gens);
    const EquivalenceOptions opts;
    const int budget = static_cast<int>(std::ceil(opts.points / (1.0 - opts.max_skip_fraction))) + 1;
    int checked = 0;
    bool full_rank = true;
    for (int draw = 0; draw < budget && checked < opts.points; ++draw) {
        Point p{sampler.sample(static_cast<std::uint64_t>(draw)), s.params};
        try {
            if (distribution_rank(dist, p, kRankTol) < n) full_rank = false;
            ++checked;
        } catch (const DomainError&) {
        }
    }
    out.residuals["rank_full"] = full_rank ? 1.0 : 0.0;
    out.passed = out.passed && full_rank && checked > 0;
    return out;
}

RoundTrip verify_transformation(const StochasticSystem& s, const LinearizingTransformation& lt,
                                double tol) {
    const int n = s.dim;
    RoundTrip out;
    std::vector<Expr> fcl, gcl;
    fcl.reserve(static_cast<std::size_t>(n));
    gcl.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        fcl.push_back(simplify(s.f[i] + s.g[i] * lt.fb.alpha));
        gcl.push_back(simplify(s.g[i] * lt.fb.beta));
    }
    const VectorField f_closed(n, std::move(fcl));
    const VectorField g_closed(n, std::move(gcl));
    const VectorField sigma = s.sigma_col(0);
    const VectorField ito = s.convention == Convention::Ito
                                ? ito_term(s.sigma, lt.T)
                                : VectorField::zero(n);

    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
        const Expr& Ti = lt.T.forward[static_cast<std::size_t>(i)];
        const Expr drift_img = simplify(lie_derivative(f_closed, Ti) + ito[i]);
        const Expr drift_target =
            i + 1 < n ? lt.T.forward[static_cast<std::size_t>(i + 1)] : integer(0);
        const double rd = sampled_deviation(drift_img, drift_target, s.sampler, s.params).max_rel;
        out.residuals["drift_" + std::to_string(i + 1)] = rd;
        worst = std::max(worst, rd);

        const Expr ctrl_img = lie_derivative(g_closed, Ti);
        const Expr ctrl_target = i + 1 < n ? integer(0) : integer(1);
        const double rc = sampled_deviation(ctrl_img, ctrl_target, s.sampler, s.params).max_rel;
        out.residuals["control_" + std::to_string(i + 1)] = rc;
        worst = std::max(worst, rc);

        const SampledStats st = sampled_stats(lie_derivative(sigma, Ti), s.sampler, s.params);
        out.sigma_constants.push_back(st.mean);
        out.residuals["sigma_stddev_" + std::to_string(i + 1)] =
            st.stddev / (1.0 + std::abs(st.mean));
    }
    out.residuals["worst"] = worst;
    bool sigma_ok = true;
    if (lt.variant == Variant::StratGsigma || lt.variant == Variant::ItoGsigma) {
        for (int i = 0; i < n; ++i)
            sigma_ok = sigma_ok &&
                       out.residuals["sigma_stddev_" + std::to_string(i + 1)] <= tol;
    }
    out.passed = worst <= tol && sigma_ok;
    return out;
}

LinearizingTransformation linearize_pipeline(const StochasticSystem& s, Variant variant,
                                             std::optional<Expr> user_lambda,
                                             std::optional<Expr> sigma_alpha, double tol) {
    switch (variant) {
        case Variant::Det:
        case Variant::StratG: {
            if (variant == Variant::StratG && s.convention != Convention::Stratonovich)
                throw PreconditionError("strat-g pipeline expects a Stratonovich system");
            const SfbConditions cond = check_det_sfb(s, s.sampler, tol);
            if (!cond.nonsingular || !cond.involutive)
                throw ChainError(std::string("conditions stage: distribution ") +
                                 (!cond.nonsingular ? "singular" : "not involutive"));
            const bool solver_lambda = !user_lambda.has_value();
            const Expr lambda = user_lambda ? *user_lambda : default_generator(s);
            LinearizingTransformation lt =
                chain_from_lambda(s, lambda, ChainKind::Deterministic, tol);
            lt.variant = variant;
            if (solver_lambda) {
                lt = normalize_beta_sign(s, lt, ChainKind::Deterministic, tol);
                lt.variant = variant;
            }
            lt.passed = true;
            return lt;
        }
        case Variant::StratGsigma: {
            if (s.convention != Convention::Stratonovich)
                throw PreconditionError("strat-gsigma pipeline expects a Stratonovich system");
            const SfbConditions cond = check_det_sfb(s, s.sampler, tol);
            if (!cond.nonsingular || !cond.involutive)
                throw ChainError(std::string("conditions stage: distribution ") +
                                 (!cond.nonsingular ? "singular" : "not involutive"));
            bool gauge_free = false;
            Expr lambda = integer(0);
            if (user_lambda) {
                lambda = *user_lambda;
            } else {
                lambda = select_gsigma_lambda(s, default_generator(s), tol, &gauge_free);
            }
            LinearizingTransformation lt =
                chain_from_lambda(s, lambda, ChainKind::Deterministic, tol);
            lt.variant = Variant::StratGsigma;
            if (gauge_free && !user_lambda) {
                lt = normalize_beta_sign(s, lt, ChainKind::Deterministic, tol);
                lt.variant = Variant::StratGsigma;
            }
            const GsigmaCheck gs = strat_gsigma_check(s, lt, tol);
            lt.s_constants = gs.s_constants;
            lt.residuals["dispersion_worst_stddev"] = gs.worst_stddev;
            if (!gs.passed)
                throw ChainError("dispersion stage: L_{ad_f^" + std::to_string(gs.worst_index) +
                                 " sigma} lambda is not constant (stddev " +
                                 format_double(gs.worst_stddev) + ")");
            lt.passed = true;
            return lt;
        }
        case Variant::ItoGsigma:
            return ito_gsigma_linearize(s, user_lambda, tol);
        case Variant::ItoGCommuting:
            return ito_g_commuting_linearize(s, user_lambda, tol);
        default: {
            const Expr alpha = sigma_alpha ? *sigma_alpha : integer(0);
            const SigmaCheck check = sigma_linearize_check(s, alpha, s.sampler, tol);
            LinearizingTransformation lt;
            lt.variant = Variant::Sigma;
            lt.T = Diffeo(0, {});
            lt.fb.alpha = alpha;
            lt.fb.beta = integer(1);
            lt.residuals = check.residuals;
            lt.passed = check.passed;
            return lt;
        }
    }
}

}  // namespace stoflin
