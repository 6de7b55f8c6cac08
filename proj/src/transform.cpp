#include <algorithm>
#include <cmath>

#include "stoflin/system.hpp"

namespace stoflin {

std::string convention_name(Convention c) {
    switch (c) {
        case Convention::Ito: return "ito";
        case Convention::Stratonovich: return "stratonovich";
        default: return "deterministic";
    }
}

Convention convention_from_name(const std::string& name) {
    if (name == "ito") return Convention::Ito;
    if (name == "stratonovich") return Convention::Stratonovich;
    if (name == "deterministic") return Convention::Deterministic;
    throw std::invalid_argument("unknown convention: " + name);
}

bool StochasticSystem::sigma_is_zero() const {
    for (const Expr& e : sigma.elems)
        if (!simplify(e).is_zero()) return false;
    return true;
}

void StochasticSystem::validate() const {
    if (dim < 1) throw DimensionMismatch("system dimension must be >= 1");
    if (f.dim != dim || g.dim != dim) throw DimensionMismatch("field dimension mismatch");
    if (sigma.rows != dim || sigma.cols != noise)
        throw DimensionMismatch("sigma must be dim x noise");
    if (static_cast<int>(x0.size()) != dim) throw DimensionMismatch("x0 dimension mismatch");
    if (sampler.dim() != dim) throw DimensionMismatch("sampler dimension mismatch");
    if (convention == Convention::Deterministic && !sigma_is_zero())
        throw PreconditionError("deterministic systems must have zero sigma");
}

void StochasticSystem::require_equilibrium(double tol) const {
    Point p{x0, params};
    for (int i = 0; i < dim; ++i) {
        const double v = evaluate(f[i], p);
        if (std::abs(v) > tol)
            throw PreconditionError("f(x0) != 0 in component " + std::to_string(i + 1) +
                                    " (value " + format_double(v) + ")");
    }
    if (convention == Convention::Ito) {
        const VectorField corr = correcting_term(sigma);
        for (int i = 0; i < dim; ++i) {
            const double v = evaluate(f[i], p) + evaluate(corr[i], p);
            if (std::abs(v) > tol)
                throw PreconditionError("f(x0) + corr(x0) != 0 in component " +
                                        std::to_string(i + 1) + " (value " + format_double(v) + ")");
        }
    }
}

Diffeo::Diffeo(int dim_, std::vector<Expr> fwd, std::optional<std::vector<Expr>> inv)
    : dim(dim_), forward(std::move(fwd)), inverse(std::move(inv)) {
    if (static_cast<int>(forward.size()) != dim)
        throw DimensionMismatch("diffeomorphism needs dim forward components");
    if (inverse && static_cast<int>(inverse->size()) != dim)
        throw DimensionMismatch("diffeomorphism inverse needs dim components");
}

Diffeo Diffeo::identity(int dim) {
    std::vector<Expr> id;
    id.reserve(static_cast<std::size_t>(dim));
    for (int i = 1; i <= dim; ++i) id.push_back(variable(i));
    return Diffeo(dim, id, id);
}

bool Diffeo::check_inverse(const DomainSampler& sampler, double tol, const ParamMap& params) const {
    if (!inverse) return false;
    for (int i = 0; i < dim; ++i) {
        const Expr fwd_of_inv = substitute_vars(forward[static_cast<std::size_t>(i)], *inverse);
        const Expr inv_of_fwd = substitute_vars((*inverse)[static_cast<std::size_t>(i)], forward);
        if (!equivalent(fwd_of_inv, variable(i + 1), sampler, tol, params)) return false;
        if (!equivalent(inv_of_fwd, variable(i + 1), sampler, tol, params)) return false;
    }
    return true;
}

bool Diffeo::preserves_equilibrium(std::span<const double> x0, const ParamMap& params,
                                   double tol) const {
    Point p{std::vector<double>(x0.begin(), x0.end()), params};
    try {
        for (const Expr& e : forward)
            if (std::abs(evaluate(e, p)) > tol) return false;
    } catch (const DomainError&) {
        return false;
    }
    return true;
}

std::vector<double> Diffeo::apply(std::span<const double> x, const ParamMap& params) const {
    Point p{std::vector<double>(x.begin(), x.end()), params};
    std::vector<double> z;
    z.reserve(forward.size());
    for (const Expr& e : forward) z.push_back(evaluate(e, p));
    return z;
}

Feedback Feedback::inverse() const {
    Feedback inv;
    inv.alpha = simplify(-(alpha / beta));
    inv.beta = simplify(integer(1) / beta);
    return inv;
}

void Feedback::validate(std::span<const double> x0, const DomainSampler& sampler,
                        const ParamMap& params, double tol) const {
    Point p{std::vector<double>(x0.begin(), x0.end()), params};
    if (std::abs(evaluate(alpha, p)) > tol)
        throw PreconditionError("feedback alpha does not vanish at x0");
    if (std::abs(evaluate(beta, p)) < 1e-10)
        throw PreconditionError("feedback beta singular at x0");
    const int n_points = 64;
    for (int i = 0; i < n_points; ++i) {
        Point q{sampler.sample(static_cast<std::uint64_t>(i)), params};
        try {
            if (std::abs(evaluate(beta, q)) < 1e-10)
                throw PreconditionError("feedback beta vanishes on the sampled domain");
        } catch (const DomainError&) {
        }
    }
}

// --- transformation calculus -------------------------------------------------

VectorField ito_term(const MatrixField& sigma, const Diffeo& T) {
    const int n = T.dim;
    if (sigma.rows != n) throw DimensionMismatch("ito term: sigma rows must equal dim");
    std::vector<Expr> out;
    out.reserve(static_cast<std::size_t>(n));
    const Rational half(1, 2);
    for (int m = 0; m < n; ++m) {
        const Expr& Tm = T.forward[static_cast<std::size_t>(m)];
        std::vector<Expr> grad(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) grad[static_cast<std::size_t>(i)] = differentiate(Tm, i + 1);
        std::vector<Expr> terms;
        for (int i = 0; i < n; ++i) {
            for (int j = i; j < n; ++j) {
                Expr hess = differentiate(grad[static_cast<std::size_t>(i)], j + 1);
                if (hess.is_zero()) continue;
                std::vector<Expr> noise_terms;
                for (int l = 0; l < sigma.cols; ++l) {
                    const Expr& si = sigma.at(i, l);
                    const Expr& sj = sigma.at(j, l);
                    if (si.is_zero() || sj.is_zero()) continue;
                    noise_terms.push_back(si * sj);
                }
                if (noise_terms.empty()) continue;
                // off-diagonal pairs appear twice in the double sum
                const Rational weight = (i == j) ? half : Rational(1);
                terms.push_back(constant(weight) * hess * add_all(std::move(noise_terms)));
            }
        }
        out.push_back(simplify(add_all(std::move(terms))));
    }
    return VectorField(n, std::move(out));
}

VectorField ito_term(const VectorField& sigma, const Diffeo& T) {
    return ito_term(MatrixField::from_column(sigma), T);
}

VectorField correcting_term(const MatrixField& sigma) {
    const int n = sigma.rows;
    const Rational minus_half(-1, 2);
    std::vector<Expr> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) {
        std::vector<Expr> terms;
        for (int j = 0; j < sigma.cols; ++j) {
            const Expr& srj = sigma.at(r, j);
            if (srj.is_zero()) continue;
            for (int i = 0; i < n; ++i) {
                const Expr& sij = sigma.at(i, j);
                if (sij.is_zero()) continue;
                Expr d = differentiate(srj, i + 1);
                if (d.is_zero()) continue;
                terms.push_back(d * sij);
            }
        }
        out.push_back(simplify(constant(minus_half) * add_all(std::move(terms))));
    }
    return VectorField(n, std::move(out));
}

VectorField correcting_term(const VectorField& sigma) {
    return correcting_term(MatrixField::from_column(sigma));
}

StochasticSystem apply_correcting(const StochasticSystem& s, CorrDirection direction) {
    if (direction == CorrDirection::Forward && s.convention != Convention::Ito)
        throw PreconditionError("forward correcting mapping expects an Ito system");
    if (direction == CorrDirection::Inverse && s.convention != Convention::Stratonovich)
        throw PreconditionError("inverse correcting mapping expects a Stratonovich system");
    const VectorField corr = correcting_term(s.sigma);
    StochasticSystem out = s;
    std::vector<Expr> drift;
    drift.reserve(static_cast<std::size_t>(s.dim));
    for (int i = 0; i < s.dim; ++i) {
        const Expr c = direction == CorrDirection::Forward ? corr[i] : -corr[i];
        drift.push_back(simplify(s.f[i] + c));
    }
    out.f = VectorField(s.dim, std::move(drift));
    out.convention =
        direction == CorrDirection::Forward ? Convention::Stratonovich : Convention::Ito;
    return out;
}

VectorField pushforward_in_source(const Diffeo& T, const VectorField& v) {
    if (v.dim != T.dim) throw DimensionMismatch("pushforward dimension mismatch");
    const int n = T.dim;
    std::vector<Expr> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::vector<Expr> terms;
        for (int j = 0; j < n; ++j) {
            if (v[j].is_zero()) continue;
            Expr d = differentiate(T.forward[static_cast<std::size_t>(i)], j + 1);
            if (d.is_zero()) continue;
            terms.push_back(d * v[j]);
        }
        out.push_back(simplify(add_all(std::move(terms))));
    }
    return VectorField(n, std::move(out));
}

VectorField pushforward(const Diffeo& T, const VectorField& v) {
    if (!T.has_inverse()) throw PreconditionError("pushforward requires an explicit inverse");
    const VectorField w = pushforward_in_source(T, v);
    std::vector<Expr> out;
    out.reserve(static_cast<std::size_t>(w.dim));
    for (int i = 0; i < w.dim; ++i) out.push_back(simplify(substitute_vars(w[i], *T.inverse)));
    return VectorField(w.dim, std::move(out));
}

namespace {
DomainSampler image_box(const Diffeo& T, const DomainSampler& src, const ParamMap& params) {
    const int n = T.dim;
    std::vector<double> lo(static_cast<std::size_t>(n), 0.0), hi(static_cast<std::size_t>(n), 0.0);
    bool seen = false;
    for (int i = 0; i < 160; ++i) {
        Point p{src.sample(static_cast<std::uint64_t>(i)), params};
        try {
            for (int c = 0; c < n; ++c) {
                const double z = evaluate(T.forward[static_cast<std::size_t>(c)], p);
                if (!seen) {
                    lo[static_cast<std::size_t>(c)] = hi[static_cast<std::size_t>(c)] = z;
                } else {
                    lo[static_cast<std::size_t>(c)] = std::min(lo[static_cast<std::size_t>(c)], z);
                    hi[static_cast<std::size_t>(c)] = std::max(hi[static_cast<std::size_t>(c)], z);
                }
            }
            seen = true;
        } catch (const DomainError&) {
        }
    }
    if (!seen) throw DomainError("coordinate image empty on the sampled box");
    std::vector<Interval> box(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) {
        double a = lo[static_cast<std::size_t>(c)], b = hi[static_cast<std::size_t>(c)];
        if (b - a < 1e-9) {
            a -= 1e-3;
            b += 1e-3;
        }
        box[static_cast<std::size_t>(c)] = Interval{a, b};
    }
    return DomainSampler(std::move(box), src.seed);
}
}  // namespace

StochasticSystem coord_transform(const StochasticSystem& s, const Diffeo& T,
                                 bool require_equilibrium_preserving) {
    if (T.dim != s.dim) throw DimensionMismatch("coordinate transformation dimension mismatch");
    if (!T.has_inverse())
        throw PreconditionError("coordinate transformation requires an explicit inverse");
    if (require_equilibrium_preserving && !T.preserves_equilibrium(s.x0, s.params))
        throw PreconditionError("coordinate transformation does not map x0 to 0");

    const auto push = [&T](const VectorField& v) {
        VectorField w = pushforward_in_source(T, v);
        std::vector<Expr> out;
        out.reserve(static_cast<std::size_t>(w.dim));
        for (int i = 0; i < w.dim; ++i) out.push_back(simplify(substitute_vars(w[i], *T.inverse)));
        return VectorField(w.dim, std::move(out));
    };

    StochasticSystem out = s;
    // drift: contravariant image, plus the second-order term for Ito systems
    VectorField drift_src = pushforward_in_source(T, s.f);
    if (s.convention == Convention::Ito) {
        const VectorField p = ito_term(s.sigma, T);
        std::vector<Expr> comps;
        comps.reserve(static_cast<std::size_t>(s.dim));
        for (int i = 0; i < s.dim; ++i) comps.push_back(drift_src[i] + p[i]);
        drift_src = VectorField(s.dim, std::move(comps));
    }
    {
        std::vector<Expr> comps;
        comps.reserve(static_cast<std::size_t>(s.dim));
        for (int i = 0; i < s.dim; ++i)
            comps.push_back(simplify(substitute_vars(drift_src[i], *T.inverse)));
        out.f = VectorField(s.dim, std::move(comps));
    }
    out.g = push(s.g);
    {
        MatrixField st(s.dim, s.noise);
        for (int j = 0; j < s.noise; ++j) {
            const VectorField col = push(s.sigma.col(j));
            for (int r = 0; r < s.dim; ++r) st.at(r, j) = col[r];
        }
        out.sigma = std::move(st);
    }
    out.x0 = T.apply(s.x0, s.params);
    out.sampler = image_box(T, s.sampler, s.params);
    return out;
}

StochasticSystem feedback_transform(const StochasticSystem& s, const Feedback& fb) {
    fb.validate(s.x0, s.sampler, s.params);
    StochasticSystem out = s;
    std::vector<Expr> drift, control;
    drift.reserve(static_cast<std::size_t>(s.dim));
    control.reserve(static_cast<std::size_t>(s.dim));
    for (int i = 0; i < s.dim; ++i) {
        drift.push_back(simplify(s.f[i] + s.g[i] * fb.alpha));
        control.push_back(simplify(s.g[i] * fb.beta));
    }
    out.f = VectorField(s.dim, std::move(drift));
    out.g = VectorField(s.dim, std::move(control));
    return out;
}

Diffeo compose_diffeos(const Diffeo& R, const Diffeo& S) {
    if (R.dim != S.dim) throw DimensionMismatch("composition dimension mismatch");
    std::vector<Expr> fwd;
    fwd.reserve(static_cast<std::size_t>(S.dim));
    for (const Expr& si : S.forward) fwd.push_back(simplify(substitute_vars(si, R.forward)));
    std::optional<std::vector<Expr>> inv;
    if (R.has_inverse() && S.has_inverse()) {
        std::vector<Expr> comps;
        comps.reserve(static_cast<std::size_t>(R.dim));
        for (const Expr& ri : *R.inverse) comps.push_back(simplify(substitute_vars(ri, *S.inverse)));
        inv = std::move(comps);
    }
    return Diffeo(R.dim, std::move(fwd), std::move(inv));
}

}  // namespace stoflin
