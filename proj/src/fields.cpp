#include "stoflin/fields.hpp"

#include <Eigen/Dense>
#include <mutex>
#include <unordered_map>

namespace stoflin {

VectorField::VectorField(int dim_, std::vector<Expr> comps_) : dim(dim_), comps(std::move(comps_)) {
    if (static_cast<int>(comps.size()) != dim)
        throw DimensionMismatch("vector field needs exactly dim components");
    for (const Expr& c : comps)
        if (max_var_index(c) > dim)
            throw DimensionMismatch("component references variable beyond dimension");
}

VectorField VectorField::zero(int dim) {
    return VectorField(dim, std::vector<Expr>(static_cast<std::size_t>(dim), integer(0)));
}

MatrixField::MatrixField(int r, int c)
    : rows(r), cols(c), elems(static_cast<std::size_t>(r * c), integer(0)) {}

MatrixField::MatrixField(int r, int c, std::vector<Expr> elems_)
    : rows(r), cols(c), elems(std::move(elems_)) {
    if (static_cast<int>(elems.size()) != rows * cols)
        throw DimensionMismatch("matrix field element count mismatch");
}

VectorField MatrixField::col(int c) const {
    std::vector<Expr> out;
    out.reserve(static_cast<std::size_t>(rows));
    for (int r = 0; r < rows; ++r) out.push_back(at(r, c));
    return VectorField(rows, std::move(out));
}

MatrixField MatrixField::zero(int r, int c) { return MatrixField(r, c); }

MatrixField MatrixField::from_column(const VectorField& v) {
    return MatrixField(v.dim, 1, v.comps);
}

Distribution::Distribution(std::vector<VectorField> gens) : generators(std::move(gens)) {
    if (generators.empty()) throw DimensionMismatch("distribution needs at least one generator");
    for (const VectorField& g : generators)
        if (g.dim != generators.front().dim)
            throw DimensionMismatch("distribution generators must share dimension");
}

Expr lie_derivative(const VectorField& f, const Expr& h) {
    if (max_var_index(h) > f.dim)
        throw DimensionMismatch("scalar references variable beyond field dimension");
    std::vector<Expr> terms;
    terms.reserve(static_cast<std::size_t>(f.dim));
    for (int i = 0; i < f.dim; ++i) {
        Expr dh = differentiate(h, i + 1);
        if (dh.is_zero() || f[i].is_zero()) continue;
        terms.push_back(f[i] * dh);
    }
    return simplify(add_all(std::move(terms)));
}

Expr multi_lie(const VectorField& f, const Expr& h, int k) {
    if (k < 0) throw std::invalid_argument("multi_lie order must be >= 0");
    Expr cur = h;
    for (int i = 0; i < k; ++i) cur = lie_derivative(f, cur);
    return cur;
}

VectorField lie_bracket(const VectorField& f, const VectorField& g) {
    if (f.dim != g.dim) throw DimensionMismatch("lie bracket needs equal dimensions");
    const int n = f.dim;
    std::vector<Expr> comps;
    comps.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        std::vector<Expr> terms;
        for (int j = 0; j < n; ++j) {
            Expr dg = differentiate(g[i], j + 1);
            if (!dg.is_zero() && !f[j].is_zero()) terms.push_back(dg * f[j]);
            Expr df = differentiate(f[i], j + 1);
            if (!df.is_zero() && !g[j].is_zero()) terms.push_back(-(df * g[j]));
        }
        comps.push_back(simplify(add_all(std::move(terms))));
    }
    return VectorField(n, std::move(comps));
}

namespace {
std::uint64_t field_hash(const VectorField& v) {
    std::uint64_t h = mix_bits(static_cast<std::uint64_t>(v.dim));
    for (const Expr& c : v.comps) h = mix_bits(h ^ c.node().hash);
    return h;
}

bool field_equal(const VectorField& a, const VectorField& b) {
    if (a.dim != b.dim) return false;
    for (int i = 0; i < a.dim; ++i)
        if (!equal(a[i], b[i])) return false;
    return true;
}

struct AdCacheEntry {
    VectorField f, g;
    std::vector<VectorField> ads;  // ads[k] = ad_f^k g
};

std::mutex ad_mutex;
std::unordered_map<std::uint64_t, AdCacheEntry> ad_cache;
}  // namespace

VectorField ad_iter(const VectorField& f, const VectorField& g, int k) {
    if (f.dim != g.dim) throw DimensionMismatch("ad needs equal dimensions");
    if (k < 0) throw std::invalid_argument("ad order must be >= 0");
    if (k == 0) return g;
    const std::uint64_t key = mix_bits(field_hash(f) ^ mix_bits(field_hash(g)));
    std::lock_guard<std::mutex> lock(ad_mutex);
    AdCacheEntry& entry = ad_cache[key];
    if (entry.ads.empty()) {
        entry.f = f;
        entry.g = g;
        entry.ads.push_back(g);
    } else if (!field_equal(entry.f, f) || !field_equal(entry.g, g)) {
        // hash collision: recompute without caching
        VectorField cur = g;
        for (int i = 0; i < k; ++i) cur = lie_bracket(f, cur);
        return cur;
    }
    while (static_cast<int>(entry.ads.size()) <= k)
        entry.ads.push_back(lie_bracket(f, entry.ads.back()));
    return entry.ads[static_cast<std::size_t>(k)];
}

MatrixField jacobian(const VectorField& v) {
    MatrixField J(v.dim, v.dim);
    for (int i = 0; i < v.dim; ++i)
        for (int j = 0; j < v.dim; ++j) J.at(i, j) = differentiate(v[i], j + 1);
    return J;
}

namespace {
Eigen::MatrixXd values_at(const std::vector<VectorField>& gens, const Point& p) {
    const int n = gens.front().dim;
    Eigen::MatrixXd M(n, static_cast<int>(gens.size()));
    for (std::size_t c = 0; c < gens.size(); ++c)
        for (int r = 0; r < n; ++r) M(r, static_cast<int>(c)) = evaluate(gens[c][r], p);
    return M;
}
}  // namespace

int distribution_rank(const Distribution& d, const Point& p, double tol) {
    if (tol <= 0.0) throw std::invalid_argument("tolerance must be positive");
    const Eigen::MatrixXd M = values_at(d.generators, p);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0) return 0;
    const double smax = sv(0);
    if (smax == 0.0) return 0;
    int rank = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv(i) > tol * smax) ++rank;
    return rank;
}

bool involutive(const Distribution& d, const DomainSampler& sampler, double tol,
                const ParamMap& params, const EquivalenceOptions& opts) {
    const int k = static_cast<int>(d.generators.size());
    if (k == 1) return true;  // a single generator is closed under brackets trivially

    std::vector<VectorField> brackets;
    brackets.reserve(static_cast<std::size_t>(k * (k - 1) / 2));
    for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) brackets.push_back(lie_bracket(d.generators[i], d.generators[j]));

    const int budget = static_cast<int>(std::ceil(opts.points / (1.0 - opts.max_skip_fraction))) + 1;
    int checked = 0, skipped = 0;
    Point p;
    p.params = params;
    for (int draw = 0; draw < budget && checked < opts.points; ++draw) {
        p.coords = sampler.sample(static_cast<std::uint64_t>(draw));
        Eigen::MatrixXd G;
        std::vector<Eigen::VectorXd> bvals;
        try {
            G = values_at(d.generators, p);
            for (const VectorField& b : brackets) {
                Eigen::VectorXd v(b.dim);
                for (int r = 0; r < b.dim; ++r) v(r) = evaluate(b[r], p);
                bvals.push_back(std::move(v));
            }
        } catch (const DomainError&) {
            ++skipped;
            continue;
        }
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(G, Eigen::ComputeThinU | Eigen::ComputeThinV);
        const auto& sv = svd.singularValues();
        if (sv(0) == 0.0 || sv(sv.size() - 1) <= 1e-8 * sv(0))
            throw SingularDistribution("distribution generators dependent at a sampled point");
        for (const Eigen::VectorXd& b : bvals) {
            const Eigen::VectorXd c = svd.solve(b);
            const double residual = (G * c - b).norm();
            if (residual > tol * (1.0 + b.norm())) return false;
        }
        ++checked;
    }
    if (checked < opts.points) throw TooManyDomainFailures(skipped, checked + skipped);
    return true;
}

Expr second_order_apply(const VectorField& f, const MatrixField& F, const Expr& h) {
    const int n = f.dim;
    if (F.rows != n || F.cols != n) throw DimensionMismatch("second-order operator needs n x n matrix");
    std::vector<Expr> first;
    first.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) first.push_back(differentiate(h, i + 1));

    std::vector<Expr> terms;
    for (int i = 0; i < n; ++i)
        if (!f[i].is_zero() && !first[static_cast<std::size_t>(i)].is_zero())
            terms.push_back(f[i] * first[static_cast<std::size_t>(i)]);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const Expr& Fij = F.at(i, j);
            if (Fij.is_zero()) continue;
            Expr d2 = differentiate(first[static_cast<std::size_t>(i)], j + 1);
            if (d2.is_zero()) continue;
            terms.push_back(Fij * d2);
        }
    }
    return simplify(add_all(std::move(terms)));
}

Expr second_order_commutator_residual(const MatrixField& F, const MatrixField& G, const Expr& h) {
    const int n = F.rows;
    if (F.cols != n || G.rows != n || G.cols != n)
        throw DimensionMismatch("commutator residual needs square matrices of equal size");

    // d3h[i][k][l], symmetric in all indices
    std::vector<Expr> d1(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) d1[static_cast<std::size_t>(i)] = differentiate(h, i + 1);
    std::vector<std::vector<Expr>> d2(static_cast<std::size_t>(n),
                                      std::vector<Expr>(static_cast<std::size_t>(n)));
    for (int i = 0; i < n; ++i)
        for (int k = i; k < n; ++k) {
            Expr v = differentiate(d1[static_cast<std::size_t>(i)], k + 1);
            d2[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)] = v;
            d2[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)] = v;
        }
    const auto d3 = [&](int i, int k, int l) {
        return differentiate(d2[static_cast<std::size_t>(std::min(i, k))][static_cast<std::size_t>(
                                 std::max(i, k))],
                             l + 1);
    };

    std::vector<Expr> terms;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const Expr fs = simplify(F.at(i, j) + F.at(j, i));
            const Expr gs = simplify(G.at(i, j) + G.at(j, i));
            for (int k = 0; k < n; ++k)
                for (int l = 0; l < n; ++l) {
                    std::vector<Expr> inner;
                    if (!fs.is_zero()) {
                        Expr dG = differentiate(G.at(k, l), j + 1);
                        if (!dG.is_zero()) inner.push_back(fs * dG);
                    }
                    if (!gs.is_zero()) {
                        Expr dF = differentiate(F.at(k, l), j + 1);
                        if (!dF.is_zero()) inner.push_back(-(gs * dF));
                    }
                    if (inner.empty()) continue;
                    Expr third = d3(i, k, l);
                    if (third.is_zero()) continue;
                    terms.push_back(add_all(std::move(inner)) * third);
                }
        }
    return simplify(add_all(std::move(terms)));
}

}  // namespace stoflin
