#pragma once

#include <vector>

#include "stoflin/expr.hpp"
#include "stoflin/sampling.hpp"

namespace stoflin {

/// Column of n expressions over x1..xn.
struct VectorField {
    int dim = 0;
    std::vector<Expr> comps;

    VectorField() = default;
    VectorField(int dim_, std::vector<Expr> comps_);

    const Expr& operator[](int i) const { return comps[static_cast<std::size_t>(i)]; }
    static VectorField zero(int dim);
};

struct MatrixField {
    int rows = 0;
    int cols = 0;
    std::vector<Expr> elems;  // row-major

    MatrixField() = default;
    MatrixField(int r, int c);
    MatrixField(int r, int c, std::vector<Expr> elems_);

    const Expr& at(int r, int c) const { return elems[static_cast<std::size_t>(r * cols + c)]; }
    Expr& at(int r, int c) { return elems[static_cast<std::size_t>(r * cols + c)]; }
    VectorField col(int c) const;
    static MatrixField zero(int r, int c);
    static MatrixField from_column(const VectorField& v);
};

struct Distribution {
    std::vector<VectorField> generators;

    explicit Distribution(std::vector<VectorField> gens);
    int dim() const { return generators.front().dim; }
};

struct SingularDistribution : std::runtime_error {
    explicit SingularDistribution(const std::string& what) : std::runtime_error(what) {}
};

// L_f h = sum_i f_i dh/dx_i
Expr lie_derivative(const VectorField& f, const Expr& h);
Expr multi_lie(const VectorField& f, const Expr& h, int k);

// [f,g] = (dg/dx) f - (df/dx) g
VectorField lie_bracket(const VectorField& f, const VectorField& g);

// ad_f^0 g = g, ad_f^{k+1} g = [f, ad_f^k g]; intermediate brackets are
// memoized per (f,g) pair within the process.
VectorField ad_iter(const VectorField& f, const VectorField& g, int k);

MatrixField jacobian(const VectorField& v);

/// Numeric rank of the generator matrix at p (singular values > tol * sigma_max).
int distribution_rank(const Distribution& d, const Point& p, double tol);

/// Sampled involutivity: every pairwise bracket must lie in the pointwise span
/// of the generators (least-squares residual <= tol * (1 + |bracket|)).
/// Throws SingularDistribution if the generators become dependent at a sample.
bool involutive(const Distribution& d, const DomainSampler& sampler, double tol,
                const ParamMap& params = {}, const EquivalenceOptions& opts = {});

/// O(f,F)h = sum_i f_i dh/dx_i + sum_ij F_ij d2h/dx_i dx_j
Expr second_order_apply(const VectorField& f, const MatrixField& F, const Expr& h);

/// Third-order part of the commutator [O(0,F), O(0,G)] applied to h:
/// sum ((F_ij+F_ji) dG_kl/dx_j - (G_ij+G_ji) dF_kl/dx_j) d3h/dx_i dx_k dx_l.
Expr second_order_commutator_residual(const MatrixField& F, const MatrixField& G, const Expr& h);

}  // namespace stoflin
