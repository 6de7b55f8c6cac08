#pragma once

#include <optional>
#include <string>

#include "stoflin/fields.hpp"

namespace stoflin {

enum class Convention { Ito, Stratonovich, Deterministic };

std::string convention_name(Convention c);
Convention convention_from_name(const std::string& name);

struct PreconditionError : std::runtime_error {
    explicit PreconditionError(const std::string& what) : std::runtime_error(what) {}
};

/// Affine control system triplet (f, g, sigma) with convention tag,
/// equilibrium point and sampling box.
struct StochasticSystem {
    int dim = 0;
    int inputs = 1;  // m
    int noise = 1;   // k
    VectorField f;
    VectorField g;
    MatrixField sigma;  // n x k; column j multiplies dw_j
    Convention convention = Convention::Ito;
    std::vector<double> x0;
    DomainSampler sampler;
    ParamMap params;

    VectorField sigma_col(int j = 0) const { return sigma.col(j); }
    bool sigma_is_zero() const;
    void validate() const;

    /// Componentwise |f(x0)| (plus |f(x0)+corr(x0)| for Ito systems) must stay
    /// below tol; throws PreconditionError otherwise.
    void require_equilibrium(double tol = 1e-10) const;
};

/// Coordinate change z = T(x); the inverse is optional and several operations
/// require it explicitly.
struct Diffeo {
    int dim = 0;
    std::vector<Expr> forward;
    std::optional<std::vector<Expr>> inverse;

    Diffeo() = default;
    Diffeo(int dim_, std::vector<Expr> fwd, std::optional<std::vector<Expr>> inv = std::nullopt);

    static Diffeo identity(int dim);
    bool has_inverse() const { return inverse.has_value(); }

    /// Samples T(T^{-1}) and T^{-1}(T) against the identity.
    bool check_inverse(const DomainSampler& sampler, double tol, const ParamMap& params = {}) const;
    /// |T(x0)| <= tol componentwise.
    bool preserves_equilibrium(std::span<const double> x0, const ParamMap& params,
                               double tol = 1e-10) const;

    std::vector<double> apply(std::span<const double> x, const ParamMap& params) const;
};

struct Feedback {
    Expr alpha = integer(0);
    Expr beta = integer(1);

    Feedback inverse() const;  // a = -alpha/beta, b = 1/beta
    /// alpha(x0) ~ 0 and beta bounded away from zero on the sampler.
    void validate(std::span<const double> x0, const DomainSampler& sampler, const ParamMap& params,
                  double tol = 1e-10) const;
};

// --- transformation calculus -------------------------------------------------

/// Second-order drift contribution of an Ito coordinate change, expressed in
/// the source coordinates: (P_sigma T)_m = 1/2 sum_ij d2T_m/dx_i dx_j sum_l s_il s_jl.
VectorField ito_term(const MatrixField& sigma, const Diffeo& T);
VectorField ito_term(const VectorField& sigma, const Diffeo& T);

/// corr_r = -1/2 sum_i sum_j dsigma_rj/dx_i sigma_ij.
VectorField correcting_term(const MatrixField& sigma);
VectorField correcting_term(const VectorField& sigma);

enum class CorrDirection { Forward, Inverse };

/// Forward: Ito -> Stratonovich (drift f + corr); inverse: Stratonovich -> Ito.
StochasticSystem apply_correcting(const StochasticSystem& s, CorrDirection direction);

/// (dT/dx * v)(x) without composing with the inverse; the raw contravariant image.
VectorField pushforward_in_source(const Diffeo& T, const VectorField& v);

/// Full pushforward (dT/dx * v) o T^{-1}(z); requires an explicit inverse.
VectorField pushforward(const Diffeo& T, const VectorField& v);

/// Coordinate transformation per the system's convention. Deterministic and
/// Stratonovich systems transform contravariantly; Ito drifts gain the
/// second-order term. Requires an explicit inverse.
StochasticSystem coord_transform(const StochasticSystem& s, const Diffeo& T,
                                 bool require_equilibrium_preserving = true);

/// (f, g, sigma) -> (f + g alpha, g beta, sigma).
StochasticSystem feedback_transform(const StochasticSystem& s, const Feedback& fb);

/// Composition S o R with inverse R^{-1} o S^{-1}.
Diffeo compose_diffeos(const Diffeo& R, const Diffeo& S);

}  // namespace stoflin
