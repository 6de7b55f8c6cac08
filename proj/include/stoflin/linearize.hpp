#pragma once

#include <map>
#include <optional>

#include "stoflin/system.hpp"

namespace stoflin {

enum class Variant { Det, StratG, StratGsigma, ItoGCommuting, ItoGsigma, Sigma };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

/// Fitted linear model and controllability ranks of a system.
struct LinearityReport {
    int dim = 0;
    bool is_g_linear = false;
    bool is_sigma_linear = false;
    bool is_gsigma_linear = false;
    std::vector<double> A;  // n x n, row-major, d f/d x at x0
    std::vector<double> B;  // n x m
    std::vector<double> S;  // n x k
    bool g_controllable = false;
    bool sigma_controllable = false;
    bool gsigma_controllable = false;
    std::map<std::string, double> residuals;
};

LinearityReport verify_linear(const StochasticSystem& s, double tol);

/// Geometric feedback-linearizability conditions on (f, g), sigma ignored.
struct SfbConditions {
    bool nonsingular = false;
    bool involutive = false;
};

SfbConditions check_det_sfb(const StochasticSystem& s, const DomainSampler& sampler, double tol);

struct ChainError : std::runtime_error {
    explicit ChainError(const std::string& what) : std::runtime_error(what) {}
};

struct UnsupportedForm : std::runtime_error {
    explicit UnsupportedForm(const std::string& what) : std::runtime_error(what) {}
};

/// Chain recursion flavor: L_f alone, the corrected-drift form
/// L_fbar + (1/2) L_sigma L_sigma, or the second-order operator form.
enum class ChainKind { Deterministic, ItoCommuting, ItoGeneral };

struct LinearizingTransformation {
    Variant variant = Variant::Det;
    Diffeo T;
    Feedback fb;
    Expr lambda = integer(0);
    std::vector<double> s_constants;
    std::map<std::string, double> residuals;
    bool passed = false;
};

/// Builds T_1..T_n from the generating scalar and the variant recursion,
/// together with the cancelling feedback. lambda is shifted so T(x0) = 0.
/// Throws ChainError on a broken chain (L_g T_i != 0 for i < n), a vanishing
/// decoupling term, or a rank-deficient Jacobian at x0.
LinearizingTransformation chain_from_lambda(const StochasticSystem& s, const Expr& lambda,
                                            ChainKind kind, double tol = 1e-8);

/// Dispersion conditions of the Stratonovich pipeline: L_{ad_f^i sigma} lambda
/// must be constant on the sampled box for i = 0..n-1.
struct GsigmaCheck {
    bool passed = false;
    std::vector<double> s_constants;
    double worst_stddev = 0.0;
    int worst_index = -1;
};

GsigmaCheck strat_gsigma_check(const StochasticSystem& s, const LinearizingTransformation& lt,
                               double tol);

/// Restricted n<=2 solver: computes the annihilator one-form of {g}, finds an
/// integrating factor when needed, and integrates it to a generator of the
/// lambda family (all solutions are scalar functions of the generator).
std::vector<Expr> solve_lambda_n2(const StochasticSystem& s);

LinearizingTransformation ito_gsigma_linearize(const StochasticSystem& s,
                                               std::optional<Expr> user_lambda = std::nullopt,
                                               double tol = 1e-8);

LinearizingTransformation ito_g_commuting_linearize(const StochasticSystem& s,
                                                    std::optional<Expr> user_lambda = std::nullopt,
                                                    double tol = 1e-8);

/// Verifier for the general Ito g-linearization conditions given lambda:
/// O(g,0) O^i(f,F) lambda = 0 for i <= n-2 and != 0 at i = n-1, with
/// F_ij = (1/2) sum_l sigma_il sigma_jl. The first-order form replaces the
/// second-order operator chain by the corrected-drift recursion with
/// auxiliary S_i = L_sigma T_i.
struct ItoGConditions {
    std::vector<bool> pass;
    std::vector<double> residuals;
    double decoupling_min = 0.0;
    bool all_passed = false;
    std::optional<Feedback> fb;
};

ItoGConditions ito_g_conditions_given_lambda(const StochasticSystem& s, const Expr& lambda,
                                             double tol, bool first_order_form = false);

/// Odd-bracket + rank test for sigma-linearizability under drift feedback alpha.
struct SigmaCheck {
    bool passed = false;
    std::map<std::string, double> residuals;
};

SigmaCheck sigma_linearize_check(const StochasticSystem& s, const Expr& alpha,
                                 const DomainSampler& sampler, double tol);

/// Closed-loop verification in source coordinates: the transformed triplet
/// must match the integrator chain (drift/control exactly, dispersion constant
/// for the gsigma variants). Works without a symbolic inverse of T.
struct RoundTrip {
    bool passed = false;
    std::map<std::string, double> residuals;
    std::vector<double> sigma_constants;
};

RoundTrip verify_transformation(const StochasticSystem& s, const LinearizingTransformation& lt,
                                double tol);

/// Variant dispatcher used by the command line.
LinearizingTransformation linearize_pipeline(const StochasticSystem& s, Variant variant,
                                             std::optional<Expr> user_lambda = std::nullopt,
                                             std::optional<Expr> sigma_alpha = std::nullopt,
                                             double tol = 1e-8);

}  // namespace stoflin
