#pragma once

#include <map>
#include <optional>

#include "stoflin/system.hpp"

namespace stoflin {

// Deterministic random-model generators for the transformation property
// checks; everything is a pure function of (seed, id).

/// Polynomial/trig expression free of singular functions, depth-bounded.
Expr random_safe_expr(std::uint64_t seed, std::uint64_t id, int dim, int depth);

VectorField random_safe_field(std::uint64_t seed, std::uint64_t id, int dim, int depth);

/// Triangular diffeomorphism with a symbolic inverse and T(0) = 0; each
/// coordinate is an invertible scalar map of x_i plus a shear in x_1..x_{i-1}.
Diffeo random_invertible_diffeo(std::uint64_t seed, std::uint64_t id, int dim);

/// Random Ito triplet on the unit box with x0 = 0.
StochasticSystem random_ito_system(std::uint64_t seed, std::uint64_t id, int dim, int depth);

struct PropertyReport {
    std::string theorem;
    bool passed = false;
    double max_residual = 0.0;
    int cases = 0;
    std::map<std::string, double> details;
};

struct PropOptions {
    std::uint64_t seed = 0;
    int cases = 20;
    int points = 100;
    double tol = 1e-9;
};

/// Drift of the direct Ito transform vs the correcting-mapping route
/// (forward correction, Stratonovich transform, inverse correction),
/// compared at z = T(x) over sampled x. g and sigma images must agree
/// structurally.
PropertyReport verify_corr_diagram_on(const StochasticSystem& s, const Diffeo& T, int points,
                                      double tol);
PropertyReport verify_corr_diagram(const PropOptions& opts);

/// Same diagram with a regular feedback appended to both routes.
PropertyReport verify_feedback_diagram(const PropOptions& opts);

/// (1/2) L_sigma L_sigma T_i = P_sigma T_i - L_corr T_i, sampled in x.
PropertyReport verify_eq140_on(const StochasticSystem& s, const Diffeo& T, int points, double tol);
PropertyReport verify_eq140(const PropOptions& opts);

/// P_sigma T = T_* corr_sigma - corr of the pushed dispersion, sampled at z = T(x).
PropertyReport verify_eq215_on(const StochasticSystem& s, const Diffeo& T, int points, double tol);
PropertyReport verify_eq215(const PropOptions& opts);

/// Sequential Ito transforms equal the transform of the composition.
PropertyReport verify_composition_on(const StochasticSystem& s, const Diffeo& R, const Diffeo& S,
                                     int points, double tol);
PropertyReport verify_composition(const PropOptions& opts);

/// Dispatcher for the command-line verify verb; `doc_transform` supplies the
/// file's [transform] when present, otherwise diffeos are generated from the seed.
PropertyReport verify_theorem(const std::string& name, const StochasticSystem& s,
                              const std::optional<Diffeo>& doc_transform, const PropOptions& opts);

}  // namespace stoflin
