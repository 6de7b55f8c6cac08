#pragma once

#include <iosfwd>
#include <optional>

#include "stoflin/system.hpp"

namespace stoflin {

struct SimConfig {
    double t_end = 1.0;
    double dt = 0.01;
    int n_paths = 1;
    std::uint64_t base_seed = 0;
    std::optional<Expr> control;              // u(x, t); state feedback allowed
    std::uint64_t step_budget = 400'000'000;  // n_paths * steps ceiling
    int order_levels = 3;                     // dt refinements in verify_commutation
    double order_factor = 2.0;                // dt shrink factor between levels
};

/// Sampled paths on a shared grid. Path p is reproducible from
/// (base_seed, p); a path that left the expression domain is frozen at its
/// last valid state and flagged via exit_step.
struct TrajectoryEnsemble {
    Convention convention = Convention::Ito;
    std::uint64_t base_seed = 0;
    int n_paths = 0;
    int dim = 0;
    int steps = 0;               // increments; the grid has steps+1 points
    std::vector<double> times;   // steps+1 entries
    std::vector<double> data;    // [path][grid point][component]
    std::vector<int> exit_step;  // first invalid grid index; steps+1 if completed

    double at(int p, int s, int c) const {
        return data[(static_cast<std::size_t>(p) * static_cast<std::size_t>(steps + 1) +
                     static_cast<std::size_t>(s)) *
                        static_cast<std::size_t>(dim) +
                    static_cast<std::size_t>(c)];
    }
    bool completed(int p) const { return exit_step[static_cast<std::size_t>(p)] > steps; }
    double exit_fraction() const;
};

/// Euler-Maruyama for Ito (and deterministic) systems, Heun for Stratonovich.
/// Brownian increments come from a counter generator keyed by
/// (base_seed, path, step), so results do not depend on scheduling.
TrajectoryEnsemble simulate(const StochasticSystem& s, const SimConfig& cfg);

/// Applies T pointwise to every stored state; grid and seeds preserved.
TrajectoryEnsemble pushforward_paths(const TrajectoryEnsemble& e, const Diffeo& T,
                                     const ParamMap& params);

struct WeakPoint {
    double t = 0.0;
    double dmean = 0.0;    // largest per-component mean difference
    double stderr_ = 0.0;  // pooled standard error of that component
    double dmean2 = 0.0;   // second-moment difference
    double stderr2 = 0.0;
};

enum class CompareMode { Pathwise, Weak };

struct CompareReport {
    CompareMode mode = CompareMode::Pathwise;
    double max_pathwise = 0.0;
    std::vector<WeakPoint> weak;
    double max_weak_z = 0.0;
    double exit_fraction = 0.0;
    bool passed = false;  // pathwise: max <= tol; weak: max z-score <= tol
};

CompareReport compare_ensembles(const TrajectoryEnsemble& a, const TrajectoryEnsemble& b,
                                CompareMode mode, double tol);

/// Simulates the transformation diagram on sample paths: A = T(paths of the
/// source Ito system), B = paths of the Ito-transformed system, C = Heun paths
/// of the corrected-route Stratonovich system, all with identical increments.
struct CommutationReport {
    double max_pathwise = 0.0;        // A vs B at the base step size
    double max_pathwise_strat = 0.0;  // A vs C
    std::vector<WeakPoint> weak;
    double exit_fraction = 0.0;
    double order_estimate = 0.0;          // slope of log RMS(A-B) against log dt
    std::vector<double> rms_deviations;   // per refinement level
    std::vector<double> dt_levels;
};

CommutationReport verify_commutation(const StochasticSystem& s_ito, const Diffeo& T,
                                     const SimConfig& cfg);

/// CSV export: header `path,step,t,x1..xn`, one row per stored grid point.
void write_ensemble_csv(std::ostream& out, const TrajectoryEnsemble& e);

}  // namespace stoflin
