#include "stoflin/sde.hpp"

#include <cmath>
#include <cstring>
#include <ostream>
#include <thread>

namespace stoflin {

double TrajectoryEnsemble::exit_fraction() const {
    if (n_paths == 0) return 0.0;
    int exited = 0;
    for (int p = 0; p < n_paths; ++p)
        if (!completed(p)) ++exited;
    return static_cast<double>(exited) / static_cast<double>(n_paths);
}

namespace {

struct CompiledSystem {
    std::vector<CompiledExpr> f, g, sigma;
    std::optional<CompiledExpr> control;
    int dim;

    explicit CompiledSystem(const StochasticSystem& s, const SimConfig& cfg) : dim(s.dim) {
        for (int i = 0; i < s.dim; ++i) {
            f.push_back(compile(s.f[i], s.dim, s.params));
            g.push_back(compile(s.g[i], s.dim, s.params));
            sigma.push_back(compile(s.sigma.at(i, 0), s.dim, s.params));
        }
        if (cfg.control) control = compile(*cfg.control, s.dim, s.params);
    }

    // drift a = f + g u into out
    void drift(std::span<const double> x, double t, std::span<double> out) const {
        const double u = control ? control->eval(x, t) : 0.0;
        for (int i = 0; i < dim; ++i) {
            double v = f[static_cast<std::size_t>(i)].eval(x, t);
            if (u != 0.0) v += g[static_cast<std::size_t>(i)].eval(x, t) * u;
            out[static_cast<std::size_t>(i)] = v;
        }
    }
    void noise(std::span<const double> x, double t, std::span<double> out) const {
        for (int i = 0; i < dim; ++i)
            out[static_cast<std::size_t>(i)] = sigma[static_cast<std::size_t>(i)].eval(x, t);
    }
};

void run_paths(const CompiledSystem& cs, const StochasticSystem& s, const SimConfig& cfg,
               TrajectoryEnsemble& e, int p_begin, int p_end) {
    const int n = s.dim;
    const int steps = e.steps;
    const bool heun = s.convention == Convention::Stratonovich;
    const CounterRng rng(cfg.base_seed);
    const double sqdt = std::sqrt(cfg.dt);

    std::vector<double> x(static_cast<std::size_t>(n)), a(static_cast<std::size_t>(n)),
        b(static_cast<std::size_t>(n)), xp(static_cast<std::size_t>(n)),
        a2(static_cast<std::size_t>(n)), b2(static_cast<std::size_t>(n));

    for (int p = p_begin; p < p_end; ++p) {
        x.assign(s.x0.begin(), s.x0.end());
        const auto store = [&](int grid) {
            double* dst = &e.data[(static_cast<std::size_t>(p) * static_cast<std::size_t>(steps + 1) +
                                   static_cast<std::size_t>(grid)) *
                                  static_cast<std::size_t>(n)];
            std::memcpy(dst, x.data(), sizeof(double) * static_cast<std::size_t>(n));
        };
        store(0);
        int exit_at = steps + 1;
        for (int k = 0; k < steps; ++k) {
            const double t = e.times[static_cast<std::size_t>(k)];
            const double dW =
                rng.normal(static_cast<std::uint64_t>(p), static_cast<std::uint64_t>(k), 0) * sqdt;
            try {
                cs.drift(x, t, a);
                cs.noise(x, t, b);
                if (!heun) {
                    for (int i = 0; i < n; ++i)
                        x[static_cast<std::size_t>(i)] +=
                            a[static_cast<std::size_t>(i)] * cfg.dt +
                            b[static_cast<std::size_t>(i)] * dW;
                } else {
                    for (int i = 0; i < n; ++i)
                        xp[static_cast<std::size_t>(i)] =
                            x[static_cast<std::size_t>(i)] +
                            a[static_cast<std::size_t>(i)] * cfg.dt +
                            b[static_cast<std::size_t>(i)] * dW;
                    cs.drift(xp, t + cfg.dt, a2);
                    cs.noise(xp, t + cfg.dt, b2);
                    for (int i = 0; i < n; ++i)
                        x[static_cast<std::size_t>(i)] +=
                            0.5 * (a[static_cast<std::size_t>(i)] + a2[static_cast<std::size_t>(i)]) *
                                cfg.dt +
                            0.5 * (b[static_cast<std::size_t>(i)] + b2[static_cast<std::size_t>(i)]) *
                                dW;
                }
                bool finite = true;
                for (double v : x) finite = finite && std::isfinite(v);
                if (!finite) throw DomainError("state left the finite range");
            } catch (const DomainError&) {
                exit_at = k + 1;
                // freeze the remaining grid at the last valid state
                x.assign(&e.data[(static_cast<std::size_t>(p) * static_cast<std::size_t>(steps + 1) +
                                  static_cast<std::size_t>(k)) *
                                 static_cast<std::size_t>(n)],
                         &e.data[(static_cast<std::size_t>(p) * static_cast<std::size_t>(steps + 1) +
                                  static_cast<std::size_t>(k)) *
                                 static_cast<std::size_t>(n)] +
                             n);
                for (int rest = k + 1; rest <= steps; ++rest) store(rest);
                break;
            }
            store(k + 1);
        }
        e.exit_step[static_cast<std::size_t>(p)] = exit_at;
    }
}

}  // namespace

TrajectoryEnsemble simulate(const StochasticSystem& s, const SimConfig& cfg) {
    if (cfg.dt <= 0.0 || cfg.t_end <= 0.0 || cfg.dt > cfg.t_end)
        throw PreconditionError("need 0 < dt <= t_end");
    if (cfg.n_paths < 1) throw PreconditionError("need at least one path");
    const int steps = static_cast<int>(std::llround(cfg.t_end / cfg.dt));
    const std::uint64_t total =
        static_cast<std::uint64_t>(steps) * static_cast<std::uint64_t>(cfg.n_paths);
    if (total > cfg.step_budget) throw PreconditionError("simulation budget exceeded");

    TrajectoryEnsemble e;
    e.convention = s.convention;
    e.base_seed = cfg.base_seed;
    e.n_paths = cfg.n_paths;
    e.dim = s.dim;
    e.steps = steps;
    e.times.resize(static_cast<std::size_t>(steps + 1));
    for (int k = 0; k <= steps; ++k) e.times[static_cast<std::size_t>(k)] = k * cfg.dt;
    e.data.resize(static_cast<std::size_t>(cfg.n_paths) * static_cast<std::size_t>(steps + 1) *
                  static_cast<std::size_t>(s.dim));
    e.exit_step.resize(static_cast<std::size_t>(cfg.n_paths));

    const CompiledSystem cs(s, cfg);
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const int n_threads =
        total > 2'000'000 ? static_cast<int>(std::min<unsigned>(hw, 8)) : 1;
    if (n_threads == 1) {
        run_paths(cs, s, cfg, e, 0, cfg.n_paths);
    } else {
        std::vector<std::thread> pool;
        const int chunk = (cfg.n_paths + n_threads - 1) / n_threads;
        for (int t = 0; t < n_threads; ++t) {
            const int lo = t * chunk;
            const int hi = std::min(cfg.n_paths, lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back([&, lo, hi] { run_paths(cs, s, cfg, e, lo, hi); });
        }
        for (std::thread& th : pool) th.join();
    }
    return e;
}

TrajectoryEnsemble pushforward_paths(const TrajectoryEnsemble& e, const Diffeo& T,
                                     const ParamMap& params) {
    if (T.dim != e.dim) throw DimensionMismatch("pushforward dimension mismatch");
    TrajectoryEnsemble out = e;
    std::vector<CompiledExpr> comp;
    comp.reserve(static_cast<std::size_t>(T.dim));
    for (const Expr& t : T.forward) comp.push_back(compile(t, T.dim, params));
    std::vector<double> z(static_cast<std::size_t>(e.dim), 0.0);
    for (int p = 0; p < e.n_paths; ++p) {
        int exit_at = e.exit_step[static_cast<std::size_t>(p)];
        std::fill(z.begin(), z.end(), 0.0);
        for (int k = 0; k <= e.steps; ++k) {
            if (k < exit_at) {
                const double* src =
                    &e.data[(static_cast<std::size_t>(p) * static_cast<std::size_t>(e.steps + 1) +
                             static_cast<std::size_t>(k)) *
                            static_cast<std::size_t>(e.dim)];
                const std::span<const double> x(src, static_cast<std::size_t>(e.dim));
                try {
                    std::vector<double> znew(static_cast<std::size_t>(e.dim));
                    for (int c = 0; c < e.dim; ++c)
                        znew[static_cast<std::size_t>(c)] = comp[static_cast<std::size_t>(c)].eval(x);
                    z = std::move(znew);
                } catch (const DomainError&) {
                    exit_at = k;  // previous grid point was the last valid one
                }
            }
            double* dst =
                &out.data[(static_cast<std::size_t>(p) * static_cast<std::size_t>(e.steps + 1) +
                           static_cast<std::size_t>(k)) *
                          static_cast<std::size_t>(e.dim)];
            std::memcpy(dst, z.data(), sizeof(double) * static_cast<std::size_t>(e.dim));
        }
        out.exit_step[static_cast<std::size_t>(p)] = exit_at;
    }
    return out;
}

namespace {
void check_same_grid(const TrajectoryEnsemble& a, const TrajectoryEnsemble& b) {
    if (a.steps != b.steps || a.dim != b.dim || a.n_paths != b.n_paths)
        throw DimensionMismatch("ensembles do not share a grid");
    for (int k = 0; k <= a.steps; ++k)
        if (std::abs(a.times[static_cast<std::size_t>(k)] - b.times[static_cast<std::size_t>(k)]) >
            1e-12)
            throw DimensionMismatch("ensembles do not share a time grid");
}

std::vector<int> weak_indices(int steps) {
    std::vector<int> idx;
    const int n_marks = std::min(steps, 10);
    for (int m = 1; m <= n_marks; ++m) idx.push_back(steps * m / n_marks);
    return idx;
}
}  // namespace

CompareReport compare_ensembles(const TrajectoryEnsemble& a, const TrajectoryEnsemble& b,
                                CompareMode mode, double tol) {
    check_same_grid(a, b);
    CompareReport rep;
    rep.mode = mode;
    rep.exit_fraction = std::max(a.exit_fraction(), b.exit_fraction());

    if (mode == CompareMode::Pathwise) {
        if (a.base_seed != b.base_seed)
            throw PreconditionError("pathwise comparison requires identical seeds");
        for (int p = 0; p < a.n_paths; ++p) {
            if (!a.completed(p) || !b.completed(p)) continue;
            for (int k = 0; k <= a.steps; ++k)
                for (int c = 0; c < a.dim; ++c)
                    rep.max_pathwise =
                        std::max(rep.max_pathwise, std::abs(a.at(p, k, c) - b.at(p, k, c)));
        }
        rep.passed = rep.max_pathwise <= tol;
        return rep;
    }

    for (int k : weak_indices(a.steps)) {
        WeakPoint wp;
        wp.t = a.times[static_cast<std::size_t>(k)];
        for (int c = 0; c < a.dim; ++c) {
            double ma = 0, mb = 0, qa = 0, qb = 0;
            int na = 0, nb = 0;
            for (int p = 0; p < a.n_paths; ++p) {
                if (a.completed(p)) {
                    const double v = a.at(p, k, c);
                    ma += v;
                    qa += v * v;
                    ++na;
                }
                if (b.completed(p)) {
                    const double v = b.at(p, k, c);
                    mb += v;
                    qb += v * v;
                    ++nb;
                }
            }
            if (na == 0 || nb == 0) continue;
            ma /= na;
            mb /= nb;
            qa /= na;
            qb /= nb;
            const double va = std::max(0.0, qa - ma * ma);
            const double vb = std::max(0.0, qb - mb * mb);
            const double se = std::sqrt(va / na + vb / nb);
            if (std::abs(ma - mb) >= std::abs(wp.dmean)) {
                wp.dmean = ma - mb;
                wp.stderr_ = se;
            }
            // second moments; their sampling error estimated from fourth moments
            double fa = 0, fb = 0;
            for (int p = 0; p < a.n_paths; ++p) {
                if (a.completed(p)) {
                    const double v = a.at(p, k, c);
                    fa += v * v * v * v;
                }
                if (b.completed(p)) {
                    const double v = b.at(p, k, c);
                    fb += v * v * v * v;
                }
            }
            fa /= na;
            fb /= nb;
            const double se2 =
                std::sqrt(std::max(0.0, fa - qa * qa) / na + std::max(0.0, fb - qb * qb) / nb);
            if (std::abs(qa - qb) >= std::abs(wp.dmean2)) {
                wp.dmean2 = qa - qb;
                wp.stderr2 = se2;
            }
        }
        if (wp.stderr_ > 0.0)
            rep.max_weak_z = std::max(rep.max_weak_z, std::abs(wp.dmean) / wp.stderr_);
        rep.weak.push_back(wp);
    }
    rep.passed = rep.max_weak_z <= tol;
    return rep;
}

CommutationReport verify_commutation(const StochasticSystem& s_ito, const Diffeo& T,
                                     const SimConfig& cfg) {
    if (s_ito.convention != Convention::Ito)
        throw PreconditionError("commutation check expects an Ito system");
    if (!T.has_inverse()) throw PreconditionError("commutation check requires an invertible T");

    StochasticSystem z_ito = coord_transform(s_ito, T, /*require_equilibrium_preserving=*/false);
    StochasticSystem z_strat =
        coord_transform(apply_correcting(s_ito, CorrDirection::Forward), T, false);

    SimConfig cz = cfg;
    if (cfg.control && T.has_inverse()) {
        cz.control = simplify(substitute_vars(*cfg.control, *T.inverse));
    }

    CommutationReport rep;
    for (int level = 0; level < cfg.order_levels; ++level) {
        SimConfig ca = cfg;
        SimConfig cb = cz;
        const double shrink = std::pow(cfg.order_factor, level);
        ca.dt = cfg.dt / shrink;
        cb.dt = cfg.dt / shrink;

        const TrajectoryEnsemble A = pushforward_paths(simulate(s_ito, ca), T, s_ito.params);
        const TrajectoryEnsemble B = simulate(z_ito, cb);
        rep.exit_fraction = std::max(rep.exit_fraction, A.exit_fraction());
        rep.exit_fraction = std::max(rep.exit_fraction, B.exit_fraction());

        double rms = 0.0;
        int counted = 0;
        double level_max = 0.0;
        for (int p = 0; p < A.n_paths; ++p) {
            if (!A.completed(p) || !B.completed(p)) continue;
            double endpoint = 0.0;
            for (int k = 0; k <= A.steps; ++k)
                for (int c = 0; c < A.dim; ++c) {
                    const double d = std::abs(A.at(p, k, c) - B.at(p, k, c));
                    level_max = std::max(level_max, d);
                    if (k == A.steps) endpoint = std::max(endpoint, d);
                }
            rms += endpoint * endpoint;
            ++counted;
        }
        rms = counted ? std::sqrt(rms / counted) : 0.0;
        rep.rms_deviations.push_back(rms);
        rep.dt_levels.push_back(ca.dt);

        if (level == 0) {
            rep.max_pathwise = level_max;
            const TrajectoryEnsemble C = simulate(z_strat, cb);
            rep.exit_fraction = std::max(rep.exit_fraction, C.exit_fraction());
            for (int p = 0; p < A.n_paths; ++p) {
                if (!A.completed(p) || !C.completed(p)) continue;
                for (int k = 0; k <= A.steps; ++k)
                    for (int c = 0; c < A.dim; ++c)
                        rep.max_pathwise_strat = std::max(
                            rep.max_pathwise_strat, std::abs(A.at(p, k, c) - C.at(p, k, c)));
            }
            const CompareReport weak = compare_ensembles(A, B, CompareMode::Weak, 3.0);
            rep.weak = weak.weak;
        }
    }

    // least-squares slope of log(rms) against log(dt)
    int m = 0;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < rep.rms_deviations.size(); ++i) {
        if (rep.rms_deviations[i] <= 0.0) continue;
        const double lx = std::log(rep.dt_levels[i]);
        const double ly = std::log(rep.rms_deviations[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        ++m;
    }
    rep.order_estimate = m >= 2 ? (m * sxy - sx * sy) / (m * sxx - sx * sx) : 0.0;
    return rep;
}

void write_ensemble_csv(std::ostream& out, const TrajectoryEnsemble& e) {
    out << "path,step,t";
    for (int c = 1; c <= e.dim; ++c) out << ",x" << c;
    out << "\n";
    for (int p = 0; p < e.n_paths; ++p) {
        const int last = std::min(e.steps, e.exit_step[static_cast<std::size_t>(p)] - 1);
        for (int k = 0; k <= last; ++k) {
            out << p << "," << k << "," << format_double(e.times[static_cast<std::size_t>(k)]);
            for (int c = 0; c < e.dim; ++c) out << "," << format_double(e.at(p, k, c));
            out << "\n";
        }
    }
}

}  // namespace stoflin
