#include "stoflin/sampling.hpp"

#include <atomic>
#include <cmath>

namespace stoflin {

namespace {
std::atomic<int> g_sample_points{64};
}

int default_sample_points() { return g_sample_points.load(); }
void set_default_sample_points(int points) {
    if (points < 1) throw std::invalid_argument("sample count must be positive");
    g_sample_points.store(points);
}

std::uint64_t mix_bits(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

std::uint64_t CounterRng::word(std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
    std::uint64_t h = mix_bits(seed_ ^ 0x6a09e667f3bcc909ull);
    h = mix_bits(h ^ a);
    h = mix_bits(h ^ b);
    h = mix_bits(h ^ c);
    return h;
}

double CounterRng::uniform01(std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
    return static_cast<double>(word(a, b, c) >> 11) * 0x1.0p-53;
}

double CounterRng::normal(std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
    // open-interval u1 so the log is finite
    const double u1 = (static_cast<double>(word(a, b, 2 * c) >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = uniform01(a, b, 2 * c + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

DomainSampler::DomainSampler(std::vector<Interval> b, std::uint64_t s) : box(std::move(b)), seed(s) {
    for (const Interval& iv : box)
        if (!(iv.lo <= iv.hi)) throw std::invalid_argument("empty sampling interval");
}

std::vector<double> DomainSampler::sample(std::uint64_t i) const {
    CounterRng rng(seed);
    std::vector<double> x(box.size());
    for (std::size_t d = 0; d < box.size(); ++d)
        x[d] = box[d].lo + (box[d].hi - box[d].lo) * rng.uniform01(i, d, 0);
    return x;
}

DomainSampler DomainSampler::unit_box(int dim, std::uint64_t seed) {
    return DomainSampler(std::vector<Interval>(static_cast<std::size_t>(dim), Interval{-1.0, 1.0}),
                         seed);
}

SampledDeviation sampled_deviation(const Expr& a, const Expr& b, const DomainSampler& sampler,
                                   const ParamMap& params, const EquivalenceOptions& opts) {
    SampledDeviation out;
    const int budget =
        static_cast<int>(std::ceil(opts.points / (1.0 - opts.max_skip_fraction))) + 1;
    Point p;
    p.params = params;
    for (int draw = 0; draw < budget && out.checked < opts.points; ++draw) {
        p.coords = sampler.sample(static_cast<std::uint64_t>(draw));
        try {
            const double va = evaluate(a, p);
            const double vb = evaluate(b, p);
            const double rel = std::abs(va - vb) / (1.0 + std::max(std::abs(va), std::abs(vb)));
            out.max_rel = std::max(out.max_rel, rel);
            ++out.checked;
        } catch (const DomainError&) {
            ++out.skipped;
        }
    }
    if (out.checked < opts.points) throw TooManyDomainFailures(out.skipped, out.checked + out.skipped);
    return out;
}

bool equivalent(const Expr& a, const Expr& b, const DomainSampler& sampler, double tol,
                const ParamMap& params, const EquivalenceOptions& opts) {
    if (tol <= 0.0) throw std::invalid_argument("tolerance must be positive");
    return sampled_deviation(a, b, sampler, params, opts).max_rel <= tol;
}

SampledStats sampled_stats(const Expr& e, const DomainSampler& sampler, const ParamMap& params,
                           const EquivalenceOptions& opts) {
    SampledStats out;
    const int budget =
        static_cast<int>(std::ceil(opts.points / (1.0 - opts.max_skip_fraction))) + 1;
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(opts.points));
    Point p;
    p.params = params;
    for (int draw = 0; draw < budget && static_cast<int>(values.size()) < opts.points; ++draw) {
        p.coords = sampler.sample(static_cast<std::uint64_t>(draw));
        try {
            values.push_back(evaluate(e, p));
        } catch (const DomainError&) {
            ++out.skipped;
        }
    }
    out.checked = static_cast<int>(values.size());
    if (out.checked < opts.points) throw TooManyDomainFailures(out.skipped, out.checked + out.skipped);
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= values.size();
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= values.size();
    out.mean = mean;
    out.stddev = std::sqrt(var);
    return out;
}

}  // namespace stoflin
