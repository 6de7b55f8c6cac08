#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "stoflin/expr.hpp"

namespace stoflin {

/// SplitMix64 finalizer; the building block of the counter-based generators.
std::uint64_t mix_bits(std::uint64_t z);

/// Counter-based generator: every draw is a pure function of (seed, a, b, c),
/// so parallel scheduling cannot change any stream.
class CounterRng {
  public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    double uniform01(std::uint64_t a, std::uint64_t b, std::uint64_t c) const;  // [0,1)
    /// Standard normal via Box-Muller on lanes (2c, 2c+1).
    double normal(std::uint64_t a, std::uint64_t b, std::uint64_t c) const;
    std::uint64_t seed() const { return seed_; }

  private:
    std::uint64_t word(std::uint64_t a, std::uint64_t b, std::uint64_t c) const;
    std::uint64_t seed_;
};

struct Interval {
    double lo = -1.0;
    double hi = 1.0;
};

/// Uniform sampler over a coordinate box; reproducible given the seed.
struct DomainSampler {
    std::vector<Interval> box;
    std::uint64_t seed = 0;

    DomainSampler() = default;
    DomainSampler(std::vector<Interval> b, std::uint64_t s);

    int dim() const { return static_cast<int>(box.size()); }
    std::vector<double> sample(std::uint64_t i) const;

    static DomainSampler unit_box(int dim, std::uint64_t seed);
};

struct TooManyDomainFailures : std::runtime_error {
    TooManyDomainFailures(int skipped, int drawn)
        : std::runtime_error("too many domain failures while sampling: " + std::to_string(skipped) +
                             " of " + std::to_string(drawn)) {}
};

/// Process-wide default for sampled checks; the CLI exposes it as --samples.
int default_sample_points();
void set_default_sample_points(int points);

struct EquivalenceOptions {
    int points = default_sample_points();  // required number of successfully checked points
    double max_skip_fraction = 0.2;        // tolerated fraction of domain-error samples
};

struct SampledDeviation {
    double max_rel = 0.0;  // max |a-b| / (1 + max(|a|,|b|))
    int checked = 0;
    int skipped = 0;
};

/// Evaluates |a-b| at sampled points, skipping domain errors on either side.
SampledDeviation sampled_deviation(const Expr& a, const Expr& b, const DomainSampler& sampler,
                                   const ParamMap& params = {}, const EquivalenceOptions& opts = {});

/// True iff a and b agree to relative tolerance tol on the sampled box.
bool equivalent(const Expr& a, const Expr& b, const DomainSampler& sampler, double tol,
                const ParamMap& params = {}, const EquivalenceOptions& opts = {});

/// Sampled statistics of a single expression (used for constancy tests).
struct SampledStats {
    double mean = 0.0;
    double stddev = 0.0;
    int checked = 0;
    int skipped = 0;
};

SampledStats sampled_stats(const Expr& e, const DomainSampler& sampler, const ParamMap& params = {},
                           const EquivalenceOptions& opts = {});

}  // namespace stoflin
