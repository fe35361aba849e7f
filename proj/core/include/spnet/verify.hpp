#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spnet/data.hpp"
#include "spnet/model.hpp"
#include "spnet/pruner.hpp"
#include "spnet/sensitivity.hpp"

namespace spnet {

/// Binomial allowance added to delta for a finite number of trials.
double binomial_slack(double delta, std::size_t trials);

struct LayerCheck {
    std::size_t producer = 0;
    std::size_t trials = 0;
    std::uint64_t m = 0;
    double eps = 0.0;
    double delta = 0.0;
    double violation_rate = 0.0;
    double slack = 0.0;
    bool pass = false;
    bool low_power = false;        // trials < 100
    bool incompressible = false;   // draw-count cap hit; deterministic keep verified
    std::string denominator;       // "z" (nonnegative layer) or "z+ + z-"
};

/// Re-prune the layer with a fresh stream per trial (through the same plan
/// logic the pruner deploys, including the keep-all fallback), draw a fresh
/// input, and test |zhat_i - z_i| <= eps * D_i for every entry.
LayerCheck check_layer(const NetworkModel& model, std::size_t producer_layer,
                       const SensitivityReport& report, double eps, double delta,
                       std::size_t trials, std::uint64_t seed, const Dataset& fresh_inputs);

struct UnbiasednessCheck {
    bool exact = false;            // exhaustive enumeration branch
    std::size_t entries = 0;
    double max_abs_bias = 0.0;     // exact branch: |E[zhat] - z|, entrywise max
    std::size_t outside_3sigma = 0;  // statistical branch
    std::size_t draws = 0;
    bool pass = false;
};

/// Exact branch (eta <= 6, m <= 3) enumerates all eta^m draw sequences;
/// otherwise a Monte-Carlo 3-sigma mean test.
UnbiasednessCheck check_unbiased(const NetworkModel& model, std::size_t producer_layer,
                                 const SensitivityReport& report, const DenseTensor& x,
                                 std::uint64_t m, std::uint64_t seed, std::size_t mc_draws = 100000);

struct UniformComparison {
    std::size_t trials = 0;
    std::uint64_t m = 0;
    double median_es = 0.0;
    double median_uniform = 0.0;
    double win_rate = 0.0;  // fraction of paired trials with ES error strictly lower
    std::vector<double> es_errors;
    std::vector<double> uniform_errors;
};

/// Paired trials of sensitivity-proportional vs uniform sampling at equal m;
/// per-trial metric is the max-entry relative error of the consumer
/// pre-activation.
UniformComparison compare_uniform(const NetworkModel& model, std::size_t producer_layer,
                                  const SensitivityReport& report, std::uint64_t m,
                                  std::size_t trials, const Dataset& inputs, std::uint64_t seed);

struct NetworkCheck {
    std::size_t inputs = 0;
    double eps = 0.0;
    double violation_rate = 0.0;
    std::size_t floored_entries = 0;  // |f(x)| below tau, excluded from the ratio
};

/// Fraction of held-out inputs with any output entry outside (1 +- eps) of
/// the reference model's output.
NetworkCheck check_network(const NetworkModel& orig, const NetworkModel& pruned, double eps,
                           const Dataset& inputs, double tau = 1e-12);

struct GuaranteeVerdict {
    std::vector<LayerCheck> layers;
    NetworkCheck network;
    double delta = 0.0;
    bool pass = false;
};

}  // namespace spnet
