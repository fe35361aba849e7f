#pragma once

#include <cstdint>
#include <vector>

#include "spnet/data.hpp"
#include "spnet/model.hpp"
#include "spnet/sensitivity.hpp"

namespace spnet {

/// Per weighted layer: empirical error-amplification constant
/// (z+ + z-)/|z| maximized over calibration points and output entries, and
/// its forward (suffix) product.
struct DeltaProfile {
    std::vector<double> delta_hat;      // one per weighted layer
    std::vector<double> delta_forward;  // suffix products, same indexing
    double tau = 1e-12;
    std::size_t floored_entries = 0;    // |z| < tau occurrences
};

DeltaProfile delta_profile(const NetworkModel& model, const Dataset& calib, double tau = 1e-12);

/// Everything allocate() needs to size one prunable layer.
struct LayerBudgetInput {
    std::size_t eta = 0;
    std::size_t eta_next = 0;
    double s_sum = 0.0;
    std::vector<double> p;
    double downstream_amplification = 1.0;  // product of delta_hat from the consumer on
};

struct LayerAllocation {
    double eps_layer = 0.0;
    double m = 0.0;       // draw count (integer-valued, double for range)
    std::size_t n = 0;    // expected kept feature maps
};

struct Allocation {
    double eps_star = 0.0;
    std::vector<LayerAllocation> layers;
    std::size_t total = 0;
    std::size_t budget = 0;
    bool feasible = true;          // false: even the loosest eps exceeds the budget
    std::size_t min_achievable = 0;  // reported when infeasible
    std::vector<std::pair<double, std::size_t>> trace;  // (eps, total) per probe
};

/// Binary search over eps: each layer gets eps / downstream_amplification,
/// a Bernstein draw count at delta/L, and n = round(expected unique keeps).
/// Stops when the total is within one feature map of the budget or the
/// interval is exhausted.
Allocation allocate(const std::vector<LayerBudgetInput>& layers, std::size_t budget, double delta,
                    double K = 1.0);

/// Adapter: budget inputs from a sensitivity report and a delta profile.
std::vector<LayerBudgetInput> budget_inputs(const NetworkModel& model, const SensitivityReport& report,
                                            const DeltaProfile& profile);

}  // namespace spnet
