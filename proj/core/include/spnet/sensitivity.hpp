#pragma once

#include <cstdint>
#include <vector>

#include "spnet/data.hpp"
#include "spnet/model.hpp"

namespace spnet {

struct LayerSensitivity {
    std::size_t producer = 0;  // layer index of the pruned filters
    std::size_t consumer = 0;
    std::size_t eta = 0;       // feature maps
    std::size_t units = 0;     // consumer output units
    std::vector<double> s;     // per-feature-map sensitivity, in [0,1]
    double s_sum = 0.0;
    std::vector<double> p;     // s / s_sum (empty when s_sum == 0)
    bool all_zero = false;     // no calibration point activated anything
    bool nonnegative = true;   // no negative w*a term seen over calibration
};

struct SensitivityReport {
    std::vector<LayerSensitivity> layers;  // one per prunable pair, in order
    std::size_t calib_size = 0;
    double K = 1.0;
    double K_prime = 1.0;

    const LayerSensitivity& for_producer(std::size_t layer_index) const;
};

/// Per-edge relative contribution over its own sign class (0/0 := 0, empty
/// sign classes excluded); each entry lies in [0,1].
std::vector<double> edge_sensitivity(const std::vector<double>& w_row, const std::vector<double>& a);

/// max over calibration points and consumer units of the edge sensitivities;
/// producer and consumer must be dense.
std::vector<double> neuron_sensitivity(const NetworkModel& model, std::size_t producer_layer,
                                       const Dataset& calib);

/// Patch-wise feature-map sensitivity for a conv consumer; channel terms are
/// sign-split at channel granularity.
std::vector<double> channel_sensitivity(const NetworkModel& model, std::size_t producer_layer,
                                        const Dataset& calib);

SensitivityReport compute_report(const NetworkModel& model, const Dataset& calib,
                                 double K = 1.0, double K_prime = 1.0);

/// Empirical fit of the activation-CDF tail condition: smallest K such that
/// at most an exp(-1/K') fraction of the observed per-feature-map maxima
/// fall at or below M_j / K. Diagnostic only.
double suggest_K(const NetworkModel& model, const Dataset& calib, double K_prime);

}  // namespace spnet
