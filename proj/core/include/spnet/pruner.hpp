#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spnet/data.hpp"
#include "spnet/model.hpp"
#include "spnet/sensitivity.hpp"

namespace spnet {

enum class PruneMode { rand, partial, derand };

std::string prune_mode_name(PruneMode m);
PruneMode prune_mode_from_name(const std::string& name);

/// Draws needed so that 2*exp(-eps^2 m / (S K (6+2 eps))) <= delta/(2 eta_next),
/// i.e. m = ceil(S K (6+2 eps) ln(4 eta_next / delta) / eps^2). Unclamped.
double sample_complexity_raw(double eps, double delta, double s_sum, double K, std::size_t eta_next);
/// Same, saturated to int64 range for actual sampling loops.
std::uint64_t sample_complexity(double eps, double delta, double s_sum, double K, std::size_t eta_next);

/// Residual draw count for the hybrid scheme: the remaining mass s_rest
/// enters the variance bound once more through min{1, 3K s_rest}, and the
/// log argument is 8 eta*:
/// ceil(s_rest K (6 min{1, 3K s_rest} + 2 eps) ln(8 eta*/delta) / eps^2).
double det_sample_complexity_raw(double eps, double delta, double s_rest, double K,
                                 std::size_t eta_star);

/// E[#distinct indices] of m with-replacement draws from p:
/// n - sum_j (1 - p_j)^m.
double expected_unique(const std::vector<double>& p, double m);

/// Top-k indices by sensitivity, ties broken toward the lower index.
std::vector<std::size_t> top_k_by_sensitivity(const std::vector<double>& s, std::size_t k);

struct HybridAdvantage {
    bool better = false;
    double m = 0.0;        // full-sampling draw count (4 eta* log form)
    double m_prime = 0.0;  // residual draw count (8 eta* log form)
    double lhs = 0.0;      // expected unsampled mass under the hybrid scheme
    double rhs = 0.0;      // same under pure sampling, plus the McDiarmid slack
};

/// Is keeping the top k feature maps deterministically and sampling the rest
/// expected to retain fewer unique feature maps at the same guarantee?
HybridAdvantage hybrid_advantage(const std::vector<double>& s, std::size_t k, double eps,
                                 double delta, double K, std::size_t eta_star);

struct PrunePlan {
    double eps_layer = 0.1;
    double delta_layer = 0.05;
    std::uint64_t m = 1;                // draws (rand/partial); deterministic keeps (derand)
    std::vector<std::size_t> det_keep;  // partial/derand
    PruneMode mode = PruneMode::rand;
    std::uint64_t seed = 0;
    bool incompressible = false;        // draw-count cap hit; layer kept whole
};

/// Fill a plan for one layer: sample count from the Bernstein bound, the
/// deterministic keep set for partial/derand, and the keep-all fallback when
/// sampling could not shrink the layer anyway. k: deterministic keeps for
/// partial (nullopt scans for the largest k with hybrid_advantage).
PrunePlan make_plan(const LayerSensitivity& sens, double eps, double delta, PruneMode mode,
                    std::optional<std::size_t> k, double K, std::size_t eta_star, std::uint64_t seed);

struct LayerPruneResult {
    std::size_t producer = 0;
    std::vector<std::size_t> kept;           // sorted unique kept feature maps
    std::vector<std::uint64_t> multiplicity; // per kept entry; 0 marks a deterministic keep
    std::vector<double> reweight;            // factor applied to the consumer channel
    std::size_t unique_kept = 0;
    std::uint64_t realized_m = 0;
    bool incompressible = false;
};

struct PruneOutcome {
    NetworkModel model;
    std::vector<LayerPruneResult> layers;
};

/// Alg-style single-layer prune: sampled channels of the consumer are
/// accumulated with weight 1/(m p_j) per draw, sampled producer filters are
/// kept unreweighed, everything unsampled is zeroed. Deterministic keeps are
/// never reweighed.
PruneOutcome prune_layer(const NetworkModel& model, std::size_t producer_layer,
                         const SensitivityReport& report, const PrunePlan& plan);

/// Prune every prunable layer; the RNG stream of layer l is derived from
/// (seed, l), so results do not depend on pruning order.
PruneOutcome prune_model(const NetworkModel& model, const SensitivityReport& report,
                         const std::vector<PrunePlan>& plans);

enum class BaselineMethod { ft, softnet, thinet };

BaselineMethod baseline_from_name(const std::string& name);

/// FT: keep filters with the largest Frobenius norm. SoftNet: entrywise l1.
/// ThiNet: greedily grow the kept set minimizing the max-abs pre-activation
/// error over the calibration set. No reweighing.
PruneOutcome baseline_prune(const NetworkModel& model, std::size_t producer_layer,
                            BaselineMethod method, double keep_fraction, const Dataset& calib);

}  // namespace spnet
