#include "spnet/allocator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "spnet/pruner.hpp"

namespace spnet {

DeltaProfile delta_profile(const NetworkModel& model, const Dataset& calib, double tau) {
    if (calib.count() == 0) throw std::invalid_argument("delta_profile: empty calibration set");
    const auto widx = weighted_layer_indices(model);
    DeltaProfile prof;
    prof.tau = tau;
    prof.delta_hat.assign(widx.size(), 1.0);

    // Each weighted layer's own output amplification; pairs give per-entry
    // signed sums for every layer that consumes prunable feature maps. The
    // first weighted layer reads raw inputs, handled via a synthetic pair.
    const auto pairs = prunable_pairs(model);
    for (std::size_t c = 0; c < calib.count(); ++c) {
        ForwardTrace trace;
        forward(model, calib.sample(c), &trace);
        for (std::size_t w = 0; w < widx.size(); ++w) {
            const std::size_t li = widx[w];
            PrunePair view;
            bool have = false;
            for (const PrunePair& p : pairs) {
                if (p.consumer == li) {
                    view = p;
                    have = true;
                    break;
                }
            }
            if (!have) {
                // Build a consumer view over the layer's raw input.
                const Layer& l = model.layers[li];
                view.producer = li;  // unused
                view.consumer = li;
                view.units = l.filters();
                if (l.kind == LayerKind::dense) {
                    view.eta = l.weights.dim(1);
                    view.group = 1;
                } else {
                    view.eta = l.weights.dim(1);
                    view.group = 1;
                }
            }
            const DenseTensor& a = trace.input_of(li);
            double worst = 1.0;
            std::size_t floored = 0;
            for_each_consumer_entry(model, view, a, [&](const SignedTerms& terms) {
                double zp = 0.0, zn = 0.0;
                for (double v : terms.pos) zp += v;
                for (double v : terms.neg) zn += v;
                const double zneg = -zn;  // magnitude of the negative part
                const double z = zp - zneg;
                if (zp + zneg == 0.0) return;  // nothing flows through this entry
                const double denom = std::max(std::fabs(z), tau);
                if (std::fabs(z) < tau) ++floored;
                worst = std::max(worst, (zp + zneg) / denom);
            });
            prof.delta_hat[w] = std::max(prof.delta_hat[w], worst);
            prof.floored_entries += floored;
        }
    }

    prof.delta_forward.assign(widx.size(), 1.0);
    double acc = 1.0;
    for (std::size_t w = widx.size(); w-- > 0;) {
        acc *= prof.delta_hat[w];
        prof.delta_forward[w] = acc;
    }
    return prof;
}

std::vector<LayerBudgetInput> budget_inputs(const NetworkModel& model, const SensitivityReport& report,
                                            const DeltaProfile& profile) {
    const auto widx = weighted_layer_indices(model);
    std::vector<LayerBudgetInput> in;
    for (const LayerSensitivity& sens : report.layers) {
        LayerBudgetInput li;
        li.eta = sens.eta;
        li.eta_next = sens.units;
        li.s_sum = sens.s_sum;
        li.p = sens.p;
        // Amplification of everything downstream of the pruned estimate:
        // the consumer layer and onward.
        for (std::size_t w = 0; w < widx.size(); ++w) {
            if (widx[w] == sens.consumer) li.downstream_amplification = profile.delta_forward[w];
        }
        in.push_back(std::move(li));
    }
    return in;
}

namespace {

std::size_t total_for_eps(const std::vector<LayerBudgetInput>& layers, double eps, double delta,
                          double K, std::vector<LayerAllocation>* out) {
    const double per_layer_delta = delta / static_cast<double>(layers.size());
    std::size_t total = 0;
    if (out) out->clear();
    for (const LayerBudgetInput& l : layers) {
        const double eps_l = std::clamp(eps / l.downstream_amplification, 1e-300, 1.0 - 1e-9);
        const double m = sample_complexity_raw(eps_l, per_layer_delta, l.s_sum, K, l.eta_next);
        double n = expected_unique(l.p, m);
        std::size_t n_int = static_cast<std::size_t>(std::llround(n));
        n_int = std::max<std::size_t>(1, std::min(n_int, l.eta));
        total += n_int;
        if (out) out->push_back({eps_l, m, n_int});
    }
    return total;
}

}  // namespace

Allocation allocate(const std::vector<LayerBudgetInput>& layers, std::size_t budget, double delta,
                    double K) {
    if (layers.empty()) throw std::invalid_argument("allocate: no prunable layers");
    std::size_t total_filters = 0;
    for (const LayerBudgetInput& l : layers) {
        if (l.s_sum <= 0.0) throw std::invalid_argument("allocate: layer with zero sensitivity mass");
        total_filters += l.eta;
    }
    if (budget < layers.size()) {
        throw std::invalid_argument("allocate: budget must allow at least one feature map per layer");
    }
    if (budget > total_filters) {
        throw std::invalid_argument("allocate: budget exceeds the total feature-map count");
    }

    Allocation alloc;
    alloc.budget = budget;
    double lo = 1e-6, hi = 1.0 - 1e-6;

    // Smallest eps whose total fits the budget (total is non-increasing in eps).
    std::vector<LayerAllocation> probe;
    const std::size_t at_lo = total_for_eps(layers, lo, delta, K, &probe);
    alloc.trace.emplace_back(lo, at_lo);
    if (at_lo <= budget) {
        alloc.eps_star = lo;
        alloc.layers = probe;
        alloc.total = at_lo;
        return alloc;
    }
    const std::size_t at_hi = total_for_eps(layers, hi, delta, K, &probe);
    alloc.trace.emplace_back(hi, at_hi);
    if (at_hi > budget) {
        // Even the loosest eps keeps more than N.
        alloc.feasible = false;
        alloc.min_achievable = at_hi;
        alloc.eps_star = hi;
        alloc.layers = probe;
        alloc.total = at_hi;
        return alloc;
    }

    std::size_t hi_total = at_hi;
    std::vector<LayerAllocation> hi_probe = probe;
    while (hi - lo > 1e-9) {
        const double mid = 0.5 * (lo + hi);
        const std::size_t tot = total_for_eps(layers, mid, delta, K, &probe);
        alloc.trace.emplace_back(mid, tot);
        if (tot <= budget) {
            hi = mid;
            hi_total = tot;
            hi_probe = probe;
            if (budget - tot <= 1) break;  // within one feature map
        } else {
            lo = mid;
        }
    }
    alloc.eps_star = hi;
    alloc.layers = std::move(hi_probe);
    alloc.total = hi_total;
    return alloc;
}

}  // namespace spnet
