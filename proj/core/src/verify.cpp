#include "spnet/verify.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "spnet/rng.hpp"

namespace spnet {

double binomial_slack(double delta, std::size_t trials) {
    return 3.0 * std::sqrt(delta * (1.0 - delta) / static_cast<double>(trials));
}

namespace {

PrunePair pair_for(const NetworkModel& model, std::size_t producer_layer) {
    for (const PrunePair& pair : prunable_pairs(model)) {
        if (pair.producer == producer_layer) return pair;
    }
    throw std::invalid_argument("layer " + std::to_string(producer_layer) + " is not prunable");
}

// Sign-split magnitudes of every consumer entry, in entry order.
void signed_denominators(const NetworkModel& model, const PrunePair& pair, const DenseTensor& a,
                         std::vector<double>& dpos, std::vector<double>& dneg) {
    dpos.clear();
    dneg.clear();
    for_each_consumer_entry(model, pair, a, [&](const SignedTerms& terms) {
        double zp = 0.0, zn = 0.0;
        for (double v : terms.pos) zp += v;
        for (double v : terms.neg) zn += v;
        dpos.push_back(zp);
        dneg.push_back(-zn);
    });
}

}  // namespace

LayerCheck check_layer(const NetworkModel& model, std::size_t producer_layer,
                       const SensitivityReport& report, double eps, double delta,
                       std::size_t trials, std::uint64_t seed, const Dataset& fresh_inputs) {
    if (trials == 0) throw std::invalid_argument("check_layer: trials must be positive");
    if (fresh_inputs.count() == 0) throw std::invalid_argument("check_layer: no fresh inputs");
    const PrunePair pair = pair_for(model, producer_layer);
    const LayerSensitivity& sens = report.for_producer(producer_layer);

    LayerCheck out;
    out.producer = producer_layer;
    out.trials = trials;
    out.eps = eps;
    out.delta = delta;
    out.low_power = trials < 100;
    out.denominator = sens.nonnegative ? "z" : "z+ + z-";
    out.m = sample_complexity(eps, delta, sens.s_sum, report.K, sens.units);
    const PrunePlan base_plan =
        make_plan(sens, eps, delta, PruneMode::rand, {}, report.K, sens.eta, seed);
    out.incompressible = base_plan.incompressible;

    std::size_t violations = 0;
    std::vector<double> dpos, dneg;
    for (std::size_t t = 0; t < trials; ++t) {
        PrunePlan plan = base_plan;
        plan.seed = seed + 1 + t;  // fresh stream per trial
        const PruneOutcome pruned = prune_layer(model, producer_layer, report, plan);

        ForwardTrace trace;
        forward(model, fresh_inputs.sample(t % fresh_inputs.count()), &trace);
        const DenseTensor& a = trace.input_of(pair.consumer);
        const DenseTensor z = consumer_preact(model, pair, a);
        const DenseTensor zhat = consumer_preact(pruned.model, pair, a);

        bool failed = false;
        if (sens.nonnegative) {
            for (std::size_t e = 0; e < z.size() && !failed; ++e) {
                failed = std::fabs(zhat[e] - z[e]) > eps * std::fabs(z[e]);
            }
        } else {
            signed_denominators(model, pair, a, dpos, dneg);
            for (std::size_t e = 0; e < z.size() && !failed; ++e) {
                failed = std::fabs(zhat[e] - z[e]) > eps * (dpos[e] + dneg[e]);
            }
        }
        violations += failed;
    }
    out.violation_rate = static_cast<double>(violations) / static_cast<double>(trials);
    out.slack = binomial_slack(delta, trials);
    out.pass = out.violation_rate <= delta + out.slack;
    return out;
}

UnbiasednessCheck check_unbiased(const NetworkModel& model, std::size_t producer_layer,
                                 const SensitivityReport& report, const DenseTensor& x,
                                 std::uint64_t m, std::uint64_t seed, std::size_t mc_draws) {
    const PrunePair pair = pair_for(model, producer_layer);
    const LayerSensitivity& sens = report.for_producer(producer_layer);
    if (sens.all_zero) throw std::runtime_error("check_unbiased: all-zero sensitivities");

    ForwardTrace trace;
    forward(model, x, &trace);
    const DenseTensor& a = trace.input_of(pair.consumer);
    const DenseTensor z = consumer_preact(model, pair, a);
    std::vector<DenseTensor> contrib;
    contrib.reserve(pair.eta);
    for (std::size_t j = 0; j < pair.eta; ++j) {
        contrib.push_back(consumer_channel_contrib(model, pair, a, j));
    }

    UnbiasednessCheck out;
    out.entries = z.size();
    const std::size_t eta = pair.eta;
    const std::vector<double>& p = sens.p;

    if (eta <= 6 && m <= 3) {
        out.exact = true;
        // All eta^m ordered draw sequences, probability-weighted.
        std::vector<double> expect(z.size(), 0.0);
        std::vector<std::size_t> counts(eta, 0);
        std::vector<std::size_t> seq(m, 0);
        const std::size_t total = static_cast<std::size_t>(std::pow(static_cast<double>(eta), static_cast<double>(m)));
        for (std::size_t code = 0; code < total; ++code) {
            std::size_t c = code;
            std::fill(counts.begin(), counts.end(), 0);
            double prob = 1.0;
            for (std::size_t d = 0; d < m; ++d) {
                seq[d] = c % eta;
                c /= eta;
                prob *= p[seq[d]];
                ++counts[seq[d]];
            }
            if (prob == 0.0) continue;
            for (std::size_t j = 0; j < eta; ++j) {
                if (counts[j] == 0) continue;
                const double factor = static_cast<double>(counts[j]) / (static_cast<double>(m) * p[j]);
                for (std::size_t e = 0; e < z.size(); ++e) expect[e] += prob * factor * contrib[j][e];
            }
        }
        for (std::size_t e = 0; e < z.size(); ++e) {
            out.max_abs_bias = std::max(out.max_abs_bias, std::fabs(expect[e] - z[e]));
        }
        out.pass = out.max_abs_bias <= 1e-10;
        return out;
    }

    // Monte-Carlo mean test at 3 sigma, per entry (Welford accumulation).
    out.draws = mc_draws;
    const std::vector<double> cum = cumulative_weights(p);
    std::vector<double> mean(z.size(), 0.0), m2(z.size(), 0.0), zhat(z.size(), 0.0);
    std::vector<std::uint64_t> counts(eta, 0);
    PhiloxRng rng(seed, 0x3B1A5);
    for (std::size_t d = 1; d <= mc_draws; ++d) {
        std::fill(counts.begin(), counts.end(), 0);
        for (std::uint64_t k = 0; k < m; ++k) ++counts[rng.sample_index(cum)];
        std::fill(zhat.begin(), zhat.end(), 0.0);
        for (std::size_t j = 0; j < eta; ++j) {
            if (counts[j] == 0) continue;
            const double factor = static_cast<double>(counts[j]) / (static_cast<double>(m) * p[j]);
            for (std::size_t e = 0; e < z.size(); ++e) zhat[e] += factor * contrib[j][e];
        }
        for (std::size_t e = 0; e < z.size(); ++e) {
            const double delta1 = zhat[e] - mean[e];
            mean[e] += delta1 / static_cast<double>(d);
            m2[e] += delta1 * (zhat[e] - mean[e]);
        }
    }
    for (std::size_t e = 0; e < z.size(); ++e) {
        const double var = m2[e] / static_cast<double>(mc_draws - 1);
        const double se = std::sqrt(var / static_cast<double>(mc_draws));
        const double dev = std::fabs(mean[e] - z[e]);
        // Zero-variance entries must match exactly (point-mass estimator).
        if (se == 0.0 ? dev > 1e-9 * std::max(1.0, std::fabs(z[e])) : dev > 3.0 * se) {
            ++out.outside_3sigma;
        }
    }
    out.pass = out.outside_3sigma == 0;
    return out;
}

UniformComparison compare_uniform(const NetworkModel& model, std::size_t producer_layer,
                                  const SensitivityReport& report, std::uint64_t m,
                                  std::size_t trials, const Dataset& inputs, std::uint64_t seed) {
    if (trials == 0) throw std::invalid_argument("compare_uniform: trials must be positive");
    if (inputs.count() == 0) throw std::invalid_argument("compare_uniform: no inputs");
    const PrunePair pair = pair_for(model, producer_layer);
    const LayerSensitivity& sens = report.for_producer(producer_layer);

    // Uniform scheme: same machinery with flat sensitivities.
    SensitivityReport uni = report;
    for (LayerSensitivity& l : uni.layers) {
        if (l.producer != producer_layer) continue;
        std::fill(l.s.begin(), l.s.end(), 1.0);
        l.s_sum = static_cast<double>(l.eta);
        l.p.assign(l.eta, 1.0 / static_cast<double>(l.eta));
        l.all_zero = false;
    }

    constexpr double tau = 1e-12;
    UniformComparison out;
    out.trials = trials;
    out.m = m;

    // Per-input activations, references, and denominators, computed once.
    std::vector<DenseTensor> acts, refs;
    std::vector<std::vector<double>> denoms;
    std::vector<double> dpos, dneg;
    for (std::size_t i = 0; i < inputs.count(); ++i) {
        ForwardTrace trace;
        forward(model, inputs.sample(i), &trace);
        acts.push_back(trace.input_of(pair.consumer));
        refs.push_back(consumer_preact(model, pair, acts.back()));
        std::vector<double> d(refs.back().size());
        if (sens.nonnegative) {
            for (std::size_t e = 0; e < d.size(); ++e) d[e] = std::fabs(refs.back()[e]);
        } else {
            signed_denominators(model, pair, acts.back(), dpos, dneg);
            for (std::size_t e = 0; e < d.size(); ++e) d[e] = dpos[e] + dneg[e];
        }
        denoms.push_back(std::move(d));
    }

    for (std::size_t t = 0; t < trials; ++t) {
        // One pruning realization per scheme, judged on the whole input set.
        auto max_rel_err = [&](const SensitivityReport& rep, std::uint64_t sd) {
            PrunePlan plan;
            plan.mode = PruneMode::rand;
            plan.m = m;
            plan.seed = sd;
            const PruneOutcome pruned = prune_layer(model, producer_layer, rep, plan);
            double worst = 0.0;
            for (std::size_t i = 0; i < acts.size(); ++i) {
                const DenseTensor zhat = consumer_preact(pruned.model, pair, acts[i]);
                for (std::size_t e = 0; e < zhat.size(); ++e) {
                    worst = std::max(worst, std::fabs(zhat[e] - refs[i][e]) /
                                                std::max(denoms[i][e], tau));
                }
            }
            return worst;
        };
        // Common random numbers: with equal sensitivities the two schemes
        // draw identical indices and tie exactly.
        const double es = max_rel_err(report, seed + 1 + t);
        const double un = max_rel_err(uni, seed + 1 + t);
        out.es_errors.push_back(es);
        out.uniform_errors.push_back(un);
        if (es < un) out.win_rate += 1.0;
    }
    out.win_rate /= static_cast<double>(trials);
    auto median = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    out.median_es = median(out.es_errors);
    out.median_uniform = median(out.uniform_errors);
    return out;
}

NetworkCheck check_network(const NetworkModel& orig, const NetworkModel& pruned, double eps,
                           const Dataset& inputs, double tau) {
    if (inputs.count() == 0) throw std::invalid_argument("check_network: no inputs");
    NetworkCheck out;
    out.inputs = inputs.count();
    out.eps = eps;
    std::size_t violations = 0;
    for (std::size_t i = 0; i < inputs.count(); ++i) {
        const DenseTensor x = inputs.sample(i);
        const DenseTensor y = forward(orig, x);
        const DenseTensor yhat = forward(pruned, x);
        bool failed = false;
        for (std::size_t e = 0; e < y.size(); ++e) {
            if (std::fabs(y[e]) < tau) {
                ++out.floored_entries;
                continue;
            }
            if (std::fabs(yhat[e] - y[e]) > eps * std::fabs(y[e])) {
                failed = true;
                break;
            }
        }
        violations += failed;
    }
    out.violation_rate = static_cast<double>(violations) / static_cast<double>(inputs.count());
    return out;
}

}  // namespace spnet
