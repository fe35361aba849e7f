#include "spnet/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "spnet/rng.hpp"

namespace spnet {

std::string prune_mode_name(PruneMode m) {
    switch (m) {
        case PruneMode::rand: return "rand";
        case PruneMode::partial: return "partial";
        case PruneMode::derand: return "derand";
    }
    throw std::logic_error("unreachable prune mode");
}

PruneMode prune_mode_from_name(const std::string& name) {
    if (name == "rand") return PruneMode::rand;
    if (name == "partial") return PruneMode::partial;
    if (name == "derand") return PruneMode::derand;
    throw std::invalid_argument("unknown prune mode: " + name);
}

double sample_complexity_raw(double eps, double delta, double s_sum, double K, std::size_t eta_next) {
    if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("sample_complexity: eps must lie in (0,1)");
    if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("sample_complexity: delta must lie in (0,1)");
    if (!(s_sum > 0.0)) throw std::invalid_argument("sample_complexity: sensitivity sum must be positive");
    if (eta_next < 1) throw std::invalid_argument("sample_complexity: eta_next must be >= 1");
    if (!(K > 0.0)) throw std::invalid_argument("sample_complexity: K must be positive");
    const double raw = s_sum * K * (6.0 + 2.0 * eps) *
                       std::log(4.0 * static_cast<double>(eta_next) / delta) / (eps * eps);
    return std::ceil(raw);
}

std::uint64_t sample_complexity(double eps, double delta, double s_sum, double K, std::size_t eta_next) {
    const double raw = sample_complexity_raw(eps, delta, s_sum, K, eta_next);
    constexpr double kMax = 9.0e18;
    if (raw >= kMax) return static_cast<std::uint64_t>(kMax);
    return static_cast<std::uint64_t>(raw) < 1 ? 1 : static_cast<std::uint64_t>(raw);
}

double det_sample_complexity_raw(double eps, double delta, double s_rest, double K,
                                 std::size_t eta_star) {
    if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("det_sample_complexity: eps must lie in (0,1)");
    if (!(delta > 0.0 && delta < 1.0)) {
        throw std::invalid_argument("det_sample_complexity: delta must lie in (0,1)");
    }
    if (!(s_rest > 0.0)) throw std::invalid_argument("det_sample_complexity: residual mass must be positive");
    if (!(K > 0.0)) throw std::invalid_argument("det_sample_complexity: K must be positive");
    const double var_factor = std::min(1.0, 3.0 * K * s_rest);
    const double raw = s_rest * K * (6.0 * var_factor + 2.0 * eps) *
                       std::log(8.0 * static_cast<double>(eta_star) / delta) / (eps * eps);
    return std::max(1.0, std::ceil(raw));
}

double expected_unique(const std::vector<double>& p, double m) {
    double miss = 0.0;
    for (double pj : p) {
        if (pj < 0.0 || pj > 1.0 + 1e-12) throw std::invalid_argument("expected_unique: invalid probability");
        miss += std::pow(1.0 - std::min(pj, 1.0), m);
    }
    return static_cast<double>(p.size()) - miss;
}

std::vector<std::size_t> top_k_by_sensitivity(const std::vector<double>& s, std::size_t k) {
    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
    order.resize(std::min(k, s.size()));
    std::sort(order.begin(), order.end());
    return order;
}

HybridAdvantage hybrid_advantage(const std::vector<double>& s, std::size_t k, double eps,
                                 double delta, double K, std::size_t eta_star) {
    if (k >= s.size()) throw std::invalid_argument("hybrid_advantage: k must be < eta");
    HybridAdvantage out;
    const double S = std::accumulate(s.begin(), s.end(), 0.0);
    if (!(S > 0.0)) throw std::invalid_argument("hybrid_advantage: sensitivity sum is zero");
    out.m = sample_complexity_raw(eps, delta, S, K, eta_star);

    const std::vector<std::size_t> det = top_k_by_sensitivity(s, k);
    std::vector<bool> in_det(s.size(), false);
    double s_k = 0.0;
    for (std::size_t j : det) {
        in_det[j] = true;
        s_k += s[j];
    }
    const double s_rest = S - s_k;
    if (!(s_rest > 0.0)) {
        // Every bit of sensitivity mass is kept deterministically.
        out.better = true;
        out.m_prime = 0.0;
        return out;
    }
    out.m_prime = det_sample_complexity_raw(eps, delta, s_rest, K, eta_star);

    double lhs = 0.0;
    for (std::size_t j = 0; j < s.size(); ++j) {
        if (!in_det[j]) lhs += std::pow(1.0 - s[j] / s_rest, out.m_prime);
    }
    double rhs = 0.0;
    for (double sj : s) rhs += std::pow(1.0 - sj / S, out.m);
    rhs += std::sqrt(std::log(2.0 / delta) * (out.m + out.m_prime) / 2.0);
    out.lhs = lhs;
    out.rhs = rhs;
    out.better = lhs > rhs;
    return out;
}

PrunePlan make_plan(const LayerSensitivity& sens, double eps, double delta, PruneMode mode,
                    std::optional<std::size_t> k, double K, std::size_t eta_star, std::uint64_t seed) {
    if (sens.all_zero) {
        throw std::runtime_error("make_plan: layer " + std::to_string(sens.producer) +
                                 " has all-zero sensitivities; cannot build a sampling distribution");
    }
    PrunePlan plan;
    plan.eps_layer = eps;
    plan.delta_layer = delta;
    plan.mode = mode;
    plan.seed = seed;
    const std::size_t eta = sens.eta;
    const double m_raw = sample_complexity_raw(eps, delta, sens.s_sum, K, sens.units);
    const double cap = 3.0 * static_cast<double>(eta) * std::log(static_cast<double>(eta));

    // Sampling touches every channel of the support w.h.p. at these draw
    // counts; zero-sensitivity channels stay unreachable at any m.
    auto keep_all = [&]() {
        std::size_t support = 0;
        for (double v : sens.s) support += v > 0.0;
        plan.mode = PruneMode::derand;
        plan.m = std::max<std::size_t>(1, support);
        plan.det_keep = top_k_by_sensitivity(sens.s, plan.m);
        plan.incompressible = true;
    };

    switch (mode) {
        case PruneMode::rand: {
            if (expected_unique(sens.p, m_raw) > static_cast<double>(eta) - 0.5 ||
                (eta > 1 && m_raw >= cap)) {
                keep_all();
                return plan;
            }
            plan.m = sample_complexity(eps, delta, sens.s_sum, K, sens.units);
            break;
        }
        case PruneMode::partial: {
            std::size_t kk;
            if (k.has_value()) {
                kk = std::min(*k, eta - 1);
            } else {
                kk = 0;
                for (std::size_t cand = 0; cand < eta; ++cand) {
                    if (hybrid_advantage(sens.s, cand, eps, delta, K, eta_star).better) kk = cand;
                }
            }
            plan.det_keep = top_k_by_sensitivity(sens.s, kk);
            double s_k = 0.0;
            for (std::size_t j : plan.det_keep) s_k += sens.s[j];
            const double s_rest = sens.s_sum - s_k;
            if (!(s_rest > 0.0)) {
                // Degenerate: all mass deterministic.
                plan.mode = PruneMode::derand;
                plan.m = std::max<std::uint64_t>(1, plan.det_keep.size());
                plan.det_keep = top_k_by_sensitivity(sens.s, plan.m);
                return plan;
            }
            std::vector<double> q(eta, 0.0);
            for (std::size_t j = 0; j < eta; ++j) q[j] = sens.s[j] / s_rest;
            for (std::size_t j : plan.det_keep) q[j] = 0.0;
            const double mp_raw = det_sample_complexity_raw(eps, delta, s_rest, K, eta_star);
            if (static_cast<double>(kk) + expected_unique(q, mp_raw) > static_cast<double>(eta) - 0.5 ||
                (eta > 1 && mp_raw >= cap)) {
                keep_all();
                return plan;
            }
            plan.m = mp_raw >= 9.0e18 ? static_cast<std::uint64_t>(9.0e18)
                                      : static_cast<std::uint64_t>(mp_raw);
            break;
        }
        case PruneMode::derand: {
            const double n = expected_unique(sens.p, m_raw);
            std::uint64_t budget = static_cast<std::uint64_t>(std::llround(n));
            budget = std::max<std::uint64_t>(1, std::min<std::uint64_t>(budget, eta));
            plan.m = budget;
            plan.det_keep = top_k_by_sensitivity(sens.s, budget);
            plan.incompressible = budget >= eta;
            break;
        }
    }
    return plan;
}

namespace {

LayerPruneResult apply_layer_prune(NetworkModel& model, const PrunePair& pair,
                                   const LayerSensitivity& sens, const PrunePlan& plan) {
    const std::size_t eta = pair.eta;
    std::vector<std::uint64_t> counts(eta, 0);
    std::vector<bool> det(eta, false);
    for (std::size_t j : plan.det_keep) {
        if (j >= eta) throw std::invalid_argument("prune plan keeps out-of-range feature map");
        det[j] = true;
    }

    std::uint64_t realized = 0;
    if (plan.mode != PruneMode::derand) {
        if (sens.s_sum <= 0.0) {
            throw std::runtime_error("prune_layer: zero sensitivity sum; cannot build a distribution");
        }
        std::vector<double> weights = sens.s;
        for (std::size_t j = 0; j < eta; ++j) {
            if (det[j]) weights[j] = 0.0;
        }
        const std::vector<double> cum = cumulative_weights(weights);
        if (!(cum.back() > 0.0)) {
            throw std::runtime_error("prune_layer: sampling distribution is degenerate; use derand mode");
        }
        PhiloxRng rng(plan.seed, pair.producer);
        for (std::uint64_t d = 0; d < plan.m; ++d) {
            ++counts[rng.sample_index(cum)];
            ++realized;
        }
    }

    // Sampling probability actually used per feature map: p under rand,
    // s_j/(S - S_k) under partial.
    double mass = sens.s_sum;
    if (plan.mode == PruneMode::partial) {
        for (std::size_t j = 0; j < eta; ++j) {
            if (det[j]) mass -= sens.s[j];
        }
    }

    Layer& producer = model.layers[pair.producer];
    Layer& consumer = model.layers[pair.consumer];
    LayerPruneResult res;
    res.producer = pair.producer;
    res.realized_m = realized;
    res.incompressible = plan.incompressible;
    for (std::size_t j = 0; j < eta; ++j) {
        if (det[j]) {
            res.kept.push_back(j);
            res.multiplicity.push_back(0);
            res.reweight.push_back(1.0);  // deterministic keeps are never reweighed
        } else if (counts[j] > 0) {
            const double pj = sens.s[j] / mass;
            const double factor = static_cast<double>(counts[j]) / (static_cast<double>(plan.m) * pj);
            scale_consumer_channel(consumer, pair, j, factor);
            res.kept.push_back(j);
            res.multiplicity.push_back(counts[j]);
            res.reweight.push_back(factor);
        } else {
            zero_producer_filter(producer, j);
            zero_consumer_channel(consumer, pair, j);
        }
    }
    res.unique_kept = res.kept.size();
    return res;
}

PrunePair pair_for(const NetworkModel& model, std::size_t producer_layer) {
    for (const PrunePair& pair : prunable_pairs(model)) {
        if (pair.producer == producer_layer) return pair;
    }
    throw std::invalid_argument("layer " + std::to_string(producer_layer) + " is not prunable");
}

}  // namespace

PruneOutcome prune_layer(const NetworkModel& model, std::size_t producer_layer,
                         const SensitivityReport& report, const PrunePlan& plan) {
    const PrunePair pair = pair_for(model, producer_layer);
    PruneOutcome out;
    out.model = model;
    out.layers.push_back(apply_layer_prune(out.model, pair, report.for_producer(producer_layer), plan));
    return out;
}

PruneOutcome prune_model(const NetworkModel& model, const SensitivityReport& report,
                         const std::vector<PrunePlan>& plans) {
    const auto pairs = prunable_pairs(model);
    if (plans.size() != pairs.size()) {
        throw std::invalid_argument("prune_model: expected one plan per prunable layer");
    }
    PruneOutcome out;
    out.model = model;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        out.layers.push_back(
            apply_layer_prune(out.model, pairs[i], report.for_producer(pairs[i].producer), plans[i]));
    }
    return out;
}

BaselineMethod baseline_from_name(const std::string& name) {
    if (name == "ft" || name == "FT") return BaselineMethod::ft;
    if (name == "softnet" || name == "SoftNet") return BaselineMethod::softnet;
    if (name == "thinet" || name == "ThiNet") return BaselineMethod::thinet;
    throw std::invalid_argument("unknown baseline method: " + name);
}

PruneOutcome baseline_prune(const NetworkModel& model, std::size_t producer_layer,
                            BaselineMethod method, double keep_fraction, const Dataset& calib) {
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) {
        throw std::invalid_argument("baseline_prune: keep_fraction must lie in (0,1]");
    }
    const PrunePair pair = pair_for(model, producer_layer);
    const Layer& producer = model.layers[pair.producer];
    const std::size_t eta = pair.eta;
    const std::size_t keep_count =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(keep_fraction * static_cast<double>(eta))));

    std::vector<std::size_t> kept;
    if (method == BaselineMethod::ft || method == BaselineMethod::softnet) {
        const std::size_t per = producer.weights.size() / eta;
        std::vector<double> score(eta, 0.0);
        for (std::size_t j = 0; j < eta; ++j) {
            const double* wp = producer.weights.data() + j * per;
            double acc = 0.0;
            for (std::size_t i = 0; i < per; ++i) {
                acc += method == BaselineMethod::ft ? wp[i] * wp[i] : std::fabs(wp[i]);
            }
            score[j] = method == BaselineMethod::ft ? std::sqrt(acc) : acc;
        }
        kept = top_k_by_sensitivity(score, keep_count);
    } else {
        if (calib.count() == 0) throw std::invalid_argument("baseline_prune: ThiNet needs a calibration set");
        // Per-channel contributions to the consumer pre-activation, and the
        // full pre-activation, per calibration point.
        std::vector<std::vector<DenseTensor>> contrib(calib.count());
        std::vector<DenseTensor> full(calib.count());
        std::vector<DenseTensor> accum(calib.count());
        for (std::size_t c = 0; c < calib.count(); ++c) {
            ForwardTrace trace;
            forward(model, calib.sample(c), &trace);
            const DenseTensor& a = trace.input_of(pair.consumer);
            contrib[c].reserve(eta);
            for (std::size_t j = 0; j < eta; ++j) {
                contrib[c].push_back(consumer_channel_contrib(model, pair, a, j));
            }
            full[c] = consumer_preact(model, pair, a);
            accum[c] = DenseTensor(full[c].shape());
        }
        std::vector<bool> in_set(eta, false);
        for (std::size_t step = 0; step < keep_count; ++step) {
            double best_err = std::numeric_limits<double>::infinity();
            std::size_t best_j = eta;
            for (std::size_t j = 0; j < eta; ++j) {
                if (in_set[j]) continue;
                double err = 0.0;
                for (std::size_t c = 0; c < calib.count(); ++c) {
                    for (std::size_t e = 0; e < accum[c].size(); ++e) {
                        const double approx = accum[c][e] + contrib[c][j][e];
                        err = std::max(err, std::fabs(full[c][e] - approx));
                    }
                }
                if (err < best_err) {  // strict: ties fall to the lower index
                    best_err = err;
                    best_j = j;
                }
            }
            in_set[best_j] = true;
            for (std::size_t c = 0; c < calib.count(); ++c) {
                for (std::size_t e = 0; e < accum[c].size(); ++e) accum[c][e] += contrib[c][best_j][e];
            }
        }
        for (std::size_t j = 0; j < eta; ++j) {
            if (in_set[j]) kept.push_back(j);
        }
    }

    PruneOutcome out;
    out.model = model;
    std::vector<bool> keep(eta, false);
    for (std::size_t j : kept) keep[j] = true;
    LayerPruneResult res;
    res.producer = pair.producer;
    for (std::size_t j = 0; j < eta; ++j) {
        if (keep[j]) {
            res.kept.push_back(j);
            res.multiplicity.push_back(0);
            res.reweight.push_back(1.0);
        } else {
            zero_producer_filter(out.model.layers[pair.producer], j);
            zero_consumer_channel(out.model.layers[pair.consumer], pair, j);
        }
    }
    res.unique_kept = res.kept.size();
    out.layers.push_back(std::move(res));
    return out;
}

}  // namespace spnet
