#include "spnet/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace spnet {

const LayerSensitivity& SensitivityReport::for_producer(std::size_t layer_index) const {
    for (const LayerSensitivity& l : layers) {
        if (l.producer == layer_index) return l;
    }
    throw std::out_of_range("no sensitivity entry for layer " + std::to_string(layer_index));
}

std::vector<double> edge_sensitivity(const std::vector<double>& w_row, const std::vector<double>& a) {
    if (w_row.size() != a.size()) {
        throw std::invalid_argument("edge_sensitivity: arrays differ in length");
    }
    const std::size_t n = w_row.size();
    double dpos = 0.0, dneg = 0.0;
    std::vector<double> t(n);
    for (std::size_t j = 0; j < n; ++j) {
        t[j] = w_row[j] * a[j];
        if (t[j] >= 0.0) dpos += t[j];
        else dneg += t[j];
    }
    std::vector<double> g(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        double v = 0.0;
        if (t[j] >= 0.0) {
            if (dpos > 0.0) v = t[j] / dpos;
        } else if (dneg < 0.0) {
            v = t[j] / dneg;
        }
        g[j] = std::clamp(v, 0.0, 1.0);
    }
    return g;
}

namespace {

// Shared max-reduction over calibration points and consumer entries.
struct SensAccum {
    std::vector<double> s;
    bool nonnegative = true;

    explicit SensAccum(std::size_t eta) : s(eta, 0.0) {}

    void absorb(const SignedTerms& terms) {
        double dpos = 0.0, dneg = 0.0;
        for (double v : terms.pos) dpos += v;
        for (double v : terms.neg) dneg += v;
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (terms.neg[j] < 0.0) nonnegative = false;
            double g = 0.0;
            if (dpos > 0.0) g = std::max(g, terms.pos[j] / dpos);
            if (dneg < 0.0) g = std::max(g, terms.neg[j] / dneg);
            g = std::clamp(g, 0.0, 1.0);
            s[j] = std::max(s[j], g);
        }
    }
};

LayerSensitivity sensitivity_for_pair(const NetworkModel& model, const PrunePair& pair,
                                      const Dataset& calib) {
    LayerSensitivity out;
    out.producer = pair.producer;
    out.consumer = pair.consumer;
    out.eta = pair.eta;
    out.units = pair.units;
    SensAccum acc(pair.eta);
    for (std::size_t c = 0; c < calib.count(); ++c) {
        ForwardTrace trace;
        forward(model, calib.sample(c), &trace);
        const DenseTensor& a = trace.input_of(pair.consumer);
        for_each_consumer_entry(model, pair, a, [&](const SignedTerms& terms) { acc.absorb(terms); });
    }
    out.s = std::move(acc.s);
    out.nonnegative = acc.nonnegative;
    out.s_sum = 0.0;
    for (double v : out.s) out.s_sum += v;
    out.all_zero = out.s_sum == 0.0;
    if (!out.all_zero) {
        out.p.resize(out.s.size());
        for (std::size_t j = 0; j < out.s.size(); ++j) out.p[j] = out.s[j] / out.s_sum;
    }
    return out;
}

PrunePair pair_for_producer(const NetworkModel& model, std::size_t producer_layer) {
    for (const PrunePair& pair : prunable_pairs(model)) {
        if (pair.producer == producer_layer) return pair;
    }
    throw std::invalid_argument("layer " + std::to_string(producer_layer) + " has no prunable consumer");
}

}  // namespace

std::vector<double> neuron_sensitivity(const NetworkModel& model, std::size_t producer_layer,
                                       const Dataset& calib) {
    const PrunePair pair = pair_for_producer(model, producer_layer);
    if (model.layers[pair.producer].kind != LayerKind::dense ||
        model.layers[pair.consumer].kind != LayerKind::dense) {
        throw std::invalid_argument("neuron_sensitivity expects a dense/dense pair; use channel_sensitivity");
    }
    return sensitivity_for_pair(model, pair, calib).s;
}

std::vector<double> channel_sensitivity(const NetworkModel& model, std::size_t producer_layer,
                                        const Dataset& calib) {
    const PrunePair pair = pair_for_producer(model, producer_layer);
    if (model.layers[pair.consumer].kind != LayerKind::conv) {
        throw std::invalid_argument("channel_sensitivity expects a conv consumer");
    }
    return sensitivity_for_pair(model, pair, calib).s;
}

SensitivityReport compute_report(const NetworkModel& model, const Dataset& calib,
                                 double K, double K_prime) {
    if (calib.count() == 0) throw std::invalid_argument("compute_report: empty calibration set");
    if (K <= 0.0 || K_prime <= 0.0) throw std::invalid_argument("compute_report: K, K' must be positive");
    SensitivityReport report;
    report.calib_size = calib.count();
    report.K = K;
    report.K_prime = K_prime;
    for (const PrunePair& pair : prunable_pairs(model)) {
        report.layers.push_back(sensitivity_for_pair(model, pair, calib));
    }
    return report;
}

double suggest_K(const NetworkModel& model, const Dataset& calib, double K_prime) {
    if (calib.count() < 2) return 1.0;
    const double level = std::exp(-1.0 / K_prime);
    double k_max = 1.0;
    for (const PrunePair& pair : prunable_pairs(model)) {
        // Per feature map, the observed distribution of max_i g_ij(x).
        std::vector<std::vector<double>> samples(pair.eta);
        for (std::size_t c = 0; c < calib.count(); ++c) {
            ForwardTrace trace;
            forward(model, calib.sample(c), &trace);
            const DenseTensor& a = trace.input_of(pair.consumer);
            std::vector<double> gmax(pair.eta, 0.0);
            for_each_consumer_entry(model, pair, a, [&](const SignedTerms& terms) {
                double dpos = 0.0, dneg = 0.0;
                for (double v : terms.pos) dpos += v;
                for (double v : terms.neg) dneg += v;
                for (std::size_t j = 0; j < pair.eta; ++j) {
                    double g = 0.0;
                    if (dpos > 0.0) g = std::max(g, terms.pos[j] / dpos);
                    if (dneg < 0.0) g = std::max(g, terms.neg[j] / dneg);
                    gmax[j] = std::max(gmax[j], std::clamp(g, 0.0, 1.0));
                }
            });
            for (std::size_t j = 0; j < pair.eta; ++j) samples[j].push_back(gmax[j]);
        }
        for (std::size_t j = 0; j < pair.eta; ++j) {
            std::vector<double>& v = samples[j];
            std::sort(v.begin(), v.end());
            const double mj = v.back();
            if (mj <= 0.0) continue;
            // Smallest K with empirical cdf(M_j / K) <= level.
            const std::size_t idx = static_cast<std::size_t>(level * static_cast<double>(v.size()));
            const double q = v[std::min(idx, v.size() - 1)];
            if (q > 0.0) k_max = std::max(k_max, mj / q);
        }
    }
    return k_max;
}

}  // namespace spnet
