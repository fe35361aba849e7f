#include "spnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <iostream>
#include <mutex>
#include <stdexcept>

#include "spnet/rng.hpp"
#include "spnet/threading.hpp"

namespace spnet {

namespace {

constexpr std::size_t kChunk = 8;  // samples per gradient chunk; fixed so the
                                   // chunk-ordered reduction is thread-count-independent

std::vector<std::size_t> batch_shape(std::size_t n, const std::vector<std::size_t>& sample) {
    std::vector<std::size_t> s = {n};
    s.insert(s.end(), sample.begin(), sample.end());
    return s;
}

DenseTensor transpose2(const DenseTensor& w) {
    const std::size_t r = w.dim(0), c = w.dim(1);
    DenseTensor t({c, r});
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) t[j * r + i] = w[i * c + j];
    }
    return t;
}

// Transposed weight copies shared read-only by all chunks of one batch.
struct BatchWeights {
    std::vector<DenseTensor> wt;  // per layer: dense [in,out]; conv [c*kh*kw, f]

    explicit BatchWeights(const NetworkModel& model) : wt(model.layers.size()) { refresh(model); }

    void refresh(const NetworkModel& model) {
        for (std::size_t li = 0; li < model.layers.size(); ++li) {
            const Layer& l = model.layers[li];
            if (l.kind == LayerKind::dense) {
                wt[li] = transpose2(l.weights);
            } else if (l.kind == LayerKind::conv) {
                const std::size_t f = l.weights.dim(0);
                const std::size_t kk = l.weights.size() / f;
                wt[li] = transpose2(l.weights.reshaped({f, kk}));
            }
        }
    }
};

struct ChunkCache {
    DenseTensor x;                                  // [cn, ...input]
    std::vector<DenseTensor> outs;                  // per layer, [cn, ...]
    std::vector<std::vector<std::size_t>> argmax;   // maxpool routing, per layer
    std::vector<std::vector<DenseTensor>> patches;  // conv patch matrices, per layer per sample
};

DenseTensor extract_sample(const DenseTensor& batch, std::size_t i, const std::vector<std::size_t>& shape) {
    const std::size_t per = shape_product(shape);
    std::vector<double> d(batch.data() + i * per, batch.data() + (i + 1) * per);
    return DenseTensor(shape, std::move(d));
}

void forward_chunk(const NetworkModel& model, const BatchWeights& bw, const Dataset& batch,
                   std::size_t begin, std::size_t end, ChunkCache& cache) {
    const std::size_t cn = end - begin;
    const std::size_t per = shape_product(model.input_shape);
    {
        std::vector<double> x(batch.inputs.data() + begin * per, batch.inputs.data() + end * per);
        cache.x = DenseTensor(batch_shape(cn, model.input_shape), std::move(x));
    }
    cache.outs.assign(model.layers.size(), DenseTensor());
    cache.argmax.assign(model.layers.size(), {});
    cache.patches.assign(model.layers.size(), {});

    const auto shapes = layer_output_shapes(model);
    const DenseTensor* cur = &cache.x;
    std::vector<std::size_t> cur_shape = model.input_shape;
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const Layer& l = model.layers[li];
        DenseTensor out;
        switch (l.kind) {
            case LayerKind::dense: {
                const std::size_t in = l.weights.dim(1), on = l.weights.dim(0);
                out = DenseTensor({cn, on});
                const DenseTensor& wt = bw.wt[li];
                for (std::size_t i = 0; i < cn; ++i) {
                    const double* arow = cur->data() + i * in;
                    double* orow = out.data() + i * on;
                    for (std::size_t k = 0; k < in; ++k) {
                        const double a = arow[k];
                        const double* wrow = wt.data() + k * on;
                        for (std::size_t j = 0; j < on; ++j) orow[j] += a * wrow[j];
                    }
                    if (!l.bias.empty()) {
                        for (std::size_t j = 0; j < on; ++j) orow[j] += l.bias[j];
                    }
                }
                break;
            }
            case LayerKind::conv: {
                const std::size_t f = l.weights.dim(0);
                const std::size_t kk = l.weights.size() / f;
                const std::size_t oh = shapes[li][1], ow = shapes[li][2];
                const std::size_t np = oh * ow;
                out = DenseTensor({cn, f, oh, ow});
                cache.patches[li].reserve(cn);
                for (std::size_t i = 0; i < cn; ++i) {
                    DenseTensor xs = extract_sample(*cur, i, cur_shape);
                    PatchMatrix pm = im2col(xs, l.weights.dim(2), l.weights.dim(3), l.stride, l.padding);
                    // [np, kk] x [kk, f] -> per-patch filter responses
                    DenseTensor znf = matmul(pm.patches, bw.wt[li]);
                    double* orow = out.data() + i * f * np;
                    for (std::size_t p = 0; p < np; ++p) {
                        for (std::size_t ff = 0; ff < f; ++ff) orow[ff * np + p] = znf[p * f + ff];
                    }
                    if (!l.bias.empty()) {
                        for (std::size_t ff = 0; ff < f; ++ff) {
                            const double b = l.bias[ff];
                            for (std::size_t p = 0; p < np; ++p) orow[ff * np + p] += b;
                        }
                    }
                    cache.patches[li].push_back(std::move(pm.patches));
                }
                break;
            }
            case LayerKind::relu: {
                out = *cur;
                for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
                break;
            }
            case LayerKind::maxpool: {
                const std::size_t c = cur_shape[0], h = cur_shape[1], w = cur_shape[2];
                const std::size_t oh = shapes[li][1], ow = shapes[li][2];
                out = DenseTensor({cn, c, oh, ow});
                cache.argmax[li].assign(cn * c * oh * ow, 0);
                for (std::size_t i = 0; i < cn; ++i) {
                    const double* in = cur->data() + i * c * h * w;
                    double* op = out.data() + i * c * oh * ow;
                    std::size_t* am = cache.argmax[li].data() + i * c * oh * ow;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                            for (std::size_t ox = 0; ox < ow; ++ox) {
                                std::size_t best_idx = (ch * h + oy * l.stride) * w + ox * l.stride;
                                double best = in[best_idx];
                                for (std::size_t ky = 0; ky < l.kernel; ++ky) {
                                    for (std::size_t kx = 0; kx < l.kernel; ++kx) {
                                        const std::size_t idx =
                                            (ch * h + oy * l.stride + ky) * w + ox * l.stride + kx;
                                        if (in[idx] > best) {  // strict: first max wins
                                            best = in[idx];
                                            best_idx = idx;
                                        }
                                    }
                                }
                                op[(ch * oh + oy) * ow + ox] = best;
                                am[(ch * oh + oy) * ow + ox] = best_idx;
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::avgpool: {
                const std::size_t c = cur_shape[0], h = cur_shape[1], w = cur_shape[2];
                const std::size_t oh = shapes[li][1], ow = shapes[li][2];
                out = DenseTensor({cn, c, oh, ow});
                const double inv = 1.0 / static_cast<double>(l.kernel * l.kernel);
                for (std::size_t i = 0; i < cn; ++i) {
                    const double* in = cur->data() + i * c * h * w;
                    double* op = out.data() + i * c * oh * ow;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                            for (std::size_t ox = 0; ox < ow; ++ox) {
                                double acc = 0.0;
                                for (std::size_t ky = 0; ky < l.kernel; ++ky) {
                                    for (std::size_t kx = 0; kx < l.kernel; ++kx) {
                                        acc += in[(ch * h + oy * l.stride + ky) * w + ox * l.stride + kx];
                                    }
                                }
                                op[(ch * oh + oy) * ow + ox] = acc * inv;
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::flatten:
                out = cur->reshaped({cn, shape_product(cur_shape)});
                break;
        }
        cache.outs[li] = std::move(out);
        cur = &cache.outs[li];
        cur_shape = shapes[li];
    }
}

struct LossGrad {
    double loss_sum = 0.0;     // summed over chunk samples (unnormalized)
    DenseTensor dlogits;       // [cn, k], d(batch mean loss)/d(logits)
};

LossGrad loss_and_grad(const DenseTensor& logits, const Dataset& batch, std::size_t begin,
                       std::size_t end, LossKind loss, std::size_t batch_n) {
    const std::size_t cn = end - begin;
    const std::size_t k = logits.dim(1);
    LossGrad lg;
    lg.dlogits = DenseTensor({cn, k});
    if (loss == LossKind::cross_entropy) {
        if (batch.labels.empty()) throw std::invalid_argument("cross_entropy needs labels");
        for (std::size_t i = 0; i < cn; ++i) {
            const double* z = logits.data() + i * k;
            double zmax = z[0];
            for (std::size_t j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
            double sum = 0.0;
            for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] - zmax);
            const double lse = zmax + std::log(sum);
            const int label = batch.labels[begin + i];
            if (label < 0 || static_cast<std::size_t>(label) >= k) {
                throw std::invalid_argument("label out of range");
            }
            lg.loss_sum += lse - z[label];
            double* d = lg.dlogits.data() + i * k;
            for (std::size_t j = 0; j < k; ++j) {
                const double p = std::exp(z[j] - lse);
                d[j] = (p - (static_cast<std::size_t>(label) == j ? 1.0 : 0.0)) /
                       static_cast<double>(batch_n);
            }
        }
    } else {
        if (batch.targets.empty()) throw std::invalid_argument("mse needs targets");
        const double denom = static_cast<double>(batch_n) * static_cast<double>(k);
        for (std::size_t i = 0; i < cn; ++i) {
            const double* z = logits.data() + i * k;
            const double* t = batch.targets.data() + (begin + i) * k;
            double* d = lg.dlogits.data() + i * k;
            double acc = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                const double e = z[j] - t[j];
                acc += e * e;
                d[j] = 2.0 * e / denom;
            }
            lg.loss_sum += acc / static_cast<double>(k);
        }
    }
    return lg;
}

GradSet make_gradset(const NetworkModel& model) {
    GradSet g;
    for (const Layer& l : model.layers) {
        if (!l.weighted()) continue;
        g.weights.emplace_back(l.weights.shape());
        g.bias.emplace_back(l.bias.empty() ? DenseTensor() : DenseTensor(l.bias.shape()));
    }
    return g;
}

void zero_gradset(GradSet& g) {
    for (DenseTensor& t : g.weights) std::fill(t.values().begin(), t.values().end(), 0.0);
    for (DenseTensor& t : g.bias) std::fill(t.values().begin(), t.values().end(), 0.0);
}

void backward_chunk(const NetworkModel& model, const ChunkCache& cache, DenseTensor dout,
                    GradSet& grads) {
    const std::size_t cn = cache.x.dim(0);
    const auto widx = weighted_layer_indices(model);
    std::ptrdiff_t wslot = static_cast<std::ptrdiff_t>(widx.size()) - 1;
    const auto shapes = layer_output_shapes(model);

    for (std::size_t liu = model.layers.size(); liu-- > 0;) {
        const Layer& l = model.layers[liu];
        const DenseTensor& input = liu == 0 ? cache.x : cache.outs[liu - 1];
        const std::vector<std::size_t> in_shape =
            liu == 0 ? model.input_shape : shapes[liu - 1];
        const std::size_t in_per = shape_product(in_shape);
        DenseTensor dinput;
        switch (l.kind) {
            case LayerKind::dense: {
                const std::size_t in = l.weights.dim(1), on = l.weights.dim(0);
                DenseTensor& gw = grads.weights[wslot];
                DenseTensor& gb = grads.bias[wslot];
                dinput = DenseTensor({cn, in});
                for (std::size_t i = 0; i < cn; ++i) {
                    const double* dz = dout.data() + i * on;
                    const double* arow = input.data() + i * in;
                    double* da = dinput.data() + i * in;
                    for (std::size_t j = 0; j < on; ++j) {
                        const double d = dz[j];
                        if (d == 0.0) continue;
                        const double* wrow = l.weights.data() + j * in;
                        double* gwrow = gw.data() + j * in;
                        for (std::size_t k = 0; k < in; ++k) {
                            da[k] += d * wrow[k];
                            gwrow[k] += d * arow[k];
                        }
                        if (!gb.empty()) gb[j] += d;
                    }
                }
                --wslot;
                break;
            }
            case LayerKind::conv: {
                const std::size_t f = l.weights.dim(0);
                const std::size_t kk = l.weights.size() / f;
                const std::size_t c = in_shape[0], h = in_shape[1], w = in_shape[2];
                const std::size_t kh = l.weights.dim(2), kw = l.weights.dim(3);
                const std::size_t oh = shapes[liu][1], ow = shapes[liu][2];
                const std::size_t np = oh * ow;
                DenseTensor& gw = grads.weights[wslot];
                DenseTensor& gb = grads.bias[wslot];
                dinput = DenseTensor({cn, c, h, w});
                for (std::size_t i = 0; i < cn; ++i) {
                    const double* dz = dout.data() + i * f * np;  // [f, np]
                    const DenseTensor& patches = cache.patches[liu][i];
                    // dW[f,k] += sum_p dz[f,p] * patches[p,k]
                    for (std::size_t ff = 0; ff < f; ++ff) {
                        double* gwrow = gw.data() + ff * kk;
                        double gbacc = 0.0;
                        for (std::size_t p = 0; p < np; ++p) {
                            const double d = dz[ff * np + p];
                            gbacc += d;
                            if (d == 0.0) continue;
                            const double* prow = patches.data() + p * kk;
                            for (std::size_t k = 0; k < kk; ++k) gwrow[k] += d * prow[k];
                        }
                        if (!gb.empty()) gb[ff] += gbacc;
                    }
                    // dpatches[p,k] = sum_f dz[f,p] * W[f,k], scattered back
                    double* din = dinput.data() + i * c * h * w;
                    std::vector<double> dp(kk);
                    for (std::size_t p = 0; p < np; ++p) {
                        std::fill(dp.begin(), dp.end(), 0.0);
                        for (std::size_t ff = 0; ff < f; ++ff) {
                            const double d = dz[ff * np + p];
                            if (d == 0.0) continue;
                            const double* wrow = l.weights.data() + ff * kk;
                            for (std::size_t k = 0; k < kk; ++k) dp[k] += d * wrow[k];
                        }
                        const std::size_t oy = p / ow, ox = p % ow;
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            for (std::size_t ky = 0; ky < kh; ++ky) {
                                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * l.stride + ky) -
                                                          static_cast<std::ptrdiff_t>(l.padding);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
                                for (std::size_t kx = 0; kx < kw; ++kx) {
                                    const std::ptrdiff_t ix =
                                        static_cast<std::ptrdiff_t>(ox * l.stride + kx) -
                                        static_cast<std::ptrdiff_t>(l.padding);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
                                    din[(ch * h + iy) * w + ix] += dp[(ch * kh + ky) * kw + kx];
                                }
                            }
                        }
                    }
                }
                --wslot;
                break;
            }
            case LayerKind::relu: {
                dinput = std::move(dout);
                for (std::size_t e = 0; e < dinput.size(); ++e) {
                    if (input[e] <= 0.0) dinput[e] = 0.0;
                }
                break;
            }
            case LayerKind::maxpool: {
                dinput = DenseTensor(batch_shape(cn, in_shape));
                const std::size_t out_per = cache.outs[liu].size() / cn;
                for (std::size_t i = 0; i < cn; ++i) {
                    const double* dz = dout.data() + i * out_per;
                    const std::size_t* am = cache.argmax[liu].data() + i * out_per;
                    double* din = dinput.data() + i * in_per;
                    for (std::size_t e = 0; e < out_per; ++e) din[am[e]] += dz[e];
                }
                break;
            }
            case LayerKind::avgpool: {
                const std::size_t c = in_shape[0], h = in_shape[1], w = in_shape[2];
                const std::size_t oh = shapes[liu][1], ow = shapes[liu][2];
                const double inv = 1.0 / static_cast<double>(l.kernel * l.kernel);
                dinput = DenseTensor({cn, c, h, w});
                for (std::size_t i = 0; i < cn; ++i) {
                    const double* dz = dout.data() + i * c * oh * ow;
                    double* din = dinput.data() + i * c * h * w;
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        for (std::size_t oy = 0; oy < oh; ++oy) {
                            for (std::size_t ox = 0; ox < ow; ++ox) {
                                const double d = dz[(ch * oh + oy) * ow + ox] * inv;
                                for (std::size_t ky = 0; ky < l.kernel; ++ky) {
                                    for (std::size_t kx = 0; kx < l.kernel; ++kx) {
                                        din[(ch * h + oy * l.stride + ky) * w + ox * l.stride + kx] += d;
                                    }
                                }
                            }
                        }
                    }
                }
                break;
            }
            case LayerKind::flatten:
                dinput = dout.reshaped(batch_shape(cn, in_shape));
                break;
        }
        dout = std::move(dinput);
    }
}

void add_gradset(GradSet& into, const GradSet& from) {
    for (std::size_t i = 0; i < into.weights.size(); ++i) {
        for (std::size_t e = 0; e < into.weights[i].size(); ++e) into.weights[i][e] += from.weights[i][e];
        for (std::size_t e = 0; e < into.bias[i].size(); ++e) into.bias[i][e] += from.bias[i][e];
    }
}

}  // namespace

double compute_gradients(const NetworkModel& model, const Dataset& batch, LossKind loss,
                         GradSet& grads) {
    const std::size_t n = batch.count();
    if (n == 0) throw std::invalid_argument("compute_gradients: empty batch");
    if (batch.sample_shape() != model.input_shape) {
        throw std::invalid_argument("compute_gradients: batch samples do not match model input");
    }
    grads = make_gradset(model);
    const BatchWeights bw(model);
    const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
    std::vector<GradSet> partial(n_chunks);
    std::vector<double> losses(n_chunks, 0.0);
    parallel_chunks(n, kChunk, [&](std::size_t ci, std::size_t begin, std::size_t end) {
        ChunkCache cache;
        forward_chunk(model, bw, batch, begin, end, cache);
        LossGrad lg = loss_and_grad(cache.outs.back(), batch, begin, end, loss, n);
        losses[ci] = lg.loss_sum;
        partial[ci] = make_gradset(model);
        backward_chunk(model, cache, std::move(lg.dlogits), partial[ci]);
    });
    double loss_sum = 0.0;
    for (std::size_t ci = 0; ci < n_chunks; ++ci) {
        loss_sum += losses[ci];
        add_gradset(grads, partial[ci]);
    }
    return loss_sum / static_cast<double>(n);
}

void validate_config(const TrainConfig& cfg) {
    if (!(cfg.lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
    if (!(cfg.momentum >= 0.0 && cfg.momentum < 1.0)) {
        throw std::invalid_argument("train config: momentum must lie in [0,1)");
    }
    if (cfg.batch_size == 0 || cfg.epochs == 0) {
        throw std::invalid_argument("train config: epochs and batch size must be positive");
    }
    for (std::size_t i = 1; i < cfg.lr_decay_epochs.size(); ++i) {
        if (cfg.lr_decay_epochs[i] <= cfg.lr_decay_epochs[i - 1]) {
            throw std::invalid_argument("train config: decay epochs must be strictly increasing");
        }
    }
}

namespace {

NetworkModel run_sgd(const NetworkModel& start, const Dataset& train_ds, const Dataset& val_ds,
                     const TrainConfig& cfg, bool frozen_support, TrainHistory* history) {
    validate_config(cfg);
    if (train_ds.count() == 0) throw std::invalid_argument("train: empty dataset");
    NetworkModel model = start;
    const auto widx = weighted_layer_indices(model);

    GradSet velocity = make_gradset(model);
    std::vector<std::vector<char>> wmask, bmask;
    if (frozen_support) {
        for (std::size_t s = 0; s < widx.size(); ++s) {
            const Layer& l = model.layers[widx[s]];
            std::vector<char> wm(l.weights.size());
            for (std::size_t e = 0; e < l.weights.size(); ++e) wm[e] = l.weights[e] != 0.0;
            wmask.push_back(std::move(wm));
            std::vector<char> bm(l.bias.size());
            for (std::size_t e = 0; e < l.bias.size(); ++e) bm[e] = l.bias[e] != 0.0;
            bmask.push_back(std::move(bm));
        }
    }

    const std::size_t n = train_ds.count();
    std::vector<std::size_t> perm(n);
    GradSet grads;
    double lr = cfg.lr;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        // Step decay: epochs strictly after a milestone run at the decayed rate.
        lr = cfg.lr;
        for (std::size_t d : cfg.lr_decay_epochs) {
            if (d < epoch) lr *= cfg.lr_decay_factor;
        }

        for (std::size_t i = 0; i < n; ++i) perm[i] = i;
        PhiloxRng shuffle_rng(cfg.seed, 0x10000 + epoch);
        for (std::size_t i = n; i > 1; --i) {
            std::swap(perm[i - 1], perm[shuffle_rng.next_below(i)]);
        }

        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t off = 0; off < n; off += cfg.batch_size) {
            const std::size_t bend = std::min(n, off + cfg.batch_size);
            std::vector<std::size_t> idx(perm.begin() + off, perm.begin() + bend);
            Dataset batch = subset(train_ds, idx);
            const double loss = compute_gradients(model, batch, cfg.loss, grads);
            if (!std::isfinite(loss)) {
                throw std::runtime_error("training diverged: non-finite loss at epoch " +
                                         std::to_string(epoch) + ", batch " + std::to_string(batches));
            }
            epoch_loss += loss;
            ++batches;
            for (std::size_t s = 0; s < widx.size(); ++s) {
                Layer& l = model.layers[widx[s]];
                DenseTensor& gw = grads.weights[s];
                DenseTensor& v = velocity.weights[s];
                for (std::size_t e = 0; e < l.weights.size(); ++e) {
                    if (frozen_support && !wmask[s][e]) continue;
                    const double g = gw[e] + cfg.weight_decay * l.weights[e];
                    v[e] = cfg.momentum * v[e] + g;
                    l.weights[e] -= lr * v[e];
                }
                if (!l.bias.empty()) {
                    DenseTensor& gb = grads.bias[s];
                    DenseTensor& vb = velocity.bias[s];
                    for (std::size_t e = 0; e < l.bias.size(); ++e) {
                        if (frozen_support && !bmask[s][e]) continue;
                        const double g = gb[e] + cfg.weight_decay * l.bias[e];
                        vb[e] = cfg.momentum * vb[e] + g;
                        l.bias[e] -= lr * vb[e];
                    }
                }
            }
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = epoch_loss / static_cast<double>(batches);
        stats.lr = lr;
        if (val_ds.count() > 0) {
            stats.val_metric = cfg.loss == LossKind::cross_entropy ? evaluate_error(model, val_ds)
                                                                   : evaluate_loss(model, val_ds, cfg.loss);
        }
        if (history) history->epochs.push_back(stats);
        if (cfg.verbose) {
            std::cerr << "epoch " << epoch << "/" << cfg.epochs << "  loss " << stats.train_loss
                      << "  val " << stats.val_metric << "  lr " << lr << "\n";
        }
    }
    return model;
}

}  // namespace

NetworkModel train(const NetworkModel& model, const Dataset& train_ds, const Dataset& val_ds,
                   const TrainConfig& cfg, TrainHistory* history) {
    return run_sgd(model, train_ds, val_ds, cfg, false, history);
}

NetworkModel finetune(const NetworkModel& model, const Dataset& train_ds, const Dataset& val_ds,
                      const TrainConfig& cfg, bool frozen_support, TrainHistory* history) {
    return run_sgd(model, train_ds, val_ds, cfg, frozen_support, history);
}

double evaluate_loss(const NetworkModel& model, const Dataset& ds, LossKind loss) {
    const std::size_t n = ds.count();
    if (n == 0) throw std::invalid_argument("evaluate_loss: empty dataset");
    const BatchWeights bw(model);
    const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
    std::vector<double> losses(n_chunks, 0.0);
    parallel_chunks(n, kChunk, [&](std::size_t ci, std::size_t begin, std::size_t end) {
        ChunkCache cache;
        forward_chunk(model, bw, ds, begin, end, cache);
        LossGrad lg = loss_and_grad(cache.outs.back(), ds, begin, end, loss, n);
        losses[ci] = lg.loss_sum;
    });
    double total = 0.0;
    for (double l : losses) total += l;
    return total / static_cast<double>(n);
}

double evaluate_error(const NetworkModel& model, const Dataset& ds) {
    const std::size_t n = ds.count();
    if (n == 0) throw std::invalid_argument("evaluate_error: empty dataset");
    if (ds.labels.empty()) throw std::invalid_argument("evaluate_error: dataset has no labels");
    const BatchWeights bw(model);
    const std::size_t n_chunks = (n + kChunk - 1) / kChunk;
    std::vector<std::size_t> wrong(n_chunks, 0);
    parallel_chunks(n, kChunk, [&](std::size_t ci, std::size_t begin, std::size_t end) {
        ChunkCache cache;
        forward_chunk(model, bw, ds, begin, end, cache);
        const DenseTensor& logits = cache.outs.back();
        const std::size_t k = logits.dim(1);
        for (std::size_t i = 0; i < end - begin; ++i) {
            const double* z = logits.data() + i * k;
            std::size_t arg = 0;
            for (std::size_t j = 1; j < k; ++j) {
                if (z[j] > z[arg]) arg = j;
            }
            if (static_cast<int>(arg) != ds.labels[begin + i]) ++wrong[ci];
        }
    });
    std::size_t total = 0;
    for (std::size_t w : wrong) total += w;
    return static_cast<double>(total) / static_cast<double>(n);
}

TrainConfig lenet300_train_config() {
    TrainConfig cfg;
    cfg.epochs = 40;
    cfg.batch_size = 64;
    cfg.lr = 0.01;
    cfg.lr_decay_factor = 0.1;
    cfg.lr_decay_epochs = {30};
    cfg.momentum = 0.9;
    cfg.weight_decay = 1e-4;
    cfg.loss = LossKind::cross_entropy;
    return cfg;
}

TrainConfig lenet5_train_config() {
    TrainConfig cfg = lenet300_train_config();
    cfg.lr_decay_epochs = {25, 35};
    return cfg;
}

TrainConfig lenet300_finetune_config() {
    TrainConfig cfg = lenet300_train_config();
    cfg.epochs = 30;
    cfg.lr_decay_epochs = {20, 28};
    return cfg;
}

TrainConfig lenet5_finetune_config() {
    TrainConfig cfg = lenet5_train_config();
    cfg.epochs = 40;
    cfg.lr_decay_epochs = {25, 35};
    return cfg;
}

}  // namespace spnet
