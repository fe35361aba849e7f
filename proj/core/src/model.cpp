#include "spnet/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "spnet/rng.hpp"

namespace spnet {

std::string layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv: return "conv";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::avgpool: return "avgpool";
        case LayerKind::flatten: return "flatten";
    }
    throw std::logic_error("unreachable layer kind");
}

LayerKind layer_kind_from_name(const std::string& name) {
    if (name == "dense") return LayerKind::dense;
    if (name == "conv") return LayerKind::conv;
    if (name == "relu") return LayerKind::relu;
    if (name == "maxpool") return LayerKind::maxpool;
    if (name == "avgpool") return LayerKind::avgpool;
    if (name == "flatten") return LayerKind::flatten;
    throw std::invalid_argument("unknown layer kind: " + name);
}

std::vector<std::vector<std::size_t>> layer_output_shapes(const NetworkModel& model) {
    std::vector<std::vector<std::size_t>> shapes;
    shapes.reserve(model.layers.size());
    std::vector<std::size_t> cur = model.input_shape;
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const Layer& layer = model.layers[li];
        const std::string where = "layer " + std::to_string(li) + " (" + layer_kind_name(layer.kind) + ")";
        switch (layer.kind) {
            case LayerKind::dense: {
                if (layer.weights.rank() != 2) throw std::invalid_argument(where + ": weights must be [out,in]");
                if (cur.size() != 1 || cur[0] != layer.weights.dim(1)) {
                    throw std::invalid_argument(where + ": input " + shape_str(cur) + " does not match in=" +
                                                std::to_string(layer.weights.dim(1)));
                }
                cur = {layer.weights.dim(0)};
                break;
            }
            case LayerKind::conv: {
                if (layer.weights.rank() != 4) throw std::invalid_argument(where + ": weights must be [f,c,kh,kw]");
                if (cur.size() != 3 || cur[0] != layer.weights.dim(1)) {
                    throw std::invalid_argument(where + ": input " + shape_str(cur) + " does not match channels=" +
                                                std::to_string(layer.weights.dim(1)));
                }
                const std::size_t ph = cur[1] + 2 * layer.padding, pw = cur[2] + 2 * layer.padding;
                if (layer.weights.dim(2) > ph || layer.weights.dim(3) > pw) {
                    throw std::invalid_argument(where + ": kernel does not fit padded input");
                }
                cur = {layer.weights.dim(0), (ph - layer.weights.dim(2)) / layer.stride + 1,
                       (pw - layer.weights.dim(3)) / layer.stride + 1};
                break;
            }
            case LayerKind::relu:
                break;
            case LayerKind::maxpool:
            case LayerKind::avgpool: {
                if (cur.size() != 3) throw std::invalid_argument(where + ": input must be [c,h,w]");
                if (layer.kernel > cur[1] || layer.kernel > cur[2]) {
                    throw std::invalid_argument(where + ": window larger than input");
                }
                cur = {cur[0], (cur[1] - layer.kernel) / layer.stride + 1,
                       (cur[2] - layer.kernel) / layer.stride + 1};
                break;
            }
            case LayerKind::flatten:
                cur = {shape_product(cur)};
                break;
        }
        if (layer.weighted()) {
            const std::size_t out = layer.weights.dim(0);
            if (!layer.bias.empty() && (layer.bias.rank() != 1 || layer.bias.dim(0) != out)) {
                throw std::invalid_argument(where + ": bias shape does not match filter count");
            }
        } else if (!layer.weights.empty() || !layer.bias.empty()) {
            throw std::invalid_argument(where + ": non-weighted layer carries parameters");
        }
        shapes.push_back(cur);
    }
    return shapes;
}

void validate_model(const NetworkModel& model) {
    if (model.layers.empty()) throw std::invalid_argument("model has no layers");
    bool any_weighted = false;
    for (const Layer& l : model.layers) any_weighted |= l.weighted();
    if (!any_weighted) throw std::invalid_argument("model has no weighted layer");
    layer_output_shapes(model);
}

DenseTensor forward(const NetworkModel& model, const DenseTensor& x, ForwardTrace* trace) {
    if (x.shape() != model.input_shape) {
        throw std::invalid_argument("forward: input shape " + shape_str(x.shape()) +
                                    " does not match model input " + shape_str(model.input_shape));
    }
    if (trace) {
        trace->input = x;
        trace->outputs.clear();
        trace->outputs.reserve(model.layers.size());
    }
    DenseTensor cur = x;
    for (const Layer& layer : model.layers) {
        switch (layer.kind) {
            case LayerKind::dense: {
                const std::size_t out = layer.weights.dim(0), in = layer.weights.dim(1);
                if (cur.rank() != 1 || cur.dim(0) != in) {
                    throw std::invalid_argument("forward: dense layer expects [" + std::to_string(in) + "], got " +
                                                shape_str(cur.shape()));
                }
                DenseTensor z({out});
                const double* wp = layer.weights.data();
                const double* ap = cur.data();
                for (std::size_t i = 0; i < out; ++i) {
                    const double* wrow = wp + i * in;
                    double acc = 0.0;
                    for (std::size_t k = 0; k < in; ++k) acc += wrow[k] * ap[k];
                    z[i] = acc;
                }
                if (!layer.bias.empty()) {
                    for (std::size_t i = 0; i < out; ++i) z[i] += layer.bias[i];
                }
                cur = std::move(z);
                break;
            }
            case LayerKind::conv: {
                DenseTensor z = conv2d(layer.weights, cur, layer.stride, layer.padding);
                if (!layer.bias.empty()) {
                    const std::size_t per = z.dim(1) * z.dim(2);
                    for (std::size_t f = 0; f < z.dim(0); ++f) {
                        const double b = layer.bias[f];
                        for (std::size_t s = 0; s < per; ++s) z[f * per + s] += b;
                    }
                }
                cur = std::move(z);
                break;
            }
            case LayerKind::relu:
                cur = relu(cur);
                break;
            case LayerKind::maxpool:
                cur = maxpool2d(cur, layer.kernel, layer.stride);
                break;
            case LayerKind::avgpool:
                cur = avgpool2d(cur, layer.kernel, layer.stride);
                break;
            case LayerKind::flatten:
                cur = cur.reshaped({cur.size()});
                break;
        }
        if (trace) trace->outputs.push_back(cur);
    }
    return cur;
}

std::size_t size_of(const NetworkModel& model) {
    std::size_t n = 0;
    for (const Layer& l : model.layers) {
        for (double v : l.weights.values()) n += (v != 0.0);
        for (double v : l.bias.values()) n += (v != 0.0);
    }
    return n;
}

std::size_t mac_count(const NetworkModel& model) {
    const auto shapes = layer_output_shapes(model);
    std::size_t macs = 0;
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const Layer& l = model.layers[li];
        if (l.kind == LayerKind::dense) {
            macs += l.weights.dim(0) * l.weights.dim(1);
        } else if (l.kind == LayerKind::conv) {
            macs += l.weights.size() * shapes[li][1] * shapes[li][2];
        }
    }
    return macs;
}

std::vector<std::size_t> weighted_layer_indices(const NetworkModel& model) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        if (model.layers[i].weighted()) idx.push_back(i);
    }
    return idx;
}

std::vector<PrunePair> prunable_pairs(const NetworkModel& model) {
    const auto widx = weighted_layer_indices(model);
    std::vector<PrunePair> pairs;
    for (std::size_t k = 0; k + 1 < widx.size(); ++k) {
        const Layer& prod = model.layers[widx[k]];
        const Layer& cons = model.layers[widx[k + 1]];
        PrunePair pair;
        pair.producer = widx[k];
        pair.consumer = widx[k + 1];
        pair.eta = prod.filters();
        pair.units = cons.filters();
        if (cons.kind == LayerKind::conv) {
            if (cons.weights.dim(1) != pair.eta) {
                throw std::runtime_error("prunable_pairs: conv consumer channels do not match producer filters");
            }
            pair.group = 1;
        } else {
            const std::size_t in = cons.weights.dim(1);
            if (in % pair.eta != 0) {
                throw std::runtime_error("prunable_pairs: dense consumer width not a multiple of producer filters");
            }
            pair.group = in / pair.eta;
        }
        pairs.push_back(pair);
    }
    return pairs;
}

void for_each_consumer_entry(const NetworkModel& model, const PrunePair& pair,
                             const DenseTensor& consumer_input,
                             const std::function<void(const SignedTerms&)>& fn) {
    const Layer& cons = model.layers[pair.consumer];
    SignedTerms terms;
    terms.pos.assign(pair.eta, 0.0);
    terms.neg.assign(pair.eta, 0.0);
    if (cons.kind == LayerKind::dense) {
        const std::size_t in = cons.weights.dim(1);
        if (consumer_input.size() != in) {
            throw std::invalid_argument("consumer input size does not match dense layer width");
        }
        const double* ap = consumer_input.data();
        for (std::size_t i = 0; i < pair.units; ++i) {
            const double* wrow = cons.weights.data() + i * in;
            std::fill(terms.pos.begin(), terms.pos.end(), 0.0);
            std::fill(terms.neg.begin(), terms.neg.end(), 0.0);
            for (std::size_t j = 0; j < pair.eta; ++j) {
                for (std::size_t g = 0; g < pair.group; ++g) {
                    const double t = wrow[j * pair.group + g] * ap[j * pair.group + g];
                    if (t >= 0.0) terms.pos[j] += t;
                    else terms.neg[j] += t;
                }
            }
            fn(terms);
        }
    } else {
        const std::size_t kh = cons.weights.dim(2), kw = cons.weights.dim(3);
        const PatchMatrix pm = im2col(consumer_input, kh, kw, cons.stride, cons.padding);
        const std::size_t np = pm.patches.dim(0);
        const std::size_t win = kh * kw;
        for (std::size_t i = 0; i < pair.units; ++i) {
            const double* wf = cons.weights.data() + i * pair.eta * win;
            for (std::size_t p = 0; p < np; ++p) {
                const double* prow = pm.patches.data() + p * pair.eta * win;
                std::fill(terms.pos.begin(), terms.pos.end(), 0.0);
                std::fill(terms.neg.begin(), terms.neg.end(), 0.0);
                for (std::size_t j = 0; j < pair.eta; ++j) {
                    for (std::size_t u = 0; u < win; ++u) {
                        const double t = wf[j * win + u] * prow[j * win + u];
                        if (t >= 0.0) terms.pos[j] += t;
                        else terms.neg[j] += t;
                    }
                }
                fn(terms);
            }
        }
    }
}

DenseTensor consumer_preact(const NetworkModel& model, const PrunePair& pair,
                            const DenseTensor& consumer_input) {
    const Layer& cons = model.layers[pair.consumer];
    if (cons.kind == LayerKind::dense) {
        const std::size_t in = cons.weights.dim(1);
        DenseTensor z({pair.units});
        for (std::size_t i = 0; i < pair.units; ++i) {
            const double* wrow = cons.weights.data() + i * in;
            double acc = 0.0;
            for (std::size_t k = 0; k < in; ++k) acc += wrow[k] * consumer_input[k];
            z[i] = acc;
        }
        return z;
    }
    return conv2d(cons.weights, consumer_input, cons.stride, cons.padding);
}

DenseTensor consumer_channel_contrib(const NetworkModel& model, const PrunePair& pair,
                                     const DenseTensor& consumer_input, std::size_t j) {
    const Layer& cons = model.layers[pair.consumer];
    if (cons.kind == LayerKind::dense) {
        const std::size_t in = cons.weights.dim(1);
        DenseTensor z({pair.units});
        for (std::size_t i = 0; i < pair.units; ++i) {
            const double* wrow = cons.weights.data() + i * in;
            double acc = 0.0;
            for (std::size_t g = 0; g < pair.group; ++g) {
                acc += wrow[j * pair.group + g] * consumer_input[j * pair.group + g];
            }
            z[i] = acc;
        }
        return z;
    }
    const std::size_t kh = cons.weights.dim(2), kw = cons.weights.dim(3);
    const PatchMatrix pm = im2col(consumer_input, kh, kw, cons.stride, cons.padding);
    const std::size_t np = pm.patches.dim(0);
    const std::size_t win = kh * kw;
    DenseTensor z({pair.units, pm.out_h, pm.out_w});
    for (std::size_t i = 0; i < pair.units; ++i) {
        const double* wf = cons.weights.data() + (i * pair.eta + j) * win;
        for (std::size_t p = 0; p < np; ++p) {
            const double* prow = pm.patches.data() + (p * pair.eta + j) * win;
            double acc = 0.0;
            for (std::size_t u = 0; u < win; ++u) acc += wf[u] * prow[u];
            z[i * np + p] = acc;
        }
    }
    return z;
}

void zero_producer_filter(Layer& producer, std::size_t j) {
    const std::size_t per = producer.weights.size() / producer.weights.dim(0);
    double* wp = producer.weights.data() + j * per;
    std::fill(wp, wp + per, 0.0);
    if (!producer.bias.empty()) producer.bias[j] = 0.0;
}

void zero_consumer_channel(Layer& consumer, const PrunePair& pair, std::size_t j) {
    scale_consumer_channel(consumer, pair, j, 0.0);
}

void scale_consumer_channel(Layer& consumer, const PrunePair& pair, std::size_t j, double factor) {
    if (consumer.kind == LayerKind::dense) {
        const std::size_t in = consumer.weights.dim(1);
        for (std::size_t i = 0; i < pair.units; ++i) {
            double* wrow = consumer.weights.data() + i * in;
            for (std::size_t g = 0; g < pair.group; ++g) wrow[j * pair.group + g] *= factor;
        }
    } else {
        const std::size_t win = consumer.weights.dim(2) * consumer.weights.dim(3);
        for (std::size_t i = 0; i < pair.units; ++i) {
            double* wc = consumer.weights.data() + (i * pair.eta + j) * win;
            for (std::size_t u = 0; u < win; ++u) wc[u] *= factor;
        }
    }
}

bool producer_filter_is_zero(const Layer& producer, std::size_t j) {
    const std::size_t per = producer.weights.size() / producer.weights.dim(0);
    const double* wp = producer.weights.data() + j * per;
    for (std::size_t i = 0; i < per; ++i) {
        if (wp[i] != 0.0) return false;
    }
    if (!producer.bias.empty() && producer.bias[j] != 0.0) return false;
    return true;
}

bool consumer_channel_is_zero(const Layer& consumer, const PrunePair& pair, std::size_t j) {
    if (consumer.kind == LayerKind::dense) {
        const std::size_t in = consumer.weights.dim(1);
        for (std::size_t i = 0; i < pair.units; ++i) {
            const double* wrow = consumer.weights.data() + i * in;
            for (std::size_t g = 0; g < pair.group; ++g) {
                if (wrow[j * pair.group + g] != 0.0) return false;
            }
        }
    } else {
        const std::size_t win = consumer.weights.dim(2) * consumer.weights.dim(3);
        for (std::size_t i = 0; i < pair.units; ++i) {
            const double* wc = consumer.weights.data() + (i * pair.eta + j) * win;
            for (std::size_t u = 0; u < win; ++u) {
                if (wc[u] != 0.0) return false;
            }
        }
    }
    return true;
}

namespace {

// Slice a weighted layer's weights to the kept rows (filters) and kept
// channel groups of the input side.
Layer slice_layer(const Layer& layer, const std::vector<std::size_t>& keep_rows,
                  const std::vector<std::size_t>& keep_in_groups, std::size_t group) {
    Layer out = layer;
    const std::size_t old_rows = layer.weights.dim(0);
    const std::size_t row_len = layer.weights.size() / old_rows;
    const std::size_t old_groups = row_len / group;
    std::vector<std::size_t> rows = keep_rows;
    if (rows.empty()) {
        rows.resize(old_rows);
        for (std::size_t i = 0; i < old_rows; ++i) rows[i] = i;
    }
    std::vector<std::size_t> groups = keep_in_groups;
    if (groups.empty()) {
        groups.resize(old_groups);
        for (std::size_t i = 0; i < old_groups; ++i) groups[i] = i;
    }
    std::vector<double> data;
    data.reserve(rows.size() * groups.size() * group);
    for (std::size_t r : rows) {
        const double* wrow = layer.weights.data() + r * row_len;
        for (std::size_t g : groups) {
            for (std::size_t u = 0; u < group; ++u) data.push_back(wrow[g * group + u]);
        }
    }
    std::vector<std::size_t> shape = layer.weights.shape();
    shape[0] = rows.size();
    if (layer.kind == LayerKind::dense) {
        shape[1] = groups.size() * group;
    } else {
        shape[1] = groups.size();
    }
    out.weights = DenseTensor(shape, std::move(data));
    if (!layer.bias.empty()) {
        std::vector<double> b;
        b.reserve(rows.size());
        for (std::size_t r : rows) b.push_back(layer.bias[r]);
        out.bias = DenseTensor({rows.size()}, std::move(b));
    }
    return out;
}

}  // namespace

NetworkModel compact(const NetworkModel& model) {
    validate_model(model);
    const auto pairs = prunable_pairs(model);
    // kept[widx] as producer; empty means keep all rows.
    std::vector<std::vector<std::size_t>> keep_rows(model.layers.size());
    std::vector<std::vector<std::size_t>> keep_groups(model.layers.size());
    std::vector<std::size_t> group_size(model.layers.size(), 1);
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        const Layer& l = model.layers[li];
        if (l.kind == LayerKind::conv) {
            group_size[li] = l.weights.dim(2) * l.weights.dim(3);
        }
    }

    for (const PrunePair& pair : pairs) {
        std::vector<std::size_t> kept;
        for (std::size_t j = 0; j < pair.eta; ++j) {
            const bool fzero = producer_filter_is_zero(model.layers[pair.producer], j);
            const bool czero = consumer_channel_is_zero(model.layers[pair.consumer], pair, j);
            if (fzero != czero) {
                throw std::runtime_error("compact: inconsistent zero pattern at feature map " + std::to_string(j) +
                                         " of layer " + std::to_string(pair.producer));
            }
            if (!fzero) kept.push_back(j);
        }
        if (kept.empty()) {
            throw std::runtime_error("compact: all feature maps of layer " + std::to_string(pair.producer) +
                                     " are zero; network is degenerate");
        }
        if (kept.size() == pair.eta) continue;  // nothing to remove here
        keep_rows[pair.producer] = kept;
        keep_groups[pair.consumer] = kept;
    }

    // Elements per input channel group within one weight row.
    for (const PrunePair& pair : pairs) {
        if (model.layers[pair.consumer].kind == LayerKind::dense) {
            group_size[pair.consumer] = pair.group;
        }
    }

    NetworkModel out = model;
    for (std::size_t li = 0; li < model.layers.size(); ++li) {
        if (!model.layers[li].weighted()) continue;
        if (keep_rows[li].empty() && keep_groups[li].empty()) continue;
        out.layers[li] = slice_layer(model.layers[li], keep_rows[li], keep_groups[li], group_size[li]);
    }
    validate_model(out);
    return out;
}

void init_weights(NetworkModel& model, std::uint64_t seed) {
    std::size_t w = 0;
    for (Layer& l : model.layers) {
        if (!l.weighted()) continue;
        PhiloxRng rng(seed, w++);
        std::size_t fan_in, fan_out;
        if (l.kind == LayerKind::dense) {
            fan_out = l.weights.dim(0);
            fan_in = l.weights.dim(1);
        } else {
            const std::size_t rf = l.weights.dim(2) * l.weights.dim(3);
            fan_out = l.weights.dim(0) * rf;
            fan_in = l.weights.dim(1) * rf;
        }
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (double& v : l.weights.values()) v = (2.0 * rng.next_double() - 1.0) * limit;
        for (double& v : l.bias.values()) v = 0.0;
    }
}

NetworkModel make_mlp(const std::vector<std::size_t>& dims, std::uint64_t init_seed) {
    if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least in/out dims");
    NetworkModel m;
    m.input_shape = {dims[0]};
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        Layer d;
        d.kind = LayerKind::dense;
        d.weights = DenseTensor({dims[i + 1], dims[i]});
        d.bias = DenseTensor({dims[i + 1]});
        m.layers.push_back(std::move(d));
        if (i + 2 < dims.size()) {
            Layer r;
            r.kind = LayerKind::relu;
            m.layers.push_back(std::move(r));
        }
    }
    init_weights(m, init_seed);
    return m;
}

NetworkModel make_lenet300(std::uint64_t init_seed) {
    NetworkModel m;
    m.input_shape = {1, 28, 28};
    Layer flat;
    flat.kind = LayerKind::flatten;
    m.layers.push_back(flat);
    const std::vector<std::size_t> dims = {784, 300, 100, 10};
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
        Layer d;
        d.kind = LayerKind::dense;
        d.weights = DenseTensor({dims[i + 1], dims[i]});
        d.bias = DenseTensor({dims[i + 1]});
        m.layers.push_back(std::move(d));
        if (i + 2 < dims.size()) {
            Layer r;
            r.kind = LayerKind::relu;
            m.layers.push_back(std::move(r));
        }
    }
    init_weights(m, init_seed);
    return m;
}

NetworkModel make_lenet5(std::uint64_t init_seed) {
    NetworkModel m;
    m.input_shape = {1, 28, 28};
    auto conv = [](std::size_t f, std::size_t c, std::size_t k) {
        Layer l;
        l.kind = LayerKind::conv;
        l.weights = DenseTensor({f, c, k, k});
        l.bias = DenseTensor({f});
        l.stride = 1;
        l.padding = 0;
        return l;
    };
    auto pool = []() {
        Layer l;
        l.kind = LayerKind::maxpool;
        l.kernel = 2;
        l.stride = 2;
        return l;
    };
    Layer r;
    r.kind = LayerKind::relu;
    Layer flat;
    flat.kind = LayerKind::flatten;

    m.layers.push_back(conv(20, 1, 5));   // 28 -> 24
    m.layers.push_back(r);
    m.layers.push_back(pool());           // 24 -> 12
    m.layers.push_back(conv(50, 20, 5));  // 12 -> 8
    m.layers.push_back(r);
    m.layers.push_back(pool());           // 8 -> 4
    m.layers.push_back(flat);             // 800
    Layer fc1;
    fc1.kind = LayerKind::dense;
    fc1.weights = DenseTensor({500, 800});
    fc1.bias = DenseTensor({500});
    m.layers.push_back(std::move(fc1));
    m.layers.push_back(r);
    Layer fc2;
    fc2.kind = LayerKind::dense;
    fc2.weights = DenseTensor({10, 500});
    fc2.bias = DenseTensor({10});
    m.layers.push_back(std::move(fc2));
    init_weights(m, init_seed);
    return m;
}

}  // namespace spnet
