#include "spnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "spnet/rng.hpp"
#include "spnet/serialize.hpp"

namespace spnet {

std::vector<std::size_t> Dataset::sample_shape() const {
    std::vector<std::size_t> s(inputs.shape().begin() + 1, inputs.shape().end());
    return s;
}

DenseTensor Dataset::sample(std::size_t i) const {
    const std::size_t per = inputs.size() / count();
    std::vector<double> d(inputs.data() + i * per, inputs.data() + (i + 1) * per);
    return DenseTensor(sample_shape(), std::move(d));
}

Dataset with_sample_shape(const Dataset& ds, const std::vector<std::size_t>& shape) {
    const std::size_t per = ds.inputs.size() / std::max<std::size_t>(ds.count(), 1);
    if (shape_product(shape) != per) {
        throw std::invalid_argument("with_sample_shape: element count mismatch");
    }
    Dataset out = ds;
    std::vector<std::size_t> full = {ds.count()};
    full.insert(full.end(), shape.begin(), shape.end());
    out.inputs = ds.inputs.reshaped(full);
    return out;
}

Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices) {
    const std::size_t per = ds.inputs.size() / std::max<std::size_t>(ds.count(), 1);
    std::vector<double> data;
    data.reserve(indices.size() * per);
    for (std::size_t i : indices) {
        if (i >= ds.count()) throw std::out_of_range("subset: index out of range");
        data.insert(data.end(), ds.inputs.data() + i * per, ds.inputs.data() + (i + 1) * per);
    }
    Dataset out;
    std::vector<std::size_t> shape = ds.inputs.shape();
    shape[0] = indices.size();
    out.inputs = DenseTensor(shape, std::move(data));
    if (!ds.labels.empty()) {
        out.labels.reserve(indices.size());
        for (std::size_t i : indices) out.labels.push_back(ds.labels[i]);
    }
    if (!ds.targets.empty()) {
        const std::size_t k = ds.targets.dim(1);
        std::vector<double> t;
        t.reserve(indices.size() * k);
        for (std::size_t i : indices) {
            t.insert(t.end(), ds.targets.data() + i * k, ds.targets.data() + (i + 1) * k);
        }
        out.targets = DenseTensor({indices.size(), k}, std::move(t));
    }
    out.split = ds.split;
    return out;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw format_error(path + ": truncated header");
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | b[3];
}

void write_be32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<char*>(b), 4);
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw io_error("cannot open " + images_path);
    const std::uint32_t magic = read_be32(img, images_path);
    if (magic != 0x00000803u) {
        throw format_error(images_path + ": bad magic (want 0x00000803)");
    }
    const std::uint32_t n = read_be32(img, images_path);
    const std::uint32_t rows = read_be32(img, images_path);
    const std::uint32_t cols = read_be32(img, images_path);
    std::vector<unsigned char> raw(static_cast<std::size_t>(n) * rows * cols);
    img.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(img.gcount()) != raw.size()) {
        throw format_error(images_path + ": truncated image data");
    }

    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw io_error("cannot open " + labels_path);
    const std::uint32_t lmagic = read_be32(lab, labels_path);
    if (lmagic != 0x00000801u) {
        throw format_error(labels_path + ": bad magic (want 0x00000801)");
    }
    const std::uint32_t ln = read_be32(lab, labels_path);
    if (ln != n) {
        throw format_error(labels_path + ": label count " + std::to_string(ln) +
                           " does not match image count " + std::to_string(n));
    }
    std::vector<unsigned char> lraw(ln);
    lab.read(reinterpret_cast<char*>(lraw.data()), static_cast<std::streamsize>(lraw.size()));
    if (static_cast<std::size_t>(lab.gcount()) != lraw.size()) {
        throw format_error(labels_path + ": truncated label data");
    }

    Dataset ds;
    std::vector<double> data(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) data[i] = raw[i] / 255.0;
    ds.inputs = DenseTensor({n, rows, cols}, std::move(data));
    ds.labels.assign(lraw.begin(), lraw.end());
    return ds;
}

void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path) {
    if (ds.inputs.rank() != 3) {
        throw std::invalid_argument("save_idx: inputs must be [n,rows,cols]");
    }
    std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
    if (!img) throw io_error("cannot write " + images_path);
    write_be32(img, 0x00000803u);
    write_be32(img, static_cast<std::uint32_t>(ds.count()));
    write_be32(img, static_cast<std::uint32_t>(ds.inputs.dim(1)));
    write_be32(img, static_cast<std::uint32_t>(ds.inputs.dim(2)));
    std::vector<unsigned char> raw(ds.inputs.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        raw[i] = static_cast<unsigned char>(std::lround(ds.inputs[i] * 255.0));
    }
    img.write(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!img) throw io_error("write failure on " + images_path);

    std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
    if (!lab) throw io_error("cannot write " + labels_path);
    write_be32(lab, 0x00000801u);
    write_be32(lab, static_cast<std::uint32_t>(ds.labels.size()));
    std::vector<unsigned char> lraw(ds.labels.begin(), ds.labels.end());
    lab.write(reinterpret_cast<char*>(lraw.data()), static_cast<std::streamsize>(lraw.size()));
    if (!lab) throw io_error("write failure on " + labels_path);
}

Dataset load_csv(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw format_error(path + ": empty file");
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) header.push_back(cell);
    }
    std::ptrdiff_t label_idx = -1;
    if (!label_column.empty()) {
        const auto it = std::find(header.begin(), header.end(), label_column);
        if (it == header.end()) throw format_error(path + ": no column named " + label_column);
        label_idx = it - header.begin();
    }
    std::vector<double> data;
    std::vector<int> labels;
    std::size_t n = 0;
    const std::size_t width = header.size() - (label_idx >= 0 ? 1 : 0);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::size_t col = 0, kept = 0;
        while (std::getline(ss, cell, ',')) {
            if (static_cast<std::ptrdiff_t>(col) == label_idx) {
                labels.push_back(std::stoi(cell));
            } else {
                data.push_back(std::stod(cell));
                ++kept;
            }
            ++col;
        }
        if (col != header.size() || kept != width) {
            throw format_error(path + ": row " + std::to_string(n + 2) + " has " + std::to_string(col) +
                               " cells, header has " + std::to_string(header.size()));
        }
        ++n;
    }
    if (n == 0) throw format_error(path + ": no data rows");
    Dataset ds;
    ds.inputs = DenseTensor({n, width}, std::move(data));
    ds.labels = std::move(labels);
    return ds;
}

SynthSpec parse_synth_spec(const std::string& spec) {
    SynthSpec s;
    const auto colon = spec.find(':');
    const std::string name = spec.substr(0, colon);
    if (name == "uniform") s.kind = SynthKind::uniform;
    else if (name == "gaussian_abs") s.kind = SynthKind::gaussian_abs;
    else if (name == "exponential") s.kind = SynthKind::exponential;
    else if (name == "pathological") s.kind = SynthKind::pathological;
    else throw std::invalid_argument("unknown synthetic distribution: " + name);
    if (colon == std::string::npos) return s;
    std::stringstream ss(spec.substr(colon + 1));
    std::string kv;
    while (std::getline(ss, kv, ',')) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw std::invalid_argument("bad synthetic spec field: " + kv);
        const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        if (key == "dim") s.dim = std::stoul(val);
        else if (key == "k") s.k = std::stoul(val);
        else if (key == "mass") s.mass = std::stod(val);
        else throw std::invalid_argument("unknown synthetic spec key: " + key);
    }
    return s;
}

Dataset synth_activations(std::size_t n, const SynthSpec& spec, std::uint64_t seed) {
    if (n == 0) throw std::invalid_argument("synth_activations: n must be positive");
    if (spec.dim == 0) throw std::invalid_argument("synth_activations: dim must be positive");
    if (spec.kind == SynthKind::pathological) {
        if (spec.mass < 0.0 || spec.mass > 1.0) {
            throw std::invalid_argument("synth_activations: mass must lie in [0,1]");
        }
        if (spec.k >= spec.dim) throw std::invalid_argument("synth_activations: spike coordinate out of range");
    }
    PhiloxRng rng(seed, 0x5059);
    std::vector<double> data(n * spec.dim, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double* row = data.data() + i * spec.dim;
        switch (spec.kind) {
            case SynthKind::uniform:
                for (std::size_t d = 0; d < spec.dim; ++d) row[d] = rng.next_double();
                break;
            case SynthKind::gaussian_abs:
                for (std::size_t d = 0; d < spec.dim; ++d) row[d] = std::fabs(rng.next_gaussian());
                break;
            case SynthKind::exponential:
                for (std::size_t d = 0; d < spec.dim; ++d) row[d] = -std::log1p(-rng.next_double());
                break;
            case SynthKind::pathological: {
                const bool spike = rng.next_double() < spec.mass;
                if (spike) {
                    row[spec.k] = 1.0;
                } else {
                    for (std::size_t d = 0; d < spec.dim; ++d) row[d] = rng.next_double();
                }
                break;
            }
        }
    }
    Dataset ds;
    ds.inputs = DenseTensor({n, spec.dim}, std::move(data));
    ds.split = "synthetic";
    return ds;
}

std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double train_frac, std::uint64_t seed) {
    if (ds.count() == 0) throw std::invalid_argument("split_train_val: empty dataset");
    if (train_frac <= 0.0 || train_frac >= 1.0) {
        throw std::invalid_argument("split_train_val: train_frac must lie in (0,1)");
    }
    std::vector<std::size_t> perm(ds.count());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    PhiloxRng rng(seed, 0x53504C);
    for (std::size_t i = perm.size(); i > 1; --i) {
        const std::size_t j = rng.next_below(i);
        std::swap(perm[i - 1], perm[j]);
    }
    const std::size_t ntrain = std::max<std::size_t>(1, static_cast<std::size_t>(ds.count() * train_frac));
    std::vector<std::size_t> tr(perm.begin(), perm.begin() + ntrain);
    std::vector<std::size_t> va(perm.begin() + ntrain, perm.end());
    if (va.empty()) va.push_back(perm.back());
    Dataset train = subset(ds, tr);
    Dataset val = subset(ds, va);
    train.split = "train";
    val.split = "val";
    return {std::move(train), std::move(val)};
}

Dataset draw_calibration(const Dataset& ds, std::size_t t, std::uint64_t seed) {
    if (t == 0) throw std::invalid_argument("draw_calibration: t must be >= 1");
    if (ds.count() == 0) throw std::invalid_argument("draw_calibration: empty dataset");
    PhiloxRng rng(seed, 0xCA11B);
    std::vector<std::size_t> idx(t);
    for (std::size_t i = 0; i < t; ++i) idx[i] = rng.next_below(ds.count());
    Dataset out = subset(ds, idx);
    out.split = "calibration";
    return out;
}

std::size_t default_calib_size(const NetworkModel& model, double delta, double k_prime) {
    const auto pairs = prunable_pairs(model);
    std::size_t eta_star = 1, eta_next = 1;
    for (const PrunePair& p : pairs) {
        eta_star = std::max(eta_star, p.eta);
        eta_next = std::max(eta_next, p.units);
    }
    const double raw = std::ceil(k_prime * std::log(8.0 * eta_star * eta_next / delta));
    const std::size_t t = raw < 1.0 ? 1 : static_cast<std::size_t>(raw);
    return std::min<std::size_t>(t, 256);
}

}  // namespace spnet
