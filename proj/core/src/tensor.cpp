#include "spnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace spnet {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

DenseTensor::DenseTensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {
    for (std::size_t d : shape_) {
        if (d == 0) throw std::invalid_argument("DenseTensor: zero dimension in " + shape_str(shape_));
    }
}

DenseTensor::DenseTensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_product(shape_)) {
        throw std::invalid_argument("DenseTensor: data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_str(shape_));
    }
}

DenseTensor DenseTensor::reshaped(std::vector<std::size_t> shape) const {
    if (shape_product(shape) != data_.size()) {
        throw std::invalid_argument("reshape: element count mismatch, " + shape_str(shape_) +
                                    " -> " + shape_str(shape));
    }
    return DenseTensor(std::move(shape), data_);
}

bool DenseTensor::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

bool same_shape(const DenseTensor& a, const DenseTensor& b) {
    return a.shape() == b.shape();
}

DenseTensor matmul(const DenseTensor& a, const DenseTensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw std::invalid_argument("matmul: expected rank-2 operands, got " +
                                    shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw std::invalid_argument("matmul: inner dimensions disagree, " +
                                    shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    DenseTensor out({m, n});
    const double* ap = a.data();
    const double* bp = b.data();
    double* op = out.data();
    // i,k,j nest: each out[i,j] accumulates its k-terms in ascending order,
    // bit-identical to the naive i,j,k loop, but streams b row-major.
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = ap + i * k;
        double* orow = op + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = bp + kk * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

PatchMatrix im2col(const DenseTensor& input, std::size_t kh, std::size_t kw,
                   std::size_t stride, std::size_t padding) {
    if (input.rank() != 3) {
        throw std::invalid_argument("im2col: expected [c,h,w] input, got " + shape_str(input.shape()));
    }
    if (stride == 0) throw std::invalid_argument("im2col: stride must be positive");
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t ph = h + 2 * padding, pw = w + 2 * padding;
    if (kh == 0 || kw == 0 || kh > ph || kw > pw) {
        throw std::invalid_argument("im2col: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                                    " does not fit padded input " + std::to_string(ph) + "x" + std::to_string(pw));
    }
    const std::size_t out_h = (ph - kh) / stride + 1;
    const std::size_t out_w = (pw - kw) / stride + 1;

    PatchMatrix pm;
    pm.source_shape = input.shape();
    pm.kh = kh;
    pm.kw = kw;
    pm.out_h = out_h;
    pm.out_w = out_w;
    pm.stride = stride;
    pm.padding = padding;
    pm.patches = DenseTensor({out_h * out_w, c * kh * kw});

    const double* in = input.data();
    double* dst = pm.patches.data();
    const std::size_t row_len = c * kh * kw;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ++ox) {
            double* row = dst + (oy * out_w + ox) * row_len;
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t ky = 0; ky < kh; ++ky) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) -
                                              static_cast<std::ptrdiff_t>(padding);
                    for (std::size_t kx = 0; kx < kw; ++kx) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) -
                                                  static_cast<std::ptrdiff_t>(padding);
                        double v = 0.0;
                        if (iy >= 0 && iy < static_cast<std::ptrdiff_t>(h) && ix >= 0 &&
                            ix < static_cast<std::ptrdiff_t>(w)) {
                            v = in[(ch * h + iy) * w + ix];
                        }
                        row[(ch * kh + ky) * kw + kx] = v;
                    }
                }
            }
        }
    }
    return pm;
}

DenseTensor conv2d(const DenseTensor& weights, const DenseTensor& input,
                   std::size_t stride, std::size_t padding) {
    if (weights.rank() != 4) {
        throw std::invalid_argument("conv2d: expected [f,c,kh,kw] weights, got " + shape_str(weights.shape()));
    }
    if (input.rank() != 3) {
        throw std::invalid_argument("conv2d: expected [c,h,w] input, got " + shape_str(input.shape()));
    }
    const std::size_t f = weights.dim(0), c = weights.dim(1);
    const std::size_t kh = weights.dim(2), kw = weights.dim(3);
    if (c != input.dim(0)) {
        throw std::invalid_argument("conv2d: channel mismatch, weights " + shape_str(weights.shape()) +
                                    " vs input " + shape_str(input.shape()));
    }
    PatchMatrix pm = im2col(input, kh, kw, stride, padding);
    // W [f, c*kh*kw] times patches^T, transpose fused into the indexing;
    // each output entry accumulates its k-terms in ascending order.
    const std::size_t np = pm.patches.dim(0);
    const std::size_t klen = pm.patches.dim(1);
    DenseTensor out({f, pm.out_h, pm.out_w});
    const double* wp = weights.data();
    const double* pp = pm.patches.data();
    double* op = out.data();
    for (std::size_t fi = 0; fi < f; ++fi) {
        const double* wrow = wp + fi * klen;
        for (std::size_t p = 0; p < np; ++p) {
            const double* prow = pp + p * klen;
            double acc = 0.0;
            for (std::size_t kk = 0; kk < klen; ++kk) acc += wrow[kk] * prow[kk];
            op[fi * np + p] = acc;
        }
    }
    return out;
}

DenseTensor relu(const DenseTensor& x) {
    DenseTensor out = x;
    for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
    return out;
}

static void check_pool_args(const DenseTensor& input, std::size_t kernel, std::size_t stride) {
    if (input.rank() != 3) {
        throw std::invalid_argument("pool: expected [c,h,w] input, got " + shape_str(input.shape()));
    }
    if (kernel == 0 || stride == 0) throw std::invalid_argument("pool: kernel and stride must be positive");
    if (kernel > input.dim(1) || kernel > input.dim(2)) {
        throw std::invalid_argument("pool: kernel larger than input " + shape_str(input.shape()));
    }
}

DenseTensor maxpool2d(const DenseTensor& input, std::size_t kernel, std::size_t stride) {
    check_pool_args(input, kernel, stride);
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
    DenseTensor out({c, oh, ow});
    const double* in = input.data();
    double* op = out.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double best = in[(ch * h + oy * stride) * w + ox * stride];
                for (std::size_t ky = 0; ky < kernel; ++ky) {
                    for (std::size_t kx = 0; kx < kernel; ++kx) {
                        best = std::max(best, in[(ch * h + oy * stride + ky) * w + ox * stride + kx]);
                    }
                }
                op[(ch * oh + oy) * ow + ox] = best;
            }
        }
    }
    return out;
}

DenseTensor avgpool2d(const DenseTensor& input, std::size_t kernel, std::size_t stride) {
    check_pool_args(input, kernel, stride);
    const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
    const std::size_t oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
    DenseTensor out({c, oh, ow});
    const double* in = input.data();
    double* op = out.data();
    const double inv = 1.0 / static_cast<double>(kernel * kernel);
    for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (std::size_t ky = 0; ky < kernel; ++ky) {
                    for (std::size_t kx = 0; kx < kernel; ++kx) {
                        acc += in[(ch * h + oy * stride + ky) * w + ox * stride + kx];
                    }
                }
                op[(ch * oh + oy) * ow + ox] = acc * inv;
            }
        }
    }
    return out;
}

DenseTensor add(const DenseTensor& a, const DenseTensor& b) {
    if (!same_shape(a, b)) {
        throw std::invalid_argument("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    DenseTensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

DenseTensor scale(const DenseTensor& a, double c) {
    DenseTensor out = a;
    for (double& v : out.values()) v *= c;
    return out;
}

}  // namespace spnet
