#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace spnet {

/// Dense n-dimensional array of f64, row-major. Values are treated as
/// immutable once handed to another module; all ops below return new tensors.
class DenseTensor {
public:
    DenseTensor() = default;
    explicit DenseTensor(std::vector<std::size_t> shape);
    DenseTensor(std::vector<std::size_t> shape, std::vector<double> data);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    std::size_t dim(std::size_t axis) const { return shape_[axis]; }

    double at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
    double& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }

    /// Same data, new shape (element count must match).
    DenseTensor reshaped(std::vector<std::size_t> shape) const;

    bool all_finite() const;

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

std::size_t shape_product(const std::vector<std::size_t>& shape);
bool same_shape(const DenseTensor& a, const DenseTensor& b);
std::string shape_str(const std::vector<std::size_t>& shape);

/// Receptive-field rows extracted from a [c,h,w] input: row p holds the
/// window of output position p, channel-major then row-major in the window.
struct PatchMatrix {
    DenseTensor patches;  // [num_patches, c*kh*kw]
    std::vector<std::size_t> source_shape;  // [c,h,w]
    std::size_t kh = 0, kw = 0;
    std::size_t out_h = 0, out_w = 0;
    std::size_t stride = 1, padding = 0;
};

DenseTensor matmul(const DenseTensor& a, const DenseTensor& b);
PatchMatrix im2col(const DenseTensor& input, std::size_t kh, std::size_t kw,
                   std::size_t stride, std::size_t padding);
DenseTensor conv2d(const DenseTensor& weights, const DenseTensor& input,
                   std::size_t stride, std::size_t padding);
DenseTensor relu(const DenseTensor& x);
DenseTensor maxpool2d(const DenseTensor& input, std::size_t kernel, std::size_t stride);
DenseTensor avgpool2d(const DenseTensor& input, std::size_t kernel, std::size_t stride);

DenseTensor add(const DenseTensor& a, const DenseTensor& b);
DenseTensor scale(const DenseTensor& a, double c);

}  // namespace spnet
