#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spnet/tensor.hpp"
#include "spnet/model.hpp"

namespace spnet {

struct Dataset {
    DenseTensor inputs;       // [n, ...sample_shape]
    std::vector<int> labels;  // classification labels, empty if none
    DenseTensor targets;      // regression targets [n,k], empty if none
    std::string split;        // train / val / test / synthetic

    std::size_t count() const { return inputs.empty() ? 0 : inputs.dim(0); }
    std::vector<std::size_t> sample_shape() const;
    DenseTensor sample(std::size_t i) const;
};

/// Same data, each sample viewed with `shape` (element counts must match).
Dataset with_sample_shape(const Dataset& ds, const std::vector<std::size_t>& shape);
Dataset subset(const Dataset& ds, const std::vector<std::size_t>& indices);

/// IDX (big-endian, magic 0x803 images / 0x801 labels); pixels scaled to
/// [0,1] by division by 255.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);
void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

/// CSV with a header row, one sample per line; label column by name.
Dataset load_csv(const std::string& path, const std::string& label_column);

enum class SynthKind { uniform, gaussian_abs, exponential, pathological };

struct SynthSpec {
    SynthKind kind = SynthKind::uniform;
    std::size_t dim = 16;
    std::size_t k = 0;     // pathological spike coordinate
    double mass = 0.0;     // pathological spike probability
};

/// e.g. "uniform:dim=16", "pathological:k=0,mass=0.001,dim=32".
SynthSpec parse_synth_spec(const std::string& spec);

/// Nonnegative synthetic activation vectors; pathological(k, mass) emits the
/// one-hot spike at coordinate k with probability `mass`.
Dataset synth_activations(std::size_t n, const SynthSpec& spec, std::uint64_t seed);

/// Seeded 90/10-style shuffle split; the two parts are disjoint.
std::pair<Dataset, Dataset> split_train_val(const Dataset& ds, double train_frac, std::uint64_t seed);

/// t points sampled uniformly with replacement (pass the validation split).
Dataset draw_calibration(const Dataset& ds, std::size_t t, std::uint64_t seed);

/// ceil(K' * ln(8 * eta_star * eta_next_max / delta)), capped at 256.
std::size_t default_calib_size(const NetworkModel& model, double delta, double k_prime);

}  // namespace spnet
