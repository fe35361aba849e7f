#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spnet/tensor.hpp"

namespace spnet {

enum class LayerKind { dense, conv, relu, maxpool, avgpool, flatten };

std::string layer_kind_name(LayerKind k);
LayerKind layer_kind_from_name(const std::string& name);

struct Layer {
    LayerKind kind;
    DenseTensor weights;  // dense: [out,in]; conv: [f,c,kh,kw]; empty otherwise
    DenseTensor bias;     // [out] / [f]; may be empty
    std::size_t stride = 1;   // conv / pool
    std::size_t padding = 0;  // conv
    std::size_t kernel = 2;   // pool window

    bool weighted() const { return kind == LayerKind::dense || kind == LayerKind::conv; }
    /// Filters (conv) or output units (dense).
    std::size_t filters() const { return weights.dim(0); }
};

/// Sequential network; immutable after load. Pruning produces new models.
struct NetworkModel {
    std::vector<Layer> layers;
    std::vector<std::size_t> input_shape;
};

/// Shape-composition check; throws on inconsistency (no weighted layer,
/// non-composing shapes, pool on flat input, ...).
void validate_model(const NetworkModel& model);

/// Output shape of every layer given the model input shape.
std::vector<std::vector<std::size_t>> layer_output_shapes(const NetworkModel& model);

struct ForwardTrace {
    DenseTensor input;
    std::vector<DenseTensor> outputs;  // outputs[i] = output of layers[i]

    const DenseTensor& input_of(std::size_t layer_index) const {
        return layer_index == 0 ? input : outputs[layer_index - 1];
    }
};

DenseTensor forward(const NetworkModel& model, const DenseTensor& x, ForwardTrace* trace = nullptr);

/// Count of nonzero weight entries, biases included.
std::size_t size_of(const NetworkModel& model);

/// Multiply-accumulates of one inference pass (dense + conv layers).
std::size_t mac_count(const NetworkModel& model);

/// A filter/channel pair eligible for structured pruning: producer's filter j
/// feeds exactly the consumer's channel group j.
struct PrunePair {
    std::size_t producer;  // layer index, dense|conv
    std::size_t consumer;  // next weighted layer index, dense|conv
    std::size_t eta;       // producer feature maps
    std::size_t group;     // consumer input columns per feature map (dense consumer; 1:1 slices for conv)
    std::size_t units;     // consumer output units (rows / filters)
};

/// All (producer, consumer) pairs; every weighted layer except the last
/// produces prunable feature maps.
std::vector<PrunePair> prunable_pairs(const NetworkModel& model);

std::vector<std::size_t> weighted_layer_indices(const NetworkModel& model);

/// Per-feature-map, sign-split contributions to one consumer pre-activation
/// entry: pos[j] >= 0 and neg[j] <= 0 sum the channel's nonnegative and
/// negative terms w*a.
struct SignedTerms {
    std::vector<double> pos;
    std::vector<double> neg;
};

/// Invoke fn once per consumer output entry (unit for dense; filter x patch
/// for conv) with that entry's per-channel signed contributions.
/// `consumer_input` is the consumer's input as traced (flat for dense,
/// [c,h,w] for conv).
void for_each_consumer_entry(const NetworkModel& model, const PrunePair& pair,
                             const DenseTensor& consumer_input,
                             const std::function<void(const SignedTerms&)>& fn);

/// Consumer pre-activation from its traced input, bias excluded (the
/// quantity the sampling estimator approximates).
DenseTensor consumer_preact(const NetworkModel& model, const PrunePair& pair,
                            const DenseTensor& consumer_input);

/// Contribution of feature map j alone to the consumer pre-activation.
DenseTensor consumer_channel_contrib(const NetworkModel& model, const PrunePair& pair,
                                     const DenseTensor& consumer_input, std::size_t j);

// Channel surgery (operates on copies owned by the pruner).
void zero_producer_filter(Layer& producer, std::size_t j);
void zero_consumer_channel(Layer& consumer, const PrunePair& pair, std::size_t j);
void scale_consumer_channel(Layer& consumer, const PrunePair& pair, std::size_t j, double factor);
bool producer_filter_is_zero(const Layer& producer, std::size_t j);
bool consumer_channel_is_zero(const Layer& consumer, const PrunePair& pair, std::size_t j);

/// Physically remove zero filter/channel pairs. Outputs are preserved
/// exactly; inconsistent zero patterns raise an integrity error.
NetworkModel compact(const NetworkModel& model);

// Architecture presets.
NetworkModel make_lenet300(std::uint64_t init_seed);
NetworkModel make_lenet5(std::uint64_t init_seed);
/// Flat relu MLP: dims = {in, h1, ..., out}.
NetworkModel make_mlp(const std::vector<std::size_t>& dims, std::uint64_t init_seed);

/// Uniform +-sqrt(6/(fan_in+fan_out)) init over all weighted layers.
void init_weights(NetworkModel& model, std::uint64_t seed);

}  // namespace spnet
