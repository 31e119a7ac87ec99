#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "residua/ops.hpp"
#include "residua/tensor.hpp"

namespace residua {

enum class LayerKind { Conv, ConvTranspose };

struct LayerSpec {
    std::string name;
    LayerKind kind = LayerKind::Conv;
    int kernel = 1;
    int stride = 1;
    int filters = 1;
    std::vector<std::string> input_sources;  // layer names, or "input"
    bool normalized = true;                  // batch norm + ReLU applied
};

struct ArchitectureSpec {
    std::vector<LayerSpec> layers;
    int input_channels = 1;
    int downsample_factor = 8;
};

/// The fixed autoencoder: encoder x1..x5 with kernels 11,9,7,5,3, decoder
/// x6..x9 with the reverse kernel order and skip concatenations into
/// x7..x9, linear 11x11 output head.
ArchitectureSpec build_default_architecture();

/// Structural checks: resolvable sources, odd kernels, consistent spatial
/// scales at every concatenation, stride composition restoring the input
/// size, and a final channel count matching input_channels.
void validate_architecture(const ArchitectureSpec& arch);

/// Input channel count of each layer (sum of source filter counts).
std::vector<int> layer_in_channels(const ArchitectureSpec& arch);

struct LayerParams {
    ConvParams conv;
    BatchNormState bn;  // channels 0 when the layer is not normalized
};

/// A flat view into one named parameter array of a ParamStore.
struct NamedParam {
    std::string name;                 // e.g. "x1.weight"
    std::vector<float>* flat;         // live storage, never null
    std::vector<std::uint32_t> dims;  // rank == dims.size(): 4 for weights, 1 for vectors
    bool learnable;                   // false for running_mean / running_var
};

struct ParamStore {
    std::vector<LayerParams> layers;  // parallel to ArchitectureSpec::layers
};

/// Views over every named array, sorted by qualified name.
std::vector<NamedParam> named_views(const ArchitectureSpec& arch, ParamStore& store);

/// Gaussian weights with std sqrt(2 / fan_in), zero biases, identity
/// batch-norm state; draws happen in architecture order.
ParamStore init_params(const ArchitectureSpec& arch, Rng& rng);

/// Same structure as init_params output with every array zeroed; holds
/// gradients or optimizer moments.
ParamStore zeros_like_params(const ArchitectureSpec& arch);

struct LayerCache {
    Tensor4 concat_input;  // only populated for two-source layers
    Tensor4 conv_out;      // pre-normalization output
    Tensor4 activ;         // layer output (post BN+ReLU where normalized)
};

struct ForwardCache {
    Mode mode = Mode::Eval;
    Tensor4 input;
    std::vector<LayerCache> layers;
};

struct ForwardResult {
    Tensor4 reconstruction;
    ForwardCache cache;
};

/// Runs the network. Train mode updates batch-norm running statistics in
/// place; eval mode leaves params untouched.
ForwardResult forward(const ArchitectureSpec& arch, ParamStore& params, const Tensor4& x,
                      Mode mode);

/// Backpropagates grad_recon through a train-mode cache, returning a
/// gradient store (running stats stay zero).
ParamStore backward(const ArchitectureSpec& arch, const ParamStore& params,
                    const ForwardCache& cache, const Tensor4& grad_recon);

void save_checkpoint(const ArchitectureSpec& arch, ParamStore& params, const std::string& path);
ParamStore load_checkpoint(const ArchitectureSpec& arch, const std::string& path);

} // namespace residua
