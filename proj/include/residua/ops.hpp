#pragma once

#include <vector>

#include "residua/tensor.hpp"

namespace residua {

enum class Mode { Train, Eval };

/// Parameters of a conv / transposed-conv layer.
/// Weight layout is (out_c, in_c, k, k) for both kinds; only odd kernels
/// are supported and padding is fixed at floor(k/2) by the callers here.
struct ConvParams {
    Tensor4 weight;            // (out_c, in_c, k, k)
    std::vector<float> bias;   // per out channel
    int stride = 1;
    int pad = 0;

    int out_channels() const { return weight.shape.n; }
    int in_channels() const { return weight.shape.c; }
    int kernel() const { return weight.shape.h; }
};

struct ConvGrads {
    Tensor4 grad_x;
    Tensor4 grad_weight;
    std::vector<float> grad_bias;
};

/// Strided cross-correlation with zero padding.
/// Output is (n, out_c, h_out, w_out) with h_out = (h + 2*pad - k)/stride + 1.
Tensor4 conv2d_forward(const Tensor4& x, const ConvParams& p);
ConvGrads conv2d_backward(const Tensor4& x, const ConvParams& p, const Tensor4& grad_out);

/// Adjoint of conv2d_forward with the same (k, stride, pad) geometry.
/// Output is (n, out_c, (h-1)*stride - 2*pad + k + output_pad, ...).
Tensor4 conv_transpose2d_forward(const Tensor4& x, const ConvParams& p, int output_pad);
ConvGrads conv_transpose2d_backward(const Tensor4& x, const ConvParams& p, int output_pad,
                                    const Tensor4& grad_out);

/// Per-channel batch normalization state. Running statistics use the
/// biased (divide by count) batch variance, matching train-mode
/// normalization.
struct BatchNormState {
    std::vector<float> gamma;
    std::vector<float> beta;
    std::vector<float> running_mean;
    std::vector<float> running_var;
    float momentum = 0.1f;
    float eps = 1e-5f;

    explicit BatchNormState(int channels = 0)
        : gamma(channels, 1.0f),
          beta(channels, 0.0f),
          running_mean(channels, 0.0f),
          running_var(channels, 1.0f) {}

    int channels() const { return static_cast<int>(gamma.size()); }
};

/// Train mode normalizes by batch statistics over (n, h, w) and updates
/// the running stats in place; eval mode normalizes by the running stats
/// and leaves the state untouched.
Tensor4 batchnorm_forward(const Tensor4& x, BatchNormState& s, Mode mode);

struct BatchNormGrads {
    Tensor4 grad_x;
    std::vector<float> grad_gamma;
    std::vector<float> grad_beta;
};

/// Gradients for the train-mode forward; batch statistics are recomputed
/// from x, including their dependence on x in grad_x.
BatchNormGrads batchnorm_backward(const Tensor4& x, const BatchNormState& s,
                                  const Tensor4& grad_out);

Tensor4 relu(const Tensor4& x);
Tensor4 relu_backward(const Tensor4& x, const Tensor4& grad_out);

struct MseResult {
    double loss = 0.0;
    Tensor4 grad_pred;
};

/// Mean over all elements of (pred - target)^2, plus d(loss)/d(pred).
MseResult mse_loss(const Tensor4& pred, const Tensor4& target);

} // namespace residua
