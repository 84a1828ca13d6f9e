#pragma once

#include <cstdint>
#include <vector>

#include <span>

#include "skinnet/tensor.hpp"

namespace skinnet {

/// Span of a k-tap kernel whose taps sit `dilation` pixels apart.
int effective_kernel_extent(int k, int dilation);

/// Padding that keeps spatial extents unchanged at stride 1.
int same_padding(int k, int dilation);

struct Conv2dOptions {
    int stride = 1;
    int dilation = 1;
    int padding = 0;
};

/// Output extent of a convolution along one axis; throws ShapeError unless it
/// is a positive integer.
std::size_t conv_output_extent(std::size_t in, int k, const Conv2dOptions& opt);

// Every operation below records itself on `tape` when a tape is given and at
// least one input requires a gradient. Pass nullptr for inference.

/// input (B,C,H,W), kernel (O,C,k,k), bias (O) -> (B,O,H',W'), zero padded.
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& kernel, const Tensor<Real>& bias,
                    const Conv2dOptions& opt, Tape<Real>* tape = nullptr);

/// Non-overlapping max pooling; backward routes to the first maximum in row-major order.
template <typename Real>
Tensor<Real> max_pool2d(const Tensor<Real>& input, int window = 2, Tape<Real>* tape = nullptr);

template <typename Real>
Tensor<Real> upsample2d_nearest(const Tensor<Real>& input, int factor = 2, Tape<Real>* tape = nullptr);

template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b, Tape<Real>* tape = nullptr);

/// Channel concatenation of several (B,Ci,H,W) tensors, in order.
template <typename Real>
Tensor<Real> concat_channels(std::span<const Tensor<Real>> parts, Tape<Real>* tape = nullptr);

enum class Activation { relu, sigmoid };

// Piecewise pattern (relu signs, pool argmax offsets) appended by every
// relu and max_pool2d call while a ScopedKinkProbe is alive.
struct KinkProbe {
    std::vector<std::uint32_t> pattern;
};

class ScopedKinkProbe {
public:
    explicit ScopedKinkProbe(KinkProbe& probe);
    ~ScopedKinkProbe();
    ScopedKinkProbe(const ScopedKinkProbe&) = delete;
    ScopedKinkProbe& operator=(const ScopedKinkProbe&) = delete;

private:
    KinkProbe* previous_;
};

KinkProbe* active_kink_probe();

template <typename Real>
Tensor<Real> activation(const Tensor<Real>& input, Activation kind, Tape<Real>* tape = nullptr);

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& input, Tape<Real>* tape = nullptr) {
    return activation(input, Activation::relu, tape);
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& input, Tape<Real>* tape = nullptr) {
    return activation(input, Activation::sigmoid, tape);
}

/// Per-pixel softmax over axis 1 of a (B,K,H,W) tensor.
template <typename Real>
Tensor<Real> softmax_channels(const Tensor<Real>& input, Tape<Real>* tape = nullptr);

/// Sum of all elements as a scalar.
template <typename Real>
Tensor<Real> sum(const Tensor<Real>& input, Tape<Real>* tape = nullptr);

/// Elementwise product of equally shaped tensors.
template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b, Tape<Real>* tape = nullptr);

}  // namespace skinnet
