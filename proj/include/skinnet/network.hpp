#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "skinnet/ops.hpp"

namespace skinnet {

/// Densely connected block: every layer sees the block input plus all
/// earlier layer outputs, and the block emits all of them concatenated.
struct DenseBlockSpec {
    int in_channels = 0;
    int growth = 0;
    int layers = 2;
    int kernel = 3;

    int layer_in_channels(int layer) const { return in_channels + layer * growth; }
    int out_channels() const { return in_channels + layers * growth; }
    void validate() const;
};

/// Parallel dilated 3x3 branches over the deepest features, fused by a 1x1 conv.
struct BottleneckSpec {
    int in_channels = 0;
    std::vector<int> rates{1, 2, 4, 8, 16, 32};
    int branch_channels = 0;
    int fuse_kernel = 1;

    int concat_channels() const { return static_cast<int>(rates.size()) * branch_channels; }
    void validate() const;
};

struct ModelSpec {
    int depth = 4;
    int base_growth = 8;
    int in_channels = 3;
    int classes = 2;
    int input_size = 512;
    std::vector<int> bottleneck_rates{1, 2, 4, 8, 16, 32};
    /// 0 selects base_growth << depth.
    int bottleneck_channels = 0;

    int growth_at(int level) const { return base_growth << level; }
    int resolved_bottleneck_channels() const {
        return bottleneck_channels > 0 ? bottleneck_channels : base_growth << depth;
    }
    void validate() const;
    bool operator==(const ModelSpec&) const = default;
};

/// One convolution in the assembled network, in construction order.
struct ConvLayout {
    std::string name;  // parameter prefix, e.g. "enc0/dense/conv1"
    int in_channels;
    int out_channels;
    int kernel;
};

/// Every convolution of the model described by `spec`, in the order the
/// builder creates (and initializes) them.
std::vector<ConvLayout> skinnet_layout(const ModelSpec& spec);

template <typename Real>
struct ConvParams {
    Tensor<Real> kernel;
    Tensor<Real> bias;
};

template <typename Real>
struct DenseBlockParams {
    std::vector<ConvParams<Real>> layers;
};

template <typename Real>
struct BottleneckParams {
    std::vector<ConvParams<Real>> branches;
    ConvParams<Real> fuse;
};

/// Zero-initialized parameters shaped for `spec`.
template <typename Real>
DenseBlockParams<Real> make_dense_block_params(const DenseBlockSpec& spec);
template <typename Real>
BottleneckParams<Real> make_bottleneck_params(const BottleneckSpec& spec);

/// relu(conv) per layer over the running concatenation; returns
/// concat(x, h1, ..., hL). Same padding keeps spatial extents.
template <typename Real>
Tensor<Real> dense_block_forward(const Tensor<Real>& x, const DenseBlockSpec& spec, const DenseBlockParams<Real>& params,
                                 Tape<Real>* tape = nullptr);

/// branch_r = relu(conv3x3(x, dilation r, pad r)); returns relu(conv1x1(concat(branches))).
template <typename Real>
Tensor<Real> bottleneck_forward(const Tensor<Real>& x, const BottleneckSpec& spec, const BottleneckParams<Real>& params,
                                Tape<Real>* tape = nullptr);

template <typename Real>
class Model {
public:
    using ParameterMap = std::map<std::string, Tensor<Real>>;

    const ModelSpec& spec() const { return spec_; }

    /// Named parameters ("enc0/dense/conv1/kernel", ...). Handles alias the
    /// tensors used by forward(), so writing through them updates the model.
    const ParameterMap& parameters() const { return named_; }
    std::vector<Tensor<Real>> parameter_list() const;

    void zero_grad();
    void set_requires_grad(bool on);

    /// Same architecture and parameter values, in another precision.
    template <typename Other>
    Model<Other> cast() const;

    template <typename>
    friend class Model;
    template <typename R>
    friend Model<R> build_skinnet(const ModelSpec& spec, std::uint64_t seed);
    template <typename R>
    friend Tensor<R> forward(const Model<R>& model, const Tensor<R>& batch, Tape<R>* tape);

private:
    struct Encoder {
        DenseBlockSpec spec;
        DenseBlockParams<Real> dense;
    };
    struct Decoder {
        ConvParams<Real> up;
        DenseBlockSpec spec;
        DenseBlockParams<Real> dense;
    };

    static Model allocate(const ModelSpec& spec);
    void register_all();

    ModelSpec spec_;
    std::vector<Encoder> encoders_;
    BottleneckSpec bottleneck_spec_;
    BottleneckParams<Real> bottleneck_;
    std::vector<Decoder> decoders_;  // index = level
    ConvParams<Real> head_;
    ParameterMap named_;
};

/// Assembles the dense-block U-Net with the dilated bottleneck. Kernels are
/// He-uniform (bound sqrt(6/fan_in)), biases zero, deterministic in `seed`.
template <typename Real>
Model<Real> build_skinnet(const ModelSpec& spec, std::uint64_t seed);

/// Per-pixel class probabilities (B,classes,H,W) for a (B,in_channels,H,W)
/// batch whose extents are divisible by 2^depth.
template <typename Real>
Tensor<Real> forward(const Model<Real>& model, const Tensor<Real>& batch, Tape<Real>* tape = nullptr);

template <typename Real>
std::size_t parameter_count(const Model<Real>& model);

/// k*k*in*out weights plus out biases.
std::size_t parameter_count(const ConvLayout& conv);
std::size_t parameter_count(const ModelSpec& spec);

}  // namespace skinnet
