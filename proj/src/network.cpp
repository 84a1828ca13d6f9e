#include "skinnet/network.hpp"

#include <cmath>
#include <stdexcept>

#include "skinnet/random.hpp"

namespace skinnet {

void DenseBlockSpec::validate() const {
    if (in_channels < 1 || growth < 1 || layers < 1)
        throw std::invalid_argument("DenseBlockSpec: in_channels, growth and layers must be >= 1");
    if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("DenseBlockSpec: kernel must be odd");
}

void BottleneckSpec::validate() const {
    if (rates.empty()) throw std::invalid_argument("BottleneckSpec: empty rate list");
    for (std::size_t i = 0; i < rates.size(); ++i) {
        if (rates[i] < 1) throw std::invalid_argument("BottleneckSpec: dilation rates must be >= 1");
        if (i > 0 && rates[i] <= rates[i - 1])
            throw std::invalid_argument("BottleneckSpec: dilation rates must be strictly increasing");
    }
    if (in_channels < 1 || branch_channels < 1)
        throw std::invalid_argument("BottleneckSpec: channel counts must be >= 1");
    if (fuse_kernel < 1 || fuse_kernel % 2 == 0) throw std::invalid_argument("BottleneckSpec: fuse_kernel must be odd");
}

void ModelSpec::validate() const {
    if (depth < 1 || depth > 16) throw std::invalid_argument("ModelSpec: depth must be in [1,16]");
    if (base_growth < 1 || in_channels < 1) throw std::invalid_argument("ModelSpec: base_growth and in_channels must be >= 1");
    if (classes < 2) throw std::invalid_argument("ModelSpec: classes must be >= 2");
    if (input_size < 1 || input_size % (1 << depth) != 0)
        throw std::invalid_argument("ModelSpec: input_size " + std::to_string(input_size) +
                                    " is not divisible by 2^depth = " + std::to_string(1 << depth));
    BottleneckSpec probe{1, bottleneck_rates, resolved_bottleneck_channels(), 1};
    probe.validate();
}

std::vector<ConvLayout> skinnet_layout(const ModelSpec& spec) {
    spec.validate();
    std::vector<ConvLayout> layout;
    std::vector<int> skip(static_cast<std::size_t>(spec.depth));

    int channels = spec.in_channels;
    for (int level = 0; level < spec.depth; ++level) {
        const DenseBlockSpec dense{channels, spec.growth_at(level)};
        for (int i = 0; i < dense.layers; ++i)
            layout.push_back({"enc" + std::to_string(level) + "/dense/conv" + std::to_string(i + 1),
                              dense.layer_in_channels(i), dense.growth, dense.kernel});
        channels = skip[static_cast<std::size_t>(level)] = dense.out_channels();
    }

    const int branch = spec.resolved_bottleneck_channels();
    for (int rate : spec.bottleneck_rates)
        layout.push_back({"bottleneck/rate" + std::to_string(rate), channels, branch, 3});
    layout.push_back({"bottleneck/fuse", branch * static_cast<int>(spec.bottleneck_rates.size()), branch, 1});
    channels = branch;

    for (int level = spec.depth - 1; level >= 0; --level) {
        const std::string prefix = "dec" + std::to_string(level);
        const int growth = spec.growth_at(level);
        layout.push_back({prefix + "/up", channels, growth, 3});
        const DenseBlockSpec dense{skip[static_cast<std::size_t>(level)] + growth, growth};
        for (int i = 0; i < dense.layers; ++i)
            layout.push_back({prefix + "/dense/conv" + std::to_string(i + 1), dense.layer_in_channels(i), dense.growth,
                              dense.kernel});
        channels = dense.out_channels();
    }
    layout.push_back({"head", channels, spec.classes, 1});
    return layout;
}

std::size_t parameter_count(const ConvLayout& conv) {
    const auto k = static_cast<std::size_t>(conv.kernel);
    return k * k * static_cast<std::size_t>(conv.in_channels) * static_cast<std::size_t>(conv.out_channels) +
           static_cast<std::size_t>(conv.out_channels);
}

std::size_t parameter_count(const ModelSpec& spec) {
    std::size_t total = 0;
    for (const auto& conv : skinnet_layout(spec)) total += parameter_count(conv);
    return total;
}

namespace {

template <typename Real>
ConvParams<Real> make_conv(int in, int out, int k) {
    const auto k_ = static_cast<std::size_t>(k);
    return {Tensor<Real>({static_cast<std::size_t>(out), static_cast<std::size_t>(in), k_, k_}, Real(0), true),
            Tensor<Real>({static_cast<std::size_t>(out)}, Real(0), true)};
}

template <typename Real>
void register_conv(std::map<std::string, Tensor<Real>>& named, const std::string& prefix, const ConvParams<Real>& conv) {
    named.emplace(prefix + "/kernel", conv.kernel);
    named.emplace(prefix + "/bias", conv.bias);
}

template <typename Real>
Tensor<Real> conv_same(const Tensor<Real>& x, const ConvParams<Real>& conv, int dilation, Tape<Real>* tape) {
    const int k = static_cast<int>(conv.kernel.dim(2));
    return conv2d(x, conv.kernel, conv.bias, Conv2dOptions{1, dilation, same_padding(k, dilation)}, tape);
}

}  // namespace

template <typename Real>
DenseBlockParams<Real> make_dense_block_params(const DenseBlockSpec& spec) {
    spec.validate();
    DenseBlockParams<Real> params;
    for (int i = 0; i < spec.layers; ++i)
        params.layers.push_back(make_conv<Real>(spec.layer_in_channels(i), spec.growth, spec.kernel));
    return params;
}

template <typename Real>
BottleneckParams<Real> make_bottleneck_params(const BottleneckSpec& spec) {
    spec.validate();
    BottleneckParams<Real> params;
    for (std::size_t i = 0; i < spec.rates.size(); ++i)
        params.branches.push_back(make_conv<Real>(spec.in_channels, spec.branch_channels, 3));
    params.fuse = make_conv<Real>(spec.concat_channels(), spec.branch_channels, spec.fuse_kernel);
    return params;
}

template <typename Real>
Tensor<Real> dense_block_forward(const Tensor<Real>& x, const DenseBlockSpec& spec, const DenseBlockParams<Real>& params,
                                 Tape<Real>* tape) {
    if (x.rank() != 4 || static_cast<int>(x.dim(1)) != spec.in_channels)
        throw ShapeError("dense block expects " + std::to_string(spec.in_channels) + " input channels, got " +
                         shape_str(x.shape()));
    if (static_cast<int>(params.layers.size()) != spec.layers)
        throw ShapeError("dense block: parameter count does not match layer count");

    std::vector<Tensor<Real>> features{x};
    for (int i = 0; i < spec.layers; ++i) {
        const Tensor<Real> in = i == 0 ? x : concat_channels<Real>(features, tape);
        features.push_back(relu(conv_same(in, params.layers[static_cast<std::size_t>(i)], 1, tape), tape));
    }
    return concat_channels<Real>(features, tape);
}

template <typename Real>
Tensor<Real> bottleneck_forward(const Tensor<Real>& x, const BottleneckSpec& spec, const BottleneckParams<Real>& params,
                                Tape<Real>* tape) {
    spec.validate();
    if (x.rank() != 4 || static_cast<int>(x.dim(1)) != spec.in_channels)
        throw ShapeError("bottleneck expects " + std::to_string(spec.in_channels) + " input channels, got " +
                         shape_str(x.shape()));
    if (params.branches.size() != spec.rates.size())
        throw ShapeError("bottleneck: one parameter set per dilation rate required");

    std::vector<Tensor<Real>> branches;
    branches.reserve(spec.rates.size());
    for (std::size_t i = 0; i < spec.rates.size(); ++i)
        branches.push_back(relu(conv_same(x, params.branches[i], spec.rates[i], tape), tape));
    const Tensor<Real> stacked = concat_channels<Real>(branches, tape);
    return relu(conv_same(stacked, params.fuse, 1, tape), tape);
}

template <typename Real>
Model<Real> Model<Real>::allocate(const ModelSpec& spec) {
    spec.validate();
    Model model;
    model.spec_ = spec;
    std::vector<int> skip;

    int channels = spec.in_channels;
    for (int level = 0; level < spec.depth; ++level) {
        Encoder enc;
        enc.spec = DenseBlockSpec{channels, spec.growth_at(level)};
        enc.dense = make_dense_block_params<Real>(enc.spec);
        channels = enc.spec.out_channels();
        skip.push_back(channels);
        model.encoders_.push_back(std::move(enc));
    }

    model.bottleneck_spec_ = BottleneckSpec{channels, spec.bottleneck_rates, spec.resolved_bottleneck_channels(), 1};
    model.bottleneck_ = make_bottleneck_params<Real>(model.bottleneck_spec_);
    channels = model.bottleneck_spec_.branch_channels;

    model.decoders_.resize(static_cast<std::size_t>(spec.depth));
    for (int level = spec.depth - 1; level >= 0; --level) {
        auto& dec = model.decoders_[static_cast<std::size_t>(level)];
        const int growth = spec.growth_at(level);
        dec.up = make_conv<Real>(channels, growth, 3);
        dec.spec = DenseBlockSpec{skip[static_cast<std::size_t>(level)] + growth, growth};
        dec.dense = make_dense_block_params<Real>(dec.spec);
        channels = dec.spec.out_channels();
    }
    model.head_ = make_conv<Real>(channels, spec.classes, 1);
    model.register_all();
    return model;
}

template <typename Real>
void Model<Real>::register_all() {
    named_.clear();
    for (std::size_t level = 0; level < encoders_.size(); ++level)
        for (std::size_t i = 0; i < encoders_[level].dense.layers.size(); ++i)
            register_conv(named_, "enc" + std::to_string(level) + "/dense/conv" + std::to_string(i + 1),
                          encoders_[level].dense.layers[i]);
    for (std::size_t i = 0; i < bottleneck_.branches.size(); ++i)
        register_conv(named_, "bottleneck/rate" + std::to_string(bottleneck_spec_.rates[i]), bottleneck_.branches[i]);
    register_conv(named_, "bottleneck/fuse", bottleneck_.fuse);
    for (std::size_t level = 0; level < decoders_.size(); ++level) {
        const std::string prefix = "dec" + std::to_string(level);
        register_conv(named_, prefix + "/up", decoders_[level].up);
        for (std::size_t i = 0; i < decoders_[level].dense.layers.size(); ++i)
            register_conv(named_, prefix + "/dense/conv" + std::to_string(i + 1), decoders_[level].dense.layers[i]);
    }
    register_conv(named_, "head", head_);
}

template <typename Real>
std::vector<Tensor<Real>> Model<Real>::parameter_list() const {
    std::vector<Tensor<Real>> list;
    list.reserve(named_.size());
    for (const auto& [name, t] : named_) list.push_back(t);
    return list;
}

template <typename Real>
void Model<Real>::zero_grad() {
    for (auto& [name, t] : named_) {
        Tensor<Real> handle = t;
        handle.zero_grad();
    }
}

template <typename Real>
void Model<Real>::set_requires_grad(bool on) {
    for (auto& [name, t] : named_) {
        Tensor<Real> handle = t;
        handle.set_requires_grad(on);
    }
}

template <typename Real>
template <typename Other>
Model<Other> Model<Real>::cast() const {
    Model<Other> out = Model<Other>::allocate(spec_);
    for (const auto& [name, src] : named_) {
        Tensor<Other> dst = out.named_.at(name);
        for (std::size_t i = 0; i < src.numel(); ++i) dst[i] = static_cast<Other>(src[i]);
    }
    return out;
}

template <typename Real>
Model<Real> build_skinnet(const ModelSpec& spec, std::uint64_t seed) {
    Model<Real> model = Model<Real>::allocate(spec);
    Rng rng(seed);
    for (const auto& conv : skinnet_layout(spec)) {
        Tensor<Real> kernel = model.named_.at(conv.name + "/kernel");
        const double fan_in = static_cast<double>(conv.in_channels) * conv.kernel * conv.kernel;
        const double bound = std::sqrt(6.0 / fan_in);
        for (auto& w : kernel.data()) w = static_cast<Real>(uniform(rng, -bound, bound));
    }
    return model;
}

template <typename Real>
Tensor<Real> forward(const Model<Real>& model, const Tensor<Real>& batch, Tape<Real>* tape) {
    const ModelSpec& spec = model.spec_;
    if (batch.rank() != 4 || static_cast<int>(batch.dim(1)) != spec.in_channels)
        throw ShapeError("forward: expected (B," + std::to_string(spec.in_channels) + ",H,W) batch, got " +
                         shape_str(batch.shape()));
    const std::size_t stride = std::size_t{1} << spec.depth;
    if (batch.dim(2) % stride != 0 || batch.dim(3) % stride != 0)
        throw ShapeError("forward: spatial extent " + shape_str(batch.shape()) + " not divisible by 2^depth = " +
                         std::to_string(stride));

    std::vector<Tensor<Real>> skips;
    Tensor<Real> x = batch;
    for (const auto& enc : model.encoders_) {
        x = dense_block_forward(x, enc.spec, enc.dense, tape);
        skips.push_back(x);
        x = max_pool2d(x, 2, tape);
    }
    x = bottleneck_forward(x, model.bottleneck_spec_, model.bottleneck_, tape);
    for (std::size_t level = model.decoders_.size(); level-- > 0;) {
        const auto& dec = model.decoders_[level];
        x = upsample2d_nearest(x, 2, tape);
        x = relu(conv_same(x, dec.up, 1, tape), tape);
        x = concat_channels(skips[level], x, tape);
        x = dense_block_forward(x, dec.spec, dec.dense, tape);
    }
    x = conv_same(x, model.head_, 1, tape);
    return softmax_channels(x, tape);
}

template <typename Real>
std::size_t parameter_count(const Model<Real>& model) {
    std::size_t total = 0;
    for (const auto& [name, t] : model.parameters()) total += t.numel();
    return total;
}

#define SKINNET_INSTANTIATE_NETWORK(Real)                                                                         \
    template DenseBlockParams<Real> make_dense_block_params<Real>(const DenseBlockSpec&);                        \
    template BottleneckParams<Real> make_bottleneck_params<Real>(const BottleneckSpec&);                         \
    template Tensor<Real> dense_block_forward(const Tensor<Real>&, const DenseBlockSpec&,                         \
                                              const DenseBlockParams<Real>&, Tape<Real>*);                       \
    template Tensor<Real> bottleneck_forward(const Tensor<Real>&, const BottleneckSpec&,                          \
                                             const BottleneckParams<Real>&, Tape<Real>*);                        \
    template class Model<Real>;                                                                                   \
    template Model<Real> build_skinnet<Real>(const ModelSpec&, std::uint64_t);                                    \
    template Tensor<Real> forward(const Model<Real>&, const Tensor<Real>&, Tape<Real>*);                          \
    template std::size_t parameter_count(const Model<Real>&);

SKINNET_INSTANTIATE_NETWORK(float)
SKINNET_INSTANTIATE_NETWORK(double)

template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;

}  // namespace skinnet
