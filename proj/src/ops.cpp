#include "skinnet/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace skinnet {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::string s = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + ")";
}

namespace {
thread_local KinkProbe* g_probe = nullptr;

#ifdef SKINNET_MUTATION
int g_mutation = 0;
#define MUTANT(id) (g_mutation == (id))
#else
#define MUTANT(id) false
#endif
}  // namespace

#ifdef SKINNET_MUTATION
void set_mutation(int id) { g_mutation = id; }
#endif

ScopedKinkProbe::ScopedKinkProbe(KinkProbe& probe) : previous_(g_probe) { g_probe = &probe; }
ScopedKinkProbe::~ScopedKinkProbe() { g_probe = previous_; }
KinkProbe* active_kink_probe() { return g_probe; }

int effective_kernel_extent(int k, int dilation) {
    if (k < 1 || dilation < 1) throw std::invalid_argument("effective_kernel_extent: k and dilation must be >= 1");
    return k + (k - 1) * (dilation - 1);
}

int same_padding(int k, int dilation) {
    return dilation * (k - 1) / 2;
}

std::size_t conv_output_extent(std::size_t in, int k, const Conv2dOptions& opt) {
    if (opt.stride < 1 || opt.dilation < 1 || opt.padding < 0)
        throw std::invalid_argument("conv2d: stride and dilation must be >= 1, padding >= 0");
    const long span = static_cast<long>(in) + 2L * opt.padding - effective_kernel_extent(k, opt.dilation);
    if (span < 0 || span % opt.stride != 0)
        throw ShapeError("conv2d: output extent is not a positive integer (input " + std::to_string(in) +
                         ", kernel " + std::to_string(k) + ", stride " + std::to_string(opt.stride) +
                         ", dilation " + std::to_string(opt.dilation) + ", padding " +
                         std::to_string(opt.padding) + ")");
    return static_cast<std::size_t>(span / opt.stride + 1);
}

namespace {

template <typename Real>
using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MatrixView = Eigen::Map<RowMatrix<Real>>;
template <typename Real>
using ConstMatrixView = Eigen::Map<const RowMatrix<Real>>;

template <typename Real>
bool needs_recording(Tape<Real>* tape, std::initializer_list<const Tensor<Real>*> inputs) {
    if (!tape) return false;
    return std::any_of(inputs.begin(), inputs.end(), [](const Tensor<Real>* t) { return t->requires_grad(); });
}

void require_rank4(const Shape& s, const char* op) {
    if (s.size() != 4) throw ShapeError(std::string(op) + ": expected (B,C,H,W), got " + shape_str(s));
}

struct ConvGeometry {
    std::size_t batch, channels, height, width;
    std::size_t out_channels, k, out_height, out_width;
    long stride, dilation, padding;

    std::size_t patch() const { return channels * k * k; }
    std::size_t pixels() const { return out_height * out_width; }
    std::size_t in_plane() const { return channels * height * width; }
    bool pointwise() const { return k == 1 && stride == 1 && padding == 0; }

    // Output columns x in [lo, hi) read an in-range input column for tap offset `off`.
    void valid_range(long off, std::size_t extent, std::size_t out_extent, std::size_t& lo, std::size_t& hi) const {
        long first = off >= 0 ? 0 : (-off + stride - 1) / stride;
        long last = (static_cast<long>(extent) - 1 - off);
        long end = last < 0 ? 0 : last / stride + 1;
        first = std::min<long>(first, static_cast<long>(out_extent));
        end = std::clamp<long>(end, first, static_cast<long>(out_extent));
        lo = static_cast<std::size_t>(first);
        hi = static_cast<std::size_t>(end);
    }
};

template <typename Real>
void im2col(const Real* image, const ConvGeometry& g, Real* col) {
    const std::size_t pixels = g.pixels();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t i = 0; i < g.k; ++i) {
            const long yoff = static_cast<long>(i) * g.dilation - g.padding;
            for (std::size_t j = 0; j < g.k; ++j) {
                const long xoff = static_cast<long>(j) * g.dilation - g.padding;
                Real* row = col + ((c * g.k + i) * g.k + j) * pixels;
                std::size_t x0, x1;
                g.valid_range(xoff, g.width, g.out_width, x0, x1);
                for (std::size_t y = 0; y < g.out_height; ++y) {
                    Real* dst = row + y * g.out_width;
                    const long iy = static_cast<long>(y) * g.stride + yoff;
                    if (iy < 0 || iy >= static_cast<long>(g.height)) {
                        std::fill(dst, dst + g.out_width, Real(0));
                        continue;
                    }
                    const Real* src = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    std::fill(dst, dst + x0, Real(0));
                    for (std::size_t x = x0; x < x1; ++x) dst[x] = src[static_cast<long>(x) * g.stride + xoff];
                    std::fill(dst + x1, dst + g.out_width, Real(0));
                }
            }
        }
    }
}

template <typename Real>
void col2im_add(const Real* col, const ConvGeometry& g, Real* image) {
    const std::size_t pixels = g.pixels();
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t i = 0; i < g.k; ++i) {
            const long yoff = static_cast<long>(i) * g.dilation - g.padding;
            for (std::size_t j = 0; j < g.k; ++j) {
                const long xoff = static_cast<long>(j) * g.dilation - g.padding;
                const Real* row = col + ((c * g.k + i) * g.k + j) * pixels;
                std::size_t x0, x1;
                g.valid_range(xoff, g.width, g.out_width, x0, x1);
                for (std::size_t y = 0; y < g.out_height; ++y) {
                    const long iy = static_cast<long>(y) * g.stride + yoff;
                    if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
                    const Real* src = row + y * g.out_width;
                    Real* dst = image + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
                    for (std::size_t x = x0; x < x1; ++x) dst[static_cast<long>(x) * g.stride + xoff] += src[x];
                }
            }
        }
    }
}

}  // namespace

template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& input, const Tensor<Real>& kernel, const Tensor<Real>& bias,
                    const Conv2dOptions& opt, Tape<Real>* tape) {
    require_rank4(input.shape(), "conv2d input");
    if (kernel.rank() != 4 || kernel.dim(2) != kernel.dim(3) || kernel.dim(2) % 2 == 0)
        throw ShapeError("conv2d: kernel must be (O,C,k,k) with odd k, got " + shape_str(kernel.shape()));
    if (kernel.dim(1) != input.dim(1))
        throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, input has " +
                         std::to_string(input.dim(1)));
    if (bias.rank() != 1 || bias.dim(0) != kernel.dim(0))
        throw ShapeError("conv2d: bias must have shape (" + std::to_string(kernel.dim(0)) + "), got " +
                         shape_str(bias.shape()));

    ConvGeometry g{};
    g.batch = input.dim(0);
    g.channels = input.dim(1);
    g.height = input.dim(2);
    g.width = input.dim(3);
    g.out_channels = kernel.dim(0);
    g.k = kernel.dim(2);
    const int k = static_cast<int>(g.k);
    g.out_height = conv_output_extent(g.height, k, opt);
    g.out_width = conv_output_extent(g.width, k, opt);
    g.stride = opt.stride;
    g.dilation = opt.dilation;
    g.padding = opt.padding;

    Tensor<Real> out({g.batch, g.out_channels, g.out_height, g.out_width});
    const std::size_t pixels = g.pixels();
    ConstMatrixView<Real> weights(kernel.data().data(), g.out_channels, g.patch());
    std::vector<Real> col(g.pointwise() ? 0 : g.patch() * pixels);

    for (std::size_t b = 0; b < g.batch; ++b) {
        const Real* image = input.data().data() + b * g.in_plane();
        if (!g.pointwise()) im2col(image, g, col.data());
        ConstMatrixView<Real> patches(g.pointwise() ? image : col.data(), g.patch(), pixels);
        MatrixView<Real> result(out.data().data() + b * g.out_channels * pixels, g.out_channels, pixels);
        result.noalias() = weights * patches;
        for (std::size_t o = 0; o < g.out_channels; ++o) result.row(o).array() += bias[o];
    }

    if (needs_recording(tape, {&input, &kernel, &bias})) {
        out.set_requires_grad(true);
        tape->record({input, kernel, bias}, out, [input = input, kernel = kernel, bias = bias, out, g]() mutable {
            const std::size_t pixels = g.pixels();
            ConstMatrixView<Real> weights(kernel.data().data(), g.out_channels, g.patch());
            std::vector<Real> col(g.pointwise() ? 0 : g.patch() * pixels);
            std::vector<Real> dcol(g.pointwise() ? 0 : g.patch() * pixels);
            for (std::size_t b = 0; b < g.batch; ++b) {
                ConstMatrixView<Real> dout(out.grad().data() + b * g.out_channels * pixels, g.out_channels, pixels);
                if (bias.requires_grad()) {
                    auto db = bias.grad();
                    // Plain loop: Eigen's vectorized reduction order depends on buffer alignment.
                    for (std::size_t o = 0; o < g.out_channels; ++o) {
                        const Real* row = out.grad().data() + (b * g.out_channels + o) * pixels;
                        Real acc = 0;
                        for (std::size_t p = 0; p < pixels; ++p) acc += row[p];
                        db[o] += acc * (MUTANT(1) ? Real(1.001) : Real(1));
                    }
                }
                if (kernel.requires_grad()) {
                    const Real* image = input.data().data() + b * g.in_plane();
                    if (!g.pointwise()) im2col(image, g, col.data());
                    ConstMatrixView<Real> patches(g.pointwise() ? image : col.data(), g.patch(), pixels);
                    MatrixView<Real> dw(kernel.grad().data(), g.out_channels, g.patch());
                    dw.noalias() += dout * patches.transpose();
                }
                if (input.requires_grad()) {
                    Real* dimage = input.grad().data() + b * g.in_plane();
                    if (g.pointwise()) {
                        MatrixView<Real> dx(dimage, g.channels, pixels);
                        dx.noalias() += weights.transpose() * dout;
                    } else {
                        MatrixView<Real> dc(dcol.data(), g.patch(), pixels);
                        dc.noalias() = weights.transpose() * dout;
                        if (MUTANT(2)) dc *= Real(1.001);
                        col2im_add(dcol.data(), g, dimage);
                    }
                }
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> max_pool2d(const Tensor<Real>& input, int window, Tape<Real>* tape) {
    require_rank4(input.shape(), "max_pool2d");
    if (window < 1) throw std::invalid_argument("max_pool2d: window must be >= 1");
    const std::size_t w = static_cast<std::size_t>(window);
    const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    if (H % w != 0 || W % w != 0)
        throw ShapeError("max_pool2d: spatial extent " + shape_str(input.shape()) + " not divisible by window " +
                         std::to_string(window));
    const std::size_t Ho = H / w, Wo = W / w;
    Tensor<Real> out({B, C, Ho, Wo});
    std::vector<std::size_t> argmax(out.numel());

    const Real* src = input.data().data();
    Real* dst = out.data().data();
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < B * C; ++plane) {
        const std::size_t base = plane * H * W;
        for (std::size_t y = 0; y < Ho; ++y) {
            for (std::size_t x = 0; x < Wo; ++x, ++o) {
                std::size_t best = base + (y * w) * W + x * w;
                for (std::size_t i = 0; i < w; ++i)
                    for (std::size_t j = 0; j < w; ++j) {
                        const std::size_t idx = base + (y * w + i) * W + x * w + j;
                        if (src[idx] > src[best]) best = idx;
                    }
                argmax[o] = best;
                dst[o] = src[best];
                if (g_probe) g_probe->pattern.push_back(static_cast<std::uint32_t>(best - base));
            }
        }
    }

    if (needs_recording(tape, {&input})) {
        out.set_requires_grad(true);
        tape->record({input}, out, [input = input, out, argmax = std::move(argmax)]() mutable {
            auto gin = input.grad();
            auto gout = out.grad();
            for (std::size_t i = 0; i < argmax.size(); ++i)
                if (!MUTANT(3) || i % 2 == 0) gin[argmax[i]] += gout[i];
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> upsample2d_nearest(const Tensor<Real>& input, int factor, Tape<Real>* tape) {
    require_rank4(input.shape(), "upsample2d_nearest");
    if (factor < 1) throw std::invalid_argument("upsample2d_nearest: factor must be >= 1");
    const std::size_t f = static_cast<std::size_t>(factor);
    const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
    const std::size_t Ho = H * f, Wo = W * f;
    Tensor<Real> out({B, C, Ho, Wo});
    const Real* src = input.data().data();
    Real* dst = out.data().data();
    for (std::size_t plane = 0; plane < B * C; ++plane)
        for (std::size_t y = 0; y < Ho; ++y)
            for (std::size_t x = 0; x < Wo; ++x)
                dst[(plane * Ho + y) * Wo + x] = src[(plane * H + y / f) * W + x / f];

    if (needs_recording(tape, {&input})) {
        out.set_requires_grad(true);
        tape->record({input}, out, [input = input, out, f, B, C, H, W]() mutable {
            auto gin = input.grad();
            auto gout = out.grad();
            const std::size_t Ho = H * f, Wo = W * f;
            for (std::size_t plane = 0; plane < B * C; ++plane)
                for (std::size_t y = 0; y < Ho; ++y)
                    for (std::size_t x = 0; x < Wo; ++x)
                        if (!MUTANT(7) || x % f == 0) gin[(plane * H + y / f) * W + x / f] += gout[(plane * Ho + y) * Wo + x];
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> concat_channels(std::span<const Tensor<Real>> parts, Tape<Real>* tape) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: nothing to concatenate");
    for (const auto& p : parts) require_rank4(p.shape(), "concat_channels");
    const std::size_t B = parts[0].dim(0), H = parts[0].dim(2), W = parts[0].dim(3);
    std::size_t channels = 0;
    for (const auto& p : parts) {
        if (p.dim(0) != B || p.dim(2) != H || p.dim(3) != W)
            throw ShapeError("concat_channels: batch/spatial mismatch between " + shape_str(parts[0].shape()) +
                             " and " + shape_str(p.shape()));
        channels += p.dim(1);
    }
    const std::size_t plane = H * W;
    Tensor<Real> out({B, channels, H, W});
    Real* dst = out.data().data();
    for (std::size_t b = 0; b < B; ++b) {
        for (const auto& p : parts) {
            const std::size_t n = p.dim(1) * plane;
            const Real* src = p.data().data() + b * n;
            dst = std::copy(src, src + n, dst);
        }
    }

    bool any = false;
    for (const auto& p : parts) any = any || p.requires_grad();
    if (tape && any) {
        out.set_requires_grad(true);
        std::vector<Tensor<Real>> inputs(parts.begin(), parts.end());
        tape->record(inputs, out, [inputs, out, B, plane]() mutable {
            const Real* g = out.grad().data();
            for (std::size_t b = 0; b < B; ++b) {
                for (auto& p : inputs) {
                    const std::size_t n = p.dim(1) * plane;
                    if (p.requires_grad() && !(MUTANT(9) && &p == &inputs.back())) {
                        Real* gp = p.grad().data() + b * n;
                        for (std::size_t i = 0; i < n; ++i) gp[i] += g[i];
                    }
                    g += n;
                }
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b, Tape<Real>* tape) {
    const Tensor<Real> parts[] = {a, b};
    return concat_channels<Real>(std::span<const Tensor<Real>>(parts), tape);
}

template <typename Real>
Tensor<Real> activation(const Tensor<Real>& input, Activation kind, Tape<Real>* tape) {
    Tensor<Real> out(input.shape());
    auto x = input.data();
    auto y = out.data();
    if (kind == Activation::relu) {
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > Real(0) ? x[i] : Real(0);
        if (g_probe)
            for (std::size_t i = 0; i < x.size(); ++i) g_probe->pattern.push_back(x[i] > Real(0));
    } else {
        for (std::size_t i = 0; i < x.size(); ++i) y[i] = Real(1) / (Real(1) + std::exp(-x[i]));
    }

    if (needs_recording(tape, {&input})) {
        out.set_requires_grad(true);
        tape->record({input}, out, [input = input, out, kind]() mutable {
            auto gin = input.grad();
            auto gout = out.grad();
            auto y = out.data();
            if (kind == Activation::relu) {
                // Subgradient at 0 is 0: y > 0 exactly when x > 0.
                for (std::size_t i = 0; i < y.size(); ++i)
                    if (y[i] > Real(0)) gin[i] += gout[i];
                    else if (MUTANT(4)) gin[i] += Real(0.01) * gout[i];
            } else {
                for (std::size_t i = 0; i < y.size(); ++i)
                    gin[i] += gout[i] * y[i] * (Real(1) - y[i]) * (MUTANT(5) ? Real(1.001) : Real(1));
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> softmax_channels(const Tensor<Real>& input, Tape<Real>* tape) {
    require_rank4(input.shape(), "softmax_channels");
    const std::size_t B = input.dim(0), K = input.dim(1), plane = input.dim(2) * input.dim(3);
    if (K < 2) throw ShapeError("softmax_channels: need at least 2 channels");
    Tensor<Real> out(input.shape());
    const Real* x = input.data().data();
    Real* y = out.data().data();
    for (std::size_t b = 0; b < B; ++b) {
        const std::size_t base = b * K * plane;
        for (std::size_t p = 0; p < plane; ++p) {
            Real m = x[base + p];
            for (std::size_t k = 1; k < K; ++k) m = std::max(m, x[base + k * plane + p]);
            Real total = 0;
            for (std::size_t k = 0; k < K; ++k) {
                const Real e = std::exp(x[base + k * plane + p] - m);
                y[base + k * plane + p] = e;
                total += e;
            }
            for (std::size_t k = 0; k < K; ++k) y[base + k * plane + p] /= total;
        }
    }

    if (needs_recording(tape, {&input})) {
        out.set_requires_grad(true);
        tape->record({input}, out, [input = input, out, B, K, plane]() mutable {
            Real* gx = input.grad().data();
            const Real* gy = out.grad().data();
            const Real* y = out.data().data();
            for (std::size_t b = 0; b < B; ++b) {
                const std::size_t base = b * K * plane;
                for (std::size_t p = 0; p < plane; ++p) {
                    Real dot = 0;
                    for (std::size_t k = 0; k < K; ++k) dot += gy[base + k * plane + p] * y[base + k * plane + p];
                    for (std::size_t k = 0; k < K; ++k) {
                        const std::size_t i = base + k * plane + p;
                        gx[i] += y[i] * (gy[i] - (MUTANT(6) ? Real(0) : dot));
                    }
                }
            }
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& input, Tape<Real>* tape) {
    auto x = input.data();
    Tensor<Real> out = Tensor<Real>::scalar(std::accumulate(x.begin(), x.end(), Real(0)));
    if (needs_recording(tape, {&input})) {
        out.set_requires_grad(true);
        tape->record({input}, out, [input = input, out]() mutable {
            const Real g = out.grad()[0];
            for (auto& v : input.grad()) v += g;
        });
    }
    return out;
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b, Tape<Real>* tape) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor<Real> out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
    if (needs_recording(tape, {&a, &b})) {
        out.set_requires_grad(true);
        tape->record({a, b}, out, [a = a, b = b, out]() mutable {
            auto g = out.grad();
            if (a.requires_grad()) {
                auto ga = a.grad();
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
            }
            if (b.requires_grad()) {
                auto gb = b.grad();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i] * (MUTANT(8) ? Real(1.001) : Real(1));
            }
        });
    }
    return out;
}

#define SKINNET_INSTANTIATE_OPS(Real)                                                                           \
    template Tensor<Real> conv2d(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&,                  \
                                 const Conv2dOptions&, Tape<Real>*);                                            \
    template Tensor<Real> max_pool2d(const Tensor<Real>&, int, Tape<Real>*);                                     \
    template Tensor<Real> upsample2d_nearest(const Tensor<Real>&, int, Tape<Real>*);                             \
    template Tensor<Real> concat_channels(const Tensor<Real>&, const Tensor<Real>&, Tape<Real>*);                \
    template Tensor<Real> concat_channels(std::span<const Tensor<Real>>, Tape<Real>*);                           \
    template Tensor<Real> activation(const Tensor<Real>&, Activation, Tape<Real>*);                              \
    template Tensor<Real> softmax_channels(const Tensor<Real>&, Tape<Real>*);                                    \
    template Tensor<Real> sum(const Tensor<Real>&, Tape<Real>*);                                                 \
    template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&, Tape<Real>*);

SKINNET_INSTANTIATE_OPS(float)
SKINNET_INSTANTIATE_OPS(double)

}  // namespace skinnet
