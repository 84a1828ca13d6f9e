#include "skinnet/selftest.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <ostream>

#include "skinnet/network.hpp"

namespace skinnet::selftest {

double relative_error(double analytic, double numeric, double floor) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / scale;
}

GradcheckResult gradcheck(const LossFn& loss, std::span<const Tensor<double>> inputs, const GradcheckOptions& options,
                          Rng& rng) {
    std::vector<Tensor<double>> handles(inputs.begin(), inputs.end());
    for (auto& t : handles) t.drop_grad();

    Tape<double> tape;
    KinkProbe base;
    Tensor<double> value;
    {
        ScopedKinkProbe scope(base);
        value = loss(handles, &tape);
    }
    tape.backward(value);
    auto probed = [&](KinkProbe& probe) {
        probe.pattern.clear();
        ScopedKinkProbe scope(probe);
        return loss(handles, nullptr).item();
    };
    KinkProbe up, down;

    GradcheckResult result;
    for (auto& t : handles) {
        if (!t.requires_grad()) continue;
        const std::vector<double> analytic(t.grad().begin(), t.grad().end());

        std::vector<std::size_t> coords(t.numel());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (options.max_coords > 0 && coords.size() > options.max_coords) {
            shuffle(coords, rng);
            coords.resize(options.max_coords);
        }
        for (std::size_t j : coords) {
            const double saved = t[j];
            t[j] = saved + options.step;
            const double plus = probed(up);
            t[j] = saved - options.step;
            const double minus = probed(down);
            t[j] = saved;
            if (up.pattern != base.pattern || down.pattern != base.pattern) {
                ++result.kink_skipped;
                continue;
            }
            const double numeric = (plus - minus) / (2 * options.step);
            result.max_rel_error = std::max(result.max_rel_error, relative_error(analytic[j], numeric, options.scale_floor));
            ++result.checked;
        }
    }
    return result;
}

Tensor<double> reference_conv2d(const Tensor<double>& input, const Tensor<double>& kernel, const Tensor<double>& bias,
                                int stride, int dilation, int padding) {
    const long B = static_cast<long>(input.dim(0)), C = static_cast<long>(input.dim(1));
    const long H = static_cast<long>(input.dim(2)), W = static_cast<long>(input.dim(3));
    const long O = static_cast<long>(kernel.dim(0)), K = static_cast<long>(kernel.dim(2));
    const long Ho = (H + 2 * padding - (K - 1) * dilation - 1) / stride + 1;
    const long Wo = (W + 2 * padding - (K - 1) * dilation - 1) / stride + 1;
    Tensor<double> out({static_cast<std::size_t>(B), static_cast<std::size_t>(O), static_cast<std::size_t>(Ho),
                        static_cast<std::size_t>(Wo)});
    for (long b = 0; b < B; ++b)
        for (long o = 0; o < O; ++o)
            for (long y = 0; y < Ho; ++y)
                for (long x = 0; x < Wo; ++x) {
                    double acc = bias[static_cast<std::size_t>(o)];
                    for (long c = 0; c < C; ++c)
                        for (long i = 0; i < K; ++i)
                            for (long j = 0; j < K; ++j) {
                                const long iy = y * stride - padding + i * dilation;
                                const long ix = x * stride - padding + j * dilation;
                                if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                                acc += input[static_cast<std::size_t>(((b * C + c) * H + iy) * W + ix)] *
                                       kernel[static_cast<std::size_t>(((o * C + c) * K + i) * K + j)];
                            }
                    out[static_cast<std::size_t>(((b * O + o) * Ho + y) * Wo + x)] = acc;
                }
    return out;
}

Tensor<double> zero_interleave(const Tensor<double>& kernel, int dilation) {
    const std::size_t O = kernel.dim(0), C = kernel.dim(1), K = kernel.dim(2);
    const std::size_t d = static_cast<std::size_t>(dilation);
    const std::size_t E = (K - 1) * d + 1;
    Tensor<double> out({O, C, E, E});
    for (std::size_t oc = 0; oc < O * C; ++oc)
        for (std::size_t i = 0; i < K; ++i)
            for (std::size_t j = 0; j < K; ++j) out[(oc * E + i * d) * E + j * d] = kernel[(oc * K + i) * K + j];
    return out;
}

int tap_span(int k, int dilation) {
    std::vector<int> taps(static_cast<std::size_t>(k * dilation + 1), 0);
    for (int i = 0; i < k; ++i) taps[static_cast<std::size_t>(i * dilation)] = 1;
    const auto first = std::find(taps.begin(), taps.end(), 1);
    const auto last = std::find(taps.rbegin(), taps.rend(), 1);
    return static_cast<int>(std::distance(first, last.base()));
}

MetricReport reference_metrics(const Mask& predicted, const Mask& truth) {
    std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
    for (std::size_t y = 0; y < truth.height; ++y)
        for (std::size_t x = 0; x < truth.width; ++x) {
            const int p = predicted.at(y, x), t = truth.at(y, x);
            tp += (p == 1 && t == 1);
            fp += (p == 1 && t == 0);
            tn += (p == 0 && t == 0);
            fn += (p == 0 && t == 1);
        }
    auto frac = [](std::uint64_t num, std::uint64_t den, bool empty_ok) {
        return den == 0 ? (empty_ok ? 1.0 : 0.0) : static_cast<double>(num) / static_cast<double>(den);
    };
    MetricReport r;
    r.ac = static_cast<double>(tp + tn) / static_cast<double>(tp + fp + tn + fn);
    r.dc = frac(2 * tp, 2 * tp + fp + fn, true);
    r.ji = frac(tp, tp + fp + fn, true);
    r.se = frac(tp, tp + fn, fp == 0);
    r.sp = frac(tn, tn + fp, fn == 0);
    return r;
}

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1, bool requires_grad = true) {
    Tensor<double> t(std::move(shape), 0.0, requires_grad);
    for (auto& v : t.data()) v = uniform(rng, lo, hi);
    return t;
}

// Values bounded away from zero so the relu kink sits outside +-h.
Tensor<double> random_away_from_zero(Shape shape, Rng& rng, double margin) {
    Tensor<double> t(std::move(shape), 0.0, true);
    for (auto& v : t.data()) v = (bernoulli(rng, 0.5) ? 1 : -1) * uniform(rng, margin, 1.0);
    return t;
}

// Distinct values at least 0.05 apart so no pooling window has a near tie.
Tensor<double> random_distinct(Shape shape, Rng& rng) {
    Tensor<double> t(std::move(shape), 0.0, true);
    std::vector<std::size_t> rank(t.numel());
    std::iota(rank.begin(), rank.end(), std::size_t{0});
    shuffle(rank, rng);
    for (std::size_t i = 0; i < rank.size(); ++i) t[i] = 0.05 * static_cast<double>(rank[i]) + uniform(rng, 0, 0.01);
    return t;
}

Mask random_mask(std::size_t h, std::size_t w, Rng& rng, double p) {
    Mask m(h, w);
    for (auto& v : m.data) v = bernoulli(rng, p) ? 1 : 0;
    return m;
}

Tensor<double> random_one_hot(std::size_t B, std::size_t K, std::size_t H, std::size_t W, Rng& rng) {
    Tensor<double> y({B, K, H, W});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t p = 0; p < H * W; ++p) y[(b * K + uniform_index(rng, K)) * H * W + p] = 1;
    return y;
}

std::size_t dim_in(Rng& rng, std::size_t lo, std::size_t hi) {
    return lo + uniform_index(rng, hi - lo + 1);
}

// Random convolution geometry whose output extent is a positive integer.
struct ConvCase {
    std::size_t B, C, O, H, W;
    int k, stride, dilation, padding;
};

std::optional<int> valid_padding(std::size_t H, std::size_t W, int k, int stride, int dilation, int preferred) {
    const int E = effective_kernel_extent(k, dilation);
    for (int delta = 0; delta <= E; ++delta)
        for (int p : {preferred - delta, preferred + delta}) {
            if (p < 0 || p > E) continue;
            const long sh = static_cast<long>(H) + 2 * p - E, sw = static_cast<long>(W) + 2 * p - E;
            if (sh >= 0 && sw >= 0 && sh % stride == 0 && sw % stride == 0) return p;
        }
    return std::nullopt;
}

ConvCase random_conv_case(Rng& rng, std::size_t max_extent, std::span<const int> kernels, std::span<const int> dilations,
                          std::span<const int> strides, std::size_t max_channels, int force_dilation = 0,
                          int force_stride = 0) {
    for (;;) {
        ConvCase c{};
        c.B = dim_in(rng, 1, 2);
        c.C = dim_in(rng, 1, max_channels);
        c.O = dim_in(rng, 1, max_channels);
        c.H = dim_in(rng, 2, max_extent);
        c.W = dim_in(rng, 2, max_extent);
        c.k = kernels[uniform_index(rng, kernels.size())];
        c.dilation = dilations[uniform_index(rng, dilations.size())];
        c.stride = strides[uniform_index(rng, strides.size())];
        if (force_dilation > 0) c.dilation = force_dilation;
        if (force_stride > 0) c.stride = force_stride;
        const int preferred = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(same_padding(c.k, c.dilation)) + 1));
        if (auto p = valid_padding(c.H, c.W, c.k, c.stride, c.dilation, preferred)) {
            c.padding = *p;
            return c;
        }
    }
}

struct CaseBuilder {
    std::vector<Tensor<double>> inputs;
    LossFn loss;
    std::size_t max_coords = 0;
};

CheckResult run_cases(const std::string& name, int cases, Rng& rng, const std::function<CaseBuilder(Rng&)>& make) {
    GradcheckOptions options;
    double worst = 0;
    std::size_t checked = 0, skipped = 0;
    for (int i = 0; i < cases; ++i) {
        CaseBuilder c = make(rng);
        options.max_coords = c.max_coords;
        const GradcheckResult r = gradcheck(c.loss, c.inputs, options, rng);
        worst = std::max(worst, r.max_rel_error);
        checked += r.checked;
        skipped += r.kink_skipped;
    }
    // At most 10% of sampled coordinates may straddle a kink.
    const bool ok = worst < options.tolerance && checked > 0 && skipped * 10 <= checked + skipped;
    return {name, ok,
            fmt::format("{} cases, {} coordinates, {} kink-straddling skipped, max rel err {:.3e} (tol {:.0e})", cases,
                        checked, skipped, worst, options.tolerance)};
}

// sum(out * weights) with fixed random weights, so each output element carries a distinct gradient.
Tensor<double> weighted_sum(const Tensor<double>& out, const Tensor<double>& weights, Tape<double>* tape) {
    return sum(mul(out, weights, tape), tape);
}

}  // namespace

std::vector<CheckResult> run_grad_suite(int cases, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<CheckResult> results;
    static constexpr int kKernels[] = {1, 3};
    static constexpr int kDilations[] = {1, 2};
    static constexpr int kStrides[] = {1, 2};

    results.push_back(run_cases("conv2d", cases, rng, [](Rng& r) {
        const ConvCase c = random_conv_case(r, 6, kKernels, kDilations, kStrides, 3);
        CaseBuilder b;
        b.inputs = {random_tensor({c.B, c.C, c.H, c.W}, r),
                    random_tensor({c.O, c.C, static_cast<std::size_t>(c.k), static_cast<std::size_t>(c.k)}, r),
                    random_tensor({c.O}, r)};
        const Conv2dOptions opt{c.stride, c.dilation, c.padding};
        const Shape out{c.B, c.O, conv_output_extent(c.H, c.k, opt), conv_output_extent(c.W, c.k, opt)};
        const Tensor<double> w = random_tensor(out, r, -1, 1, false);
        b.loss = [opt, w](std::span<const Tensor<double>> in, Tape<double>* t) {
            return weighted_sum(conv2d(in[0], in[1], in[2], opt, t), w, t);
        };
        return b;
    }));

    results.push_back(run_cases("max_pool2d", cases, rng, [](Rng& r) {
        const std::size_t B = dim_in(r, 1, 2), C = dim_in(r, 1, 3), H = 2 * dim_in(r, 1, 3), W = 2 * dim_in(r, 1, 3);
        CaseBuilder b;
        b.inputs = {random_distinct({B, C, H, W}, r)};
        const Tensor<double> w = random_tensor({B, C, H / 2, W / 2}, r, -1, 1, false);
        b.loss = [w](std::span<const Tensor<double>> in, Tape<double>* t) { return weighted_sum(max_pool2d(in[0], 2, t), w, t); };
        return b;
    }));

    results.push_back(run_cases("upsample2d_nearest", cases, rng, [](Rng& r) {
        const std::size_t B = dim_in(r, 1, 2), C = dim_in(r, 1, 3), H = dim_in(r, 1, 3), W = dim_in(r, 1, 3);
        const int f = static_cast<int>(dim_in(r, 1, 2));
        CaseBuilder b;
        b.inputs = {random_tensor({B, C, H, W}, r)};
        const auto F = static_cast<std::size_t>(f);
        const Tensor<double> w = random_tensor({B, C, H * F, W * F}, r, -1, 1, false);
        b.loss = [w, f](std::span<const Tensor<double>> in, Tape<double>* t) {
            return weighted_sum(upsample2d_nearest(in[0], f, t), w, t);
        };
        return b;
    }));

    results.push_back(run_cases("concat_channels", cases, rng, [](Rng& r) {
        const std::size_t B = dim_in(r, 1, 2), C1 = dim_in(r, 1, 3), C2 = dim_in(r, 1, 3), H = dim_in(r, 1, 6),
                          W = dim_in(r, 1, 6);
        CaseBuilder b;
        b.inputs = {random_tensor({B, C1, H, W}, r), random_tensor({B, C2, H, W}, r)};
        const Tensor<double> w = random_tensor({B, C1 + C2, H, W}, r, -1, 1, false);
        b.loss = [w](std::span<const Tensor<double>> in, Tape<double>* t) {
            return weighted_sum(concat_channels(in[0], in[1], t), w, t);
        };
        return b;
    }));

    for (Activation kind : {Activation::relu, Activation::sigmoid}) {
        results.push_back(run_cases(kind == Activation::relu ? "relu" : "sigmoid", cases, rng, [kind](Rng& r) {
            const Shape s{dim_in(r, 1, 2), dim_in(r, 1, 3), dim_in(r, 1, 6), dim_in(r, 1, 6)};
            CaseBuilder b;
            b.inputs = {kind == Activation::relu ? random_away_from_zero(s, r, 0.01) : random_tensor(s, r, -3, 3)};
            const Tensor<double> w = random_tensor(s, r, -1, 1, false);
            b.loss = [w, kind](std::span<const Tensor<double>> in, Tape<double>* t) {
                return weighted_sum(activation(in[0], kind, t), w, t);
            };
            return b;
        }));
    }

    results.push_back(run_cases("softmax_channels", cases, rng, [](Rng& r) {
        const Shape s{dim_in(r, 1, 2), dim_in(r, 2, 4), dim_in(r, 1, 6), dim_in(r, 1, 6)};
        CaseBuilder b;
        b.inputs = {random_tensor(s, r, -3, 3)};
        const Tensor<double> w = random_tensor(s, r, -1, 1, false);
        b.loss = [w](std::span<const Tensor<double>> in, Tape<double>* t) { return weighted_sum(softmax_channels(in[0], t), w, t); };
        return b;
    }));

    results.push_back(run_cases("sum/mul", cases, rng, [](Rng& r) {
        const Shape s{dim_in(r, 1, 6), dim_in(r, 1, 6)};
        CaseBuilder b;
        b.inputs = {random_tensor(s, r), random_tensor(s, r)};
        b.loss = [](std::span<const Tensor<double>> in, Tape<double>* t) { return sum(mul(in[0], in[1], t), t); };
        return b;
    }));

    results.push_back(run_cases("dice_loss", cases, rng, [](Rng& r) {
        const std::size_t B = dim_in(r, 1, 2), K = dim_in(r, 2, 3), H = dim_in(r, 1, 6), W = dim_in(r, 1, 6);
        CaseBuilder b;
        b.inputs = {random_tensor({B, K, H, W}, r, -2, 2)};
        const Tensor<double> y = random_one_hot(B, K, H, W, r);
        b.loss = [y](std::span<const Tensor<double>> in, Tape<double>* t) { return dice_loss(y, softmax_channels(in[0], t), t); };
        return b;
    }));

    results.push_back(run_cases("dense_block", cases, rng, [](Rng& r) {
        const DenseBlockSpec spec{static_cast<int>(dim_in(r, 1, 2)), static_cast<int>(dim_in(r, 1, 2))};
        const std::size_t H = dim_in(r, 2, 6), W = dim_in(r, 2, 6);
        auto params = make_dense_block_params<double>(spec);
        CaseBuilder b;
        b.inputs.push_back(random_tensor({1, static_cast<std::size_t>(spec.in_channels), H, W}, r));
        for (auto& layer : params.layers) {
            for (auto& v : layer.kernel.data()) v = uniform(r, -0.6, 0.6);
            for (auto& v : layer.bias.data()) v = uniform(r, -0.1, 0.1);
            b.inputs.push_back(layer.kernel);
            b.inputs.push_back(layer.bias);
        }
        const Tensor<double> w = random_tensor({1, static_cast<std::size_t>(spec.out_channels()), H, W}, r, -1, 1, false);
        b.loss = [spec, params, w](std::span<const Tensor<double>> in, Tape<double>* t) {
            return weighted_sum(dense_block_forward(in[0], spec, params, t), w, t);
        };
        return b;
    }));

    results.push_back(run_cases("bottleneck", cases, rng, [](Rng& r) {
        BottleneckSpec spec;
        spec.in_channels = static_cast<int>(dim_in(r, 1, 2));
        spec.rates = {1, 2, 4};
        spec.branch_channels = static_cast<int>(dim_in(r, 1, 2));
        const std::size_t H = dim_in(r, 2, 6), W = dim_in(r, 2, 6);
        auto params = make_bottleneck_params<double>(spec);
        CaseBuilder b;
        b.inputs.push_back(random_tensor({1, static_cast<std::size_t>(spec.in_channels), H, W}, r));
        auto add = [&](ConvParams<double>& p) {
            for (auto& v : p.kernel.data()) v = uniform(r, -0.6, 0.6);
            for (auto& v : p.bias.data()) v = uniform(r, 0.0, 0.2);
            b.inputs.push_back(p.kernel);
            b.inputs.push_back(p.bias);
        };
        for (auto& branch : params.branches) add(branch);
        add(params.fuse);
        const Tensor<double> w = random_tensor({1, static_cast<std::size_t>(spec.branch_channels), H, W}, r, -1, 1, false);
        b.loss = [spec, params, w](std::span<const Tensor<double>> in, Tape<double>* t) {
            return weighted_sum(bottleneck_forward(in[0], spec, params, t), w, t);
        };
        return b;
    }));

    results.push_back(run_cases("end_to_end_dice(depth1,growth2,8x8)", cases, rng, [](Rng& r) {
        ModelSpec spec;
        spec.depth = 1;
        spec.base_growth = 2;
        spec.input_size = 8;
        const Model<double> model = build_skinnet<double>(spec, r());
        CaseBuilder b;
        b.inputs = model.parameter_list();
        b.max_coords = 16;
        const Tensor<double> x = random_tensor({1, 3, 8, 8}, r, 0, 1, false);
        const Tensor<double> y = random_one_hot(1, 2, 8, 8, r);
        b.loss = [model, x, y](std::span<const Tensor<double>>, Tape<double>* t) {
            return dice_loss(y, forward(model, x, t), t);
        };
        return b;
    }));

    return results;
}

std::vector<CheckResult> run_oracle_suite(int cases, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<CheckResult> results;
    static constexpr int kKernels[] = {1, 3, 5};
    static constexpr int kDilations[] = {1, 2, 3, 4};
    static constexpr int kStrides[] = {1, 2};

    {
        double worst = 0;
        // Cycle through every (dilation, stride) pair; the rest is random.
        for (int i = 0; i < cases; ++i) {
            const ConvCase c = random_conv_case(rng, 8, kKernels, kDilations, kStrides, 4, kDilations[i % 4],
                                                kStrides[(i / 4) % 2]);
            const auto x = random_tensor({c.B, c.C, c.H, c.W}, rng, -1, 1, false);
            const auto w = random_tensor({c.O, c.C, static_cast<std::size_t>(c.k), static_cast<std::size_t>(c.k)}, rng, -1, 1, false);
            const auto bias = random_tensor({c.O}, rng, -1, 1, false);
            const auto fast = conv2d(x, w, bias, Conv2dOptions{c.stride, c.dilation, c.padding});
            const auto slow = reference_conv2d(x, w, bias, c.stride, c.dilation, c.padding);
            if (fast.shape() != slow.shape()) {
                worst = std::numeric_limits<double>::infinity();
                continue;
            }
            for (std::size_t j = 0; j < fast.numel(); ++j) worst = std::max(worst, std::abs(fast[j] - slow[j]));
        }
        results.push_back({"conv2d vs direct summation", worst <= 1e-6,
                           fmt::format("{} cases over dilations {{1,2,3,4}} x strides {{1,2}}, max abs diff {:.3e} (tol 1e-6)",
                                       cases, worst)});
    }

    {
        double worst = 0;
        for (int i = 0; i < cases; ++i) {
            const int k = bernoulli(rng, 0.5) ? 3 : 5;
            const int d = static_cast<int>(dim_in(rng, 2, 4));
            const std::size_t C = dim_in(rng, 1, 3), O = dim_in(rng, 1, 3), H = dim_in(rng, 4, 8), W = dim_in(rng, 4, 8);
            const auto x = random_tensor({1, C, H, W}, rng, -1, 1, false);
            const auto w = random_tensor({O, C, static_cast<std::size_t>(k), static_cast<std::size_t>(k)}, rng, -1, 1, false);
            const auto bias = random_tensor({O}, rng, -1, 1, false);
            const int pad = same_padding(k, d);
            const auto dilated = conv2d(x, w, bias, Conv2dOptions{1, d, pad});
            const auto spread = conv2d(x, zero_interleave(w, d), bias, Conv2dOptions{1, 1, pad});
            for (std::size_t j = 0; j < dilated.numel(); ++j) worst = std::max(worst, std::abs(dilated[j] - spread[j]));
        }
        results.push_back({"dilation law (zero-interleaved kernel)", worst <= 1e-6,
                           fmt::format("{} cases, max abs diff {:.3e} (tol 1e-6)", cases, worst)});
    }

    {
        double worst = 0;
        for (int i = 0; i < cases; ++i) {
            const ConvCase c = random_conv_case(rng, 8, kKernels, kDilations, kStrides, 4);
            const double alpha = uniform(rng, -3, 3);
            const auto x = random_tensor({c.B, c.C, c.H, c.W}, rng, -1, 1, false);
            auto scaled = x.clone();
            for (auto& v : scaled.data()) v *= alpha;
            const auto w = random_tensor({c.O, c.C, static_cast<std::size_t>(c.k), static_cast<std::size_t>(c.k)}, rng, -1, 1, false);
            const Tensor<double> zero({c.O});
            const Conv2dOptions opt{c.stride, c.dilation, c.padding};
            const auto lhs = conv2d(scaled, w, zero, opt);
            const auto rhs = conv2d(x, w, zero, opt);
            for (std::size_t j = 0; j < lhs.numel(); ++j) worst = std::max(worst, std::abs(lhs[j] - alpha * rhs[j]));
        }
        results.push_back({"conv2d linearity", worst <= 1e-6, fmt::format("{} cases, max abs diff {:.3e}", cases, worst)});
    }

    {
        bool ok = true;
        for (int k : {1, 3, 5})
            for (int d : {1, 2, 4, 8, 16, 32}) ok = ok && effective_kernel_extent(k, d) == tap_span(k, d);
        results.push_back({"effective kernel extent vs tap enumeration", ok && effective_kernel_extent(3, 2) == 5,
                           fmt::format("k in {{1,3,5}}, d in {{1,2,4,8,16,32}}; extent(3,2) = {}", effective_kernel_extent(3, 2))});
    }

    {
        double worst = 0;
        for (int i = 0; i < cases; ++i) {
            const auto x = random_tensor({dim_in(rng, 1, 2), dim_in(rng, 2, 4), dim_in(rng, 1, 8), dim_in(rng, 1, 8)}, rng, -20, 20, false);
            const auto p = softmax_channels(x);
            const std::size_t K = p.dim(1), plane = p.dim(2) * p.dim(3);
            for (std::size_t b = 0; b < p.dim(0); ++b)
                for (std::size_t n = 0; n < plane; ++n) {
                    double s = 0;
                    for (std::size_t k = 0; k < K; ++k) s += p[(b * K + k) * plane + n];
                    worst = std::max(worst, std::abs(s - 1));
                }
        }
        results.push_back({"softmax normalization", worst <= 1e-6, fmt::format("{} cases, max |sum-1| {:.3e}", cases, worst)});
    }

    {
        bool exact = true, identity = true;
        double worst_law = 0;
        for (int i = 0; i < std::max(cases, 100); ++i) {
            const double density = uniform(rng, 0, 1);
            const Mask pred = random_mask(16, 16, rng, density), truth = random_mask(16, 16, rng, uniform(rng, 0, 1));
            const MetricReport got = metrics(confusion(pred, truth));
            const MetricReport want = reference_metrics(pred, truth);
            exact = exact && got.ac == want.ac && got.dc == want.dc && got.ji == want.ji && got.se == want.se &&
                    got.sp == want.sp;
            worst_law = std::max(worst_law, std::abs(got.dc - 2 * got.ji / (1 + got.ji)));
            const MetricReport self = metrics(confusion(pred, pred));
            identity = identity && self.ac == 1 && self.dc == 1 && self.ji == 1 && self.se == 1 && self.sp == 1;
        }
        results.push_back({"metrics vs pixel-count oracle", exact && identity && worst_law < 1e-12,
                           fmt::format("{} mask pairs, exact={}, self-agreement={}, max |dc-2ji/(1+ji)| {:.1e}",
                                       std::max(cases, 100), exact, identity, worst_law)});
    }
    return results;
}

bool report(std::span<const CheckResult> results, std::ostream& out) {
    bool all = true;
    for (const auto& r : results) {
        fmt::print(out, "{} {}: {}\n", r.passed ? "PASS" : "FAIL", r.name, r.detail);
        all = all && r.passed;
    }
    return all;
}

}  // namespace skinnet::selftest
