#include <doctest.h>

#include <filesystem>
#include <set>

#include "skinnet/checkpoint.hpp"
#include "skinnet/network.hpp"
#include "skinnet/random.hpp"

using namespace skinnet;

namespace {

template <typename Real>
Tensor<Real> random_t(Shape s, Rng& rng, double lo = -1, double hi = 1) {
    Tensor<Real> t(std::move(s));
    for (auto& v : t.data()) v = static_cast<Real>(uniform(rng, lo, hi));
    return t;
}

ModelSpec small_spec(int depth, int growth, int size) {
    ModelSpec s;
    s.depth = depth;
    s.base_growth = growth;
    s.input_size = size;
    return s;
}

}  // namespace

TEST_CASE("dense block channel arithmetic and passthrough") {
    const DenseBlockSpec spec{4, 8};
    CHECK(spec.out_channels() == 20);
    CHECK(spec.layer_in_channels(1) == 12);

    Rng rng(1);
    auto params = make_dense_block_params<float>(spec);
    for (auto& l : params.layers)
        for (auto& v : l.kernel.data()) v = static_cast<float>(uniform(rng, -0.3, 0.3));
    const auto x = random_t<float>({2, 4, 6, 5}, rng);
    const auto y = dense_block_forward(x, spec, params);
    REQUIRE(y.shape() == Shape{2, 20, 6, 5});
    const std::size_t plane = 6 * 5;
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t i = 0; i < 4 * plane; ++i) CHECK(y[b * 20 * plane + i] == x[b * 4 * plane + i]);
}

TEST_CASE("dense block with zero parameters emits concat(x, 0, 0)") {
    Rng rng(2);
    const DenseBlockSpec spec{3, 2};
    const auto params = make_dense_block_params<double>(spec);
    const auto x = random_t<double>({1, 3, 4, 4}, rng);
    const auto y = dense_block_forward(x, spec, params);
    REQUIRE(y.shape() == Shape{1, 7, 4, 4});
    for (std::size_t i = 0; i < 48; ++i) CHECK(y[i] == x[i]);
    for (std::size_t i = 48; i < y.numel(); ++i) CHECK(y[i] == 0.0);
    CHECK_THROWS_AS(dense_block_forward(random_t<double>({1, 2, 4, 4}, rng), spec, params), ShapeError);
}

TEST_CASE("single-rate bottleneck with identity fuse is one conv block") {
    Rng rng(3);
    BottleneckSpec spec;
    spec.in_channels = 3;
    spec.rates = {1};
    spec.branch_channels = 3;
    auto params = make_bottleneck_params<double>(spec);
    params.branches[0].kernel = random_t<double>({3, 3, 3, 3}, rng);
    params.branches[0].bias = random_t<double>({3}, rng);
    for (std::size_t o = 0; o < 3; ++o) params.fuse.kernel[o * 3 + o] = 1.0;

    const auto x = random_t<double>({1, 3, 7, 7}, rng);
    const auto y = bottleneck_forward(x, spec, params);
    const auto ref = relu(conv2d(x, params.branches[0].kernel, params.branches[0].bias, Conv2dOptions{1, 1, 1}));
    REQUIRE(y.shape() == ref.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(ref[i]).epsilon(1e-12));
}

TEST_CASE("six-rate bottleneck shapes") {
    BottleneckSpec spec;
    spec.in_channels = 5;
    spec.branch_channels = 8;
    CHECK(spec.concat_channels() == 48);
    const auto params = make_bottleneck_params<float>(spec);
    CHECK(params.fuse.kernel.shape() == Shape{8, 48, 1, 1});

    Rng rng(4);
    const auto y = bottleneck_forward(random_t<float>({1, 5, 16, 16}, rng), spec, params);
    CHECK(y.shape() == Shape{1, 8, 16, 16});
    for (int r : spec.rates) {
        const Conv2dOptions opt{1, r, same_padding(3, r)};
        CHECK(conv_output_extent(16, 3, opt) == 16);
    }

    BottleneckSpec empty = spec;
    empty.rates.clear();
    CHECK_THROWS(empty.validate());
    BottleneckSpec unordered = spec;
    unordered.rates = {1, 4, 2};
    CHECK_THROWS(unordered.validate());
}

TEST_CASE("full model output contract") {
    const ModelSpec spec = small_spec(4, 4, 64);
    const auto model = build_skinnet<float>(spec, 7);
    Rng rng(5);
    const auto x = random_t<float>({1, 3, 64, 64}, rng, 0, 1);
    const auto y = forward(model, x);
    REQUIRE(y.shape() == Shape{1, 2, 64, 64});
    const std::size_t plane = 64 * 64;
    for (std::size_t p = 0; p < plane; ++p) {
        CHECK(std::abs(y[p] + y[plane + p] - 1.0f) <= 1e-6f);
        CHECK(y[p] >= 0.0f);
        CHECK(y[p] <= 1.0f);
    }
    CHECK_THROWS_AS(forward(model, random_t<float>({1, 1, 64, 64}, rng)), ShapeError);
    CHECK_THROWS(forward(model, random_t<float>({1, 3, 40, 40}, rng)));
}

TEST_CASE("shape round trip for sizes divisible by 2^depth") {
    const auto model = build_skinnet<float>(small_spec(2, 2, 16), 1);
    Rng rng(6);
    for (std::size_t s : {4u, 8u, 12u, 20u}) {
        const auto y = forward(model, random_t<float>({1, 3, s, s}, rng, 0, 1));
        CHECK(y.shape() == Shape{1, 2, s, s});
    }
}

TEST_CASE("batch of identical images gives identical planes") {
    const auto model = build_skinnet<float>(small_spec(2, 4, 16), 3);
    Rng rng(7);
    const auto one = random_t<float>({1, 3, 16, 16}, rng, 0, 1);
    Tensor<float> two({2, 3, 16, 16});
    for (std::size_t i = 0; i < one.numel(); ++i) two[i] = two[one.numel() + i] = one[i];
    const auto y = forward(model, two);
    const std::size_t half = y.numel() / 2;
    for (std::size_t i = 0; i < half; ++i) CHECK(y[i] == y[half + i]);
}

TEST_CASE("seed determinism") {
    const ModelSpec spec = small_spec(3, 4, 32);
    const auto a = build_skinnet<float>(spec, 42);
    const auto b = build_skinnet<float>(spec, 42);
    const auto c = build_skinnet<float>(spec, 43);
    bool any_diff = false;
    for (const auto& [name, t] : a.parameters()) {
        const auto& u = b.parameters().at(name);
        REQUIRE(t.shape() == u.shape());
        for (std::size_t i = 0; i < t.numel(); ++i) REQUIRE(t[i] == u[i]);
        const auto& v = c.parameters().at(name);
        for (std::size_t i = 0; i < t.numel(); ++i) any_diff |= t[i] != v[i];
    }
    CHECK(any_diff);

    Rng rng(8);
    const auto x = random_t<float>({1, 3, 32, 32}, rng, 0, 1);
    const auto ya = forward(a, x), yb = forward(b, x);
    for (std::size_t i = 0; i < ya.numel(); ++i) REQUIRE(ya[i] == yb[i]);
}

TEST_CASE("He-uniform bounds and zero biases") {
    const auto model = build_skinnet<double>(small_spec(2, 4, 16), 9);
    for (const auto& conv : skinnet_layout(model.spec())) {
        const auto& k = model.parameters().at(conv.name + "/kernel");
        const auto& b = model.parameters().at(conv.name + "/bias");
        const double bound = std::sqrt(6.0 / (conv.in_channels * conv.kernel * conv.kernel));
        for (double v : k.data()) CHECK(std::abs(v) <= bound);
        for (double v : b.data()) CHECK(v == 0.0);
    }
}

TEST_CASE("parameter counts") {
    CHECK(parameter_count(ConvLayout{"head", 3, 2, 1}) == 8);

    // depth 1, growth 2: enc dense 3->2, 5->2 (3x3); six 3x3 branches 7->4; fuse 24->4 (1x1);
    // up 4->2 (3x3); dec dense 9->2, 11->2 (3x3); head 13->2 (1x1).
    const std::size_t tally = (9 * 3 * 2 + 2) + (9 * 5 * 2 + 2) + 6 * (9 * 7 * 4 + 4) + (24 * 4 + 4) +
                              (9 * 4 * 2 + 2) + (9 * 9 * 2 + 2) + (9 * 11 * 2 + 2) + (13 * 2 + 2);
    const ModelSpec toy = small_spec(1, 2, 8);
    CHECK(tally == 2250);
    CHECK(parameter_count(toy) == tally);
    CHECK(parameter_count(build_skinnet<double>(toy, 0)) == tally);

    std::size_t prev = 0;
    for (int g : {1, 2, 4, 8, 16}) {
        const std::size_t n = parameter_count(small_spec(4, g, 64));
        CHECK(n > prev);
        prev = n;
    }
    const ModelSpec desk = small_spec(4, 8, 64);
    CHECK(parameter_count(desk) == parameter_count(build_skinnet<float>(desk, 0)));
}

TEST_CASE("layout names match parameter names") {
    const ModelSpec spec = small_spec(3, 4, 32);
    const auto model = build_skinnet<float>(spec, 0);
    const auto layout = skinnet_layout(spec);
    std::set<std::string> names;
    for (const auto& conv : layout) {
        CHECK(names.insert(conv.name).second);
        const auto& k = model.parameters().at(conv.name + "/kernel");
        CHECK(k.shape() == Shape{static_cast<std::size_t>(conv.out_channels), static_cast<std::size_t>(conv.in_channels),
                                 static_cast<std::size_t>(conv.kernel), static_cast<std::size_t>(conv.kernel)});
    }
    CHECK(model.parameters().size() == 2 * layout.size());
}

TEST_CASE("invalid model specs") {
    CHECK_THROWS(build_skinnet<float>(small_spec(4, 8, 72), 0));
    ModelSpec one_class = small_spec(1, 2, 8);
    one_class.classes = 1;
    CHECK_THROWS(one_class.validate());
}

TEST_CASE("cast to double and back preserves values") {
    const auto f = build_skinnet<float>(small_spec(1, 2, 8), 5);
    const auto d = f.cast<double>();
    const auto back = d.cast<float>();
    for (const auto& [name, t] : f.parameters())
        for (std::size_t i = 0; i < t.numel(); ++i) CHECK(back.parameters().at(name)[i] == t[i]);
}

TEST_CASE("checkpoint round trip is bitwise") {
    const ModelSpec spec = small_spec(2, 4, 16);
    const auto model = build_skinnet<float>(spec, 11);
    const std::filesystem::path path = "net_roundtrip.sknt";
    save_checkpoint(path, model, R"({"normalization":"minmax"})");
    const auto loaded = load_checkpoint(path);
    CHECK(loaded.spec() == spec);
    CHECK(read_sidecar(path).find("minmax") != std::string::npos);

    Rng rng(12);
    const auto x = random_t<float>({2, 3, 16, 16}, rng, 0, 1);
    const auto a = forward(model, x), b = forward(loaded, x);
    for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(a[i] == b[i]);

    CHECK(model_spec_from_json(model_spec_to_json(spec)) == spec);
}

TEST_CASE("corrupt checkpoints are rejected") {
    const auto model = build_skinnet<float>(small_spec(1, 2, 8), 1);
    const std::filesystem::path path = "net_corrupt.sknt";
    save_checkpoint(path, model);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 4);
    CHECK_THROWS_AS(load_checkpoint(path), CheckpointError);
    CHECK_THROWS(load_checkpoint("does_not_exist.sknt"));
}
