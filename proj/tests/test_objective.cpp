#include <doctest.h>

#include <cmath>

#include "skinnet/objective.hpp"
#include "skinnet/ops.hpp"
#include "skinnet/random.hpp"
#include "skinnet/selftest.hpp"

using namespace skinnet;
using T = Tensor<double>;

namespace {

Mask random_mask(std::size_t h, std::size_t w, Rng& rng, double p = 0.5) {
    Mask m(h, w);
    for (auto& v : m.data) v = bernoulli(rng, p) ? 1 : 0;
    return m;
}

Mask mask_of(std::size_t h, std::size_t w, std::vector<std::uint8_t> v) {
    Mask m(h, w);
    m.data = std::move(v);
    return m;
}

T hard_one_hot(const Mask& m, bool invert = false) {
    T y({1, 2, m.height, m.width});
    const std::size_t n = m.data.size();
    for (std::size_t i = 0; i < n; ++i) {
        const bool lesion = (m.data[i] == 1) != invert;
        y[(lesion ? n : 0) + i] = 1;
    }
    return y;
}

}  // namespace

TEST_CASE("dice loss worked examples") {
    Rng rng(1);
    const Mask m = random_mask(4, 5, rng);
    const T y = hard_one_hot(m);
    CHECK(std::abs(dice_loss(y, y).item()) <= 1e-6);
    CHECK(std::abs(dice_loss(y, hard_one_hot(m, true)).item() - 1.0) <= 1e-6);

    const T y2({1, 2, 1, 2}, std::vector<double>{1, 0, 0, 1});
    const T p2({1, 2, 1, 2}, std::vector<double>{0.8, 0.4, 0.2, 0.6});
    CHECK(std::abs(dice_loss(y2, p2).item() - 0.30303) <= 1e-4);
    CHECK(std::abs(dice_loss(y2, p2).item() - (1 - (0.8 / 2.2 + 0.6 / 1.8))) <= 1e-6);
}

TEST_CASE("dice loss errors") {
    CHECK_THROWS_AS(dice_loss(T({1, 2, 2, 2}), T({1, 2, 2, 3})), ShapeError);
    CHECK_THROWS(dice_loss(T({1, 1, 2, 2}), T({1, 1, 2, 2})));
}

TEST_CASE("dice loss stays in [0,1] for softmax predictions") {
    Rng rng(2);
    for (int i = 0; i < 500; ++i) {
        const std::size_t B = 1 + uniform_index(rng, 2), H = 1 + uniform_index(rng, 6), W = 1 + uniform_index(rng, 6);
        T logits({B, 2, H, W});
        for (auto& v : logits.data()) v = uniform(rng, -6, 6);
        T y({B, 2, H, W});
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t p = 0; p < H * W; ++p) y[(b * 2 + uniform_index(rng, 2)) * H * W + p] = 1;
        const double l = dice_loss(y, softmax_channels(logits)).item();
        CHECK(l >= 0.0);
        CHECK(l <= 1.0);
    }
}

TEST_CASE("dice loss gradient against finite differences") {
    Rng rng(3);
    for (int c = 0; c < 20; ++c) {
        const std::size_t H = 1 + uniform_index(rng, 5), W = 1 + uniform_index(rng, 5);
        std::vector<T> in{T({1, 2, H, W}, 0.0, true)};
        for (auto& v : in[0].data()) v = uniform(rng, 0.05, 0.95);
        T y({1, 2, H, W});
        for (std::size_t p = 0; p < H * W; ++p) y[uniform_index(rng, 2) * H * W + p] = 1;
        const auto r = selftest::gradcheck(
            [y](std::span<const T> v, Tape<double>* t) { return dice_loss(y, v[0], t); }, in, {}, rng);
        CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("confusion examples") {
    Rng rng(4);
    const Mask m = random_mask(5, 5, rng);
    const auto same = confusion(m, m);
    CHECK(same.fp == 0);
    CHECK(same.fn == 0);

    const auto all_fp = confusion(Mask(2, 2, 1), Mask(2, 2, 0));
    CHECK(all_fp == ConfusionCounts{0, 4, 0, 0});

    const auto c = confusion(mask_of(2, 2, {1, 1, 0, 0}), mask_of(2, 2, {1, 0, 1, 0}));
    CHECK(c == ConfusionCounts{1, 1, 1, 1});

    CHECK_THROWS(confusion(Mask(2, 2, 2), Mask(2, 2, 0)));
    CHECK_THROWS(confusion(Mask(2, 2), Mask(2, 3)));
}

TEST_CASE("metrics examples") {
    const auto r = metrics(ConfusionCounts{1, 1, 1, 1});
    CHECK(r.ac == doctest::Approx(0.5));
    CHECK(r.dc == doctest::Approx(0.5));
    CHECK(r.ji == doctest::Approx(1.0 / 3.0));
    CHECK(r.se == doctest::Approx(0.5));
    CHECK(r.sp == doctest::Approx(0.5));

    const auto perfect = metrics(ConfusionCounts{3, 0, 5, 0});
    for (double v : {perfect.ac, perfect.dc, perfect.ji, perfect.se, perfect.sp}) CHECK(v == 1.0);

    // empty reference and empty prediction agree
    const auto empty = metrics(ConfusionCounts{0, 0, 9, 0});
    CHECK(empty.dc == 1.0);
    CHECK(empty.ji == 1.0);
    CHECK(empty.se == 1.0);
    // empty reference, non-empty prediction
    const auto spurious = metrics(ConfusionCounts{0, 2, 7, 0});
    CHECK(spurious.dc == 0.0);
    CHECK(spurious.se == 0.0);

    CHECK_THROWS(metrics(ConfusionCounts{}));
}

TEST_CASE("self-agreement gives all ones") {
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
        const Mask m = random_mask(1 + uniform_index(rng, 12), 1 + uniform_index(rng, 12), rng, uniform01(rng));
        const auto r = metrics(confusion(m, m));
        for (double v : {r.ac, r.dc, r.ji, r.se, r.sp}) CHECK(v == 1.0);
    }
}

TEST_CASE("dc = 2 ji / (1 + ji)") {
    Rng rng(6);
    for (int i = 0; i < 200; ++i) {
        const Mask a = random_mask(16, 16, rng, uniform01(rng)), b = random_mask(16, 16, rng, uniform01(rng));
        const auto r = metrics(confusion(a, b));
        CHECK(std::abs(r.dc - 2 * r.ji / (1 + r.ji)) <= 1e-12);
    }
}

TEST_CASE("metrics match the pixel-count oracle exactly") {
    Rng rng(7);
    for (int i = 0; i < 100; ++i) {
        const Mask a = random_mask(16, 16, rng, uniform01(rng)), b = random_mask(16, 16, rng, uniform01(rng));
        const auto fast = metrics(confusion(a, b));
        const auto slow = selftest::reference_metrics(a, b);
        CHECK(fast.ac == slow.ac);
        CHECK(fast.dc == slow.dc);
        CHECK(fast.ji == slow.ji);
        CHECK(fast.se == slow.se);
        CHECK(fast.sp == slow.sp);
    }
}

TEST_CASE("binarize") {
    const T half({1, 2, 1, 1}, std::vector<double>{0.5, 0.5});
    CHECK(binarize(half)[0].data[0] == 1);
    const T zeros({2, 2, 3, 3}, 0.0);
    for (const auto& m : binarize(zeros))
        for (auto v : m.data) CHECK(v == 0);

    // argmax equivalence over a probability grid
    const std::size_t n = 101;
    T grid({1, 2, 1, n});
    for (std::size_t i = 0; i < n; ++i) {
        grid[n + i] = static_cast<double>(i) / 100.0;
        grid[i] = 1.0 - grid[n + i];
    }
    const Mask m = binarize(grid)[0];
    for (std::size_t i = 0; i < n; ++i) {
        const int argmax = grid[n + i] >= grid[i] ? 1 : 0;
        CHECK(m.data[i] == argmax);
    }
}

TEST_CASE("csv rows") {
    CHECK(std::string(kMetricCsvHeader) == "ac,dc,ji,se,sp");
    CHECK(to_csv_row(metrics(ConfusionCounts{1, 1, 1, 1})) == "0.5000,0.5000,0.3333,0.5000,0.5000");
    const MetricReport rs[] = {metrics(ConfusionCounts{1, 1, 1, 1}), metrics(ConfusionCounts{2, 0, 2, 0})};
    const auto mean = mean_report(rs);
    CHECK(mean.dc == doctest::Approx(0.75));
}
