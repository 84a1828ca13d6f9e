#include <doctest.h>

#include <sstream>

#include "skinnet/selftest.hpp"

using namespace skinnet;
using T = Tensor<double>;

namespace {

// x^2 elementwise with a caller-chosen derivative factor (2 is correct).
T square(const T& x, double factor, Tape<double>* tape) {
    T out(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out[i] = x[i] * x[i];
    if (tape && x.requires_grad()) {
        out.set_requires_grad(true);
        tape->record({x}, out, [x = x, out, factor]() mutable {
            for (std::size_t i = 0; i < x.numel(); ++i) x.grad()[i] += factor * x[i] * out.grad()[i];
        });
    }
    return out;
}

bool all_passed(const std::vector<selftest::CheckResult>& rs) {
    std::ostringstream sink;
    return selftest::report(rs, sink);
}

}  // namespace

TEST_CASE("relative error") {
    CHECK(selftest::relative_error(1.0, 1.0) == 0.0);
    CHECK(selftest::relative_error(2.0, 1.0) == doctest::Approx(0.5));
    CHECK(selftest::relative_error(0.0, 0.0) == 0.0);
    // denominator floor 1e-4: a 1e-9 gap on tiny gradients is 1e-5 relative
    CHECK(selftest::relative_error(1e-7, 1e-7 + 1e-9) == doctest::Approx(1e-5));
}

TEST_CASE("gradcheck catches a wrong backward rule") {
    Rng rng(1);
    std::vector<T> in{T({3, 4}, 0.0, true)};
    for (auto& v : in[0].data()) v = uniform(rng, 0.5, 1.5);
    auto loss_with = [](double factor) {
        return [factor](std::span<const T> v, Tape<double>* t) { return sum(square(v[0], factor, t), t); };
    };
    CHECK(selftest::gradcheck(loss_with(2.0), in, {}, rng).max_rel_error < 1e-6);
    CHECK(selftest::gradcheck(loss_with(1.0), in, {}, rng).max_rel_error > 0.4);
    CHECK(selftest::gradcheck(loss_with(2.001), in, {}, rng).max_rel_error > 1e-4);
}

TEST_CASE("gradcheck skips steps that straddle a relu kink") {
    Rng rng(2);
    std::vector<T> in{T({4}, std::vector<double>{-0.5, 0.0004, 0.7, -1e-4}, true)};
    const auto r = selftest::gradcheck(
        [](std::span<const T> v, Tape<double>* t) { return sum(relu(v[0], t), t); }, in, {}, rng);
    CHECK(r.kink_skipped == 2);
    CHECK(r.checked == 2);
    CHECK(r.max_rel_error < 1e-12);
}

TEST_CASE("gradient suite passes") {
    const auto rs = selftest::run_grad_suite(20, 0);
    CHECK(rs.size() >= 12);
    for (const auto& r : rs) CHECK_MESSAGE(r.passed, r.name << ": " << r.detail);
}

TEST_CASE("oracle suite passes") {
    const auto rs = selftest::run_oracle_suite(50, 0);
    for (const auto& r : rs) CHECK_MESSAGE(r.passed, r.name << ": " << r.detail);
    CHECK(all_passed(rs));
}

TEST_CASE("reference conv and interleave helpers") {
    const T k({1, 1, 3, 3}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
    const T z = selftest::zero_interleave(k, 2);
    CHECK(z.shape() == Shape{1, 1, 5, 5});
    CHECK(z[0] == 1.0);
    CHECK(z[1] == 0.0);
    CHECK(z[2] == 2.0);
    CHECK(z[24] == 9.0);
    CHECK(selftest::tap_span(3, 32) == 65);
    CHECK(selftest::tap_span(1, 8) == 1);
}
