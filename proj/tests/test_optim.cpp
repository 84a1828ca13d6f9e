#include <doctest.h>

#include <cmath>

#include "skinnet/optim.hpp"
#include "skinnet/random.hpp"

using namespace skinnet;
using T = Tensor<double>;

namespace {

// Produced by a standalone scalar script: theta0 = 1, f = theta^2, default betas/eps.
constexpr double kTrajectorySmallLr[] = {0.9999000000004999, 0.9998000002617947, 0.9997000009571337,
                                         0.9996000022588255, 0.9995000043378607, 0.9994000073635463,
                                         0.9993000115031525, 0.9992000169215755, 0.9991000237810173,
                                         0.999000032240687};
constexpr double kTrajectoryLargeLr[] = {0.9000000005,        0.8004122286917927,  0.70158627294603,
                                         0.6039390605737458,  0.5079636592643417,  0.4142364559936616,
                                         0.32342070493910174, 0.2362637245210415,  0.1535845600703632,
                                         0.07624915560691176};

std::vector<double> quadratic_trajectory(double lr, int steps) {
    std::vector<T> params{T({1}, 1.0, true)};
    AdamState<double> state(params, AdamConfig{lr});
    std::vector<double> out;
    for (int i = 0; i < steps; ++i) {
        params[0].ensure_grad()[0] = 2 * params[0][0];
        adam_step<double>(params, state);
        out.push_back(params[0][0]);
    }
    return out;
}

}  // namespace

TEST_CASE("zero gradients leave parameters unchanged") {
    Rng rng(1);
    std::vector<T> params{T({3, 2}, 0.0, true), T({4}, 0.0, true)};
    for (auto& p : params)
        for (auto& v : p.data()) v = uniform(rng, -1, 1);
    const auto before0 = std::vector<double>(params[0].data().begin(), params[0].data().end());
    AdamState<double> state(params);
    for (auto& p : params) p.ensure_grad();
    for (int i = 0; i < 3; ++i) adam_step<double>(params, state);
    for (std::size_t i = 0; i < before0.size(); ++i) CHECK(params[0][i] == before0[i]);
    CHECK(state.step() == 3);
}

TEST_CASE("first step on a unit gradient") {
    std::vector<T> params{T({1}, 1.0, true)};
    AdamState<double> state(params, AdamConfig{1e-4});
    params[0].ensure_grad()[0] = 1.0;
    adam_step<double>(params, state);
    CHECK(params[0][0] == doctest::Approx(1.0 - 1e-4 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(state.first_moment(0)[0] == doctest::Approx(0.1));
    CHECK(state.second_moment(0)[0] == doctest::Approx(0.001));
}

TEST_CASE("trajectories on theta^2 match the scalar reference") {
    for (int steps : {3, 10}) {
        const auto small = quadratic_trajectory(1e-4, steps);
        const auto large = quadratic_trajectory(0.1, steps);
        for (int i = 0; i < steps; ++i) {
            CHECK(std::abs(small[i] - kTrajectorySmallLr[i]) <= 1e-10);
            CHECK(std::abs(large[i] - kTrajectoryLargeLr[i]) <= 1e-10);
        }
    }
}

TEST_CASE("update magnitude approaches lr under a constant gradient") {
    const double lr = 1e-3;
    std::vector<T> params{T({1}, 0.0, true)};
    AdamState<double> state(params, AdamConfig{lr});
    double last = 0;
    for (int t = 1; t <= 1000; ++t) {
        params[0].ensure_grad()[0] = 0.37;
        const double before = params[0][0];
        adam_step<double>(params, state);
        last = std::abs(params[0][0] - before);
    }
    CHECK(std::abs(last / lr - 1.0) <= 1e-3);
}

TEST_CASE("second moment stays non-negative") {
    Rng rng(2);
    std::vector<T> params{T({16}, 0.0, true)};
    AdamState<double> state(params);
    for (int t = 0; t < 50; ++t) {
        for (auto& g : params[0].ensure_grad()) g = uniform(rng, -5, 5);
        adam_step<double>(params, state);
        for (double v : state.second_moment(0)) CHECK(v >= 0.0);
    }
}

TEST_CASE("identical gradient sequences give bitwise-identical trajectories") {
    auto run = [] {
        Rng rng(3);
        std::vector<Tensor<float>> params{Tensor<float>({8}, 0.5f, true)};
        AdamState<float> state(params);
        for (int t = 0; t < 30; ++t) {
            for (auto& g : params[0].ensure_grad()) g = static_cast<float>(uniform(rng, -1, 1));
            adam_step<float>(params, state);
        }
        return std::vector<float>(params[0].data().begin(), params[0].data().end());
    };
    CHECK(run() == run());
}

TEST_CASE("adam_step errors") {
    std::vector<T> params{T({2}, 0.0, true)};
    AdamState<double> state(params);
    CHECK_THROWS(adam_step<double>(params, state));  // no gradient yet
    std::vector<T> other{T({3}, 0.0, true)};
    other[0].ensure_grad();
    CHECK_THROWS_AS(adam_step<double>(other, state), ShapeError);
    std::vector<T> more{T({2}, 0.0, true), T({2}, 0.0, true)};
    CHECK_THROWS_AS(adam_step<double>(more, state), ShapeError);
}

TEST_CASE("plateau schedule") {
    SUBCASE("strictly decreasing losses keep the rate") {
        PlateauSchedule s(1e-4);
        double loss = 1.0;
        for (int e = 0; e < 50; ++e) {
            CHECK(s.update(loss) == 1e-4);
            loss -= 0.01;
        }
    }
    SUBCASE("five flat epochs halve the rate") {
        PlateauSchedule s(1e-4);
        s.update(0.5);
        for (int e = 0; e < 4; ++e) CHECK(s.update(0.5) == 1e-4);
        CHECK(s.update(0.5) == doctest::Approx(5e-5));
    }
    SUBCASE("changes below the threshold count as flat") {
        PlateauSchedule s(1e-4);
        s.update(0.5);
        for (int e = 0; e < 5; ++e) s.update(0.5 - 1e-5 * (e + 1));
        CHECK(s.lr() == doctest::Approx(5e-5));
    }
    SUBCASE("floor at min_lr and never increasing") {
        PlateauSchedule s(1e-4);
        double prev = s.lr();
        for (int e = 0; e < 500; ++e) {
            const double lr = s.update(e % 7 == 0 ? 0.9 : 1.0);
            CHECK(lr <= prev);
            CHECK(lr >= 1e-6);
            prev = lr;
        }
        CHECK(s.lr() == 1e-6);
    }
}
