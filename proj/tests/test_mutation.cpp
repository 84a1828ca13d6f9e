#include <doctest.h>

#include <map>

#include "skinnet/mutation.hpp"
#include "skinnet/selftest.hpp"

using namespace skinnet;

namespace {

std::map<std::string, bool> suite_outcome(int mutation) {
    set_mutation(mutation);
    std::map<std::string, bool> out;
    for (const auto& r : selftest::run_grad_suite(20, 0)) out[r.name] = r.passed;
    set_mutation(0);
    return out;
}

}  // namespace

TEST_CASE("unmutated build passes") {
    for (const auto& [name, ok] : suite_outcome(0)) CHECK_MESSAGE(ok, name);
}

TEST_CASE("every corrupted backward rule is detected") {
    const std::pair<int, const char*> cases[] = {
        {1, "conv2d"},  {2, "conv2d"},        {3, "max_pool2d"},         {4, "relu"},           {5, "sigmoid"},
        {6, "softmax_channels"}, {7, "upsample2d_nearest"}, {8, "sum/mul"}, {9, "concat_channels"},
    };
    for (const auto& [id, op] : cases) {
        CAPTURE(id);
        const auto outcome = suite_outcome(id);
        REQUIRE(outcome.count(op) == 1);
        CHECK_MESSAGE(!outcome.at(op), op);
    }
}
