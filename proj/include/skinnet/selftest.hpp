#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "skinnet/objective.hpp"
#include "skinnet/ops.hpp"
#include "skinnet/random.hpp"

// Reference implementations and checking harnesses. Nothing here shares
// code with the kernels it checks.
namespace skinnet::selftest {

/// Builds a scalar loss from `inputs`, recording on `tape` when non-null.
using LossFn = std::function<Tensor<double>(std::span<const Tensor<double>> inputs, Tape<double>* tape)>;

struct GradcheckOptions {
    double step = 1e-3;
    double tolerance = 1e-4;
    /// Coordinates sampled per input tensor; 0 checks every element.
    std::size_t max_coords = 0;
    /// Lower bound on the relative-error denominator; with tolerance 1e-4 this
    /// acts as an absolute tolerance of 1e-8 on near-zero gradients.
    double scale_floor = 1e-4;
};

struct GradcheckResult {
    double max_rel_error = 0;
    std::size_t checked = 0;
    /// Coordinates whose +-h step changed a relu sign or pool argmax; not compared.
    std::size_t kink_skipped = 0;
    bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// |a - b| / max(|a|, |b|, floor).
double relative_error(double analytic, double numeric, double floor = 1e-4);

/// Reverse-mode gradients of `loss` against central differences, for every
/// input with requires_grad set. A coordinate whose step crosses a relu or
/// max-pool kink is counted in kink_skipped instead of compared.
GradcheckResult gradcheck(const LossFn& loss, std::span<const Tensor<double>> inputs, const GradcheckOptions& options,
                          Rng& rng);

/// Direct quadruple-loop convolution with zero padding.
Tensor<double> reference_conv2d(const Tensor<double>& input, const Tensor<double>& kernel, const Tensor<double>& bias,
                                int stride, int dilation, int padding);

/// Kernel (O,C,k,k) spread to (O,C,E,E), E = k + (k-1)(d-1), zeros between taps.
Tensor<double> zero_interleave(const Tensor<double>& kernel, int dilation);

/// Span between first and last nonzero tap (+1) along one axis of a zero-interleaved kernel.
int tap_span(int k, int dilation);

/// Counts pixels one by one; no shared code with confusion()/metrics().
MetricReport reference_metrics(const Mask& predicted, const Mask& truth);

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Gradcheck of every differentiable operation plus a toy end-to-end model,
/// `cases` random cases each (64-bit, h = 1e-3, tolerance 1e-4).
std::vector<CheckResult> run_grad_suite(int cases, std::uint64_t seed);

/// conv2d against direct summation and the dilation law, plus the metric
/// pixel-count oracle, over `cases` random cases each.
std::vector<CheckResult> run_oracle_suite(int cases, std::uint64_t seed);

/// Prints "PASS|FAIL name: detail" per result; returns true when all pass.
bool report(std::span<const CheckResult> results, std::ostream& out);

}  // namespace skinnet::selftest
