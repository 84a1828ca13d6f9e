#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "skinnet/tensor.hpp"

namespace skinnet {

/// Binary H x W mask, lesion = 1.
struct Mask {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), data(h * w, fill) {}

    std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
    bool is_binary() const;
    bool operator==(const Mask&) const = default;
};

/// Smoothing added to numerator and denominator of every class term.
inline constexpr double kDiceSmoothing = 1e-7;

/// 1 - sum_k (sum_n y_nk p_nk + eps) / (sum_n y_nk + sum_n p_nk + eps), with n
/// running over every pixel of every batch image. `target` is one-hot (B,K,H,W).
/// Differentiable in `prediction` only.
template <typename Real>
Tensor<Real> dice_loss(const Tensor<Real>& target, const Tensor<Real>& prediction, Tape<Real>* tape = nullptr);

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t fp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const { return tp + fp + tn + fn; }
    bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(const Mask& predicted, const Mask& truth);

struct MetricReport {
    double ac = 0;  // accuracy
    double dc = 0;  // Dice coefficient
    double ji = 0;  // Jaccard index
    double se = 0;  // sensitivity
    double sp = 0;  // specificity
};

/// A ratio whose denominator is zero scores 1 when the prediction agrees with
/// the (empty) reference and 0 otherwise.
MetricReport metrics(const ConfusionCounts& counts);

MetricReport mean_report(std::span<const MetricReport> reports);

inline constexpr const char* kMetricCsvHeader = "ac,dc,ji,se,sp";
/// "ac,dc,ji,se,sp" with four decimals each.
std::string to_csv_row(const MetricReport& report);

/// Lesion mask per batch image from (B,2,H,W) probabilities: channel 1 >= threshold.
template <typename Real>
std::vector<Mask> binarize(const Tensor<Real>& probabilities, double threshold = 0.5);

}  // namespace skinnet
