#include "skinnet/objective.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <stdexcept>

namespace skinnet {

bool Mask::is_binary() const {
    return std::all_of(data.begin(), data.end(), [](std::uint8_t v) { return v <= 1; });
}

template <typename Real>
Tensor<Real> dice_loss(const Tensor<Real>& target, const Tensor<Real>& prediction, Tape<Real>* tape) {
    if (target.shape() != prediction.shape())
        throw ShapeError("dice_loss: target " + shape_str(target.shape()) + " vs prediction " +
                         shape_str(prediction.shape()));
    if (prediction.rank() != 4) throw ShapeError("dice_loss: expected (B,K,H,W) tensors");
    const std::size_t B = prediction.dim(0), K = prediction.dim(1), plane = prediction.dim(2) * prediction.dim(3);
    if (K < 2) throw ShapeError("dice_loss: need at least 2 classes");

    // Per-class sums in double regardless of Real.
    std::vector<double> overlap(K, 0.0), truth(K, 0.0), predicted(K, 0.0);
    const Real* y = target.data().data();
    const Real* p = prediction.data().data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < K; ++k) {
            const std::size_t base = (b * K + k) * plane;
            for (std::size_t n = 0; n < plane; ++n) {
                overlap[k] += static_cast<double>(y[base + n]) * static_cast<double>(p[base + n]);
                truth[k] += static_cast<double>(y[base + n]);
                predicted[k] += static_cast<double>(p[base + n]);
            }
        }

    double loss = 1.0;
    std::vector<double> numer(K), denom(K);
    for (std::size_t k = 0; k < K; ++k) {
        numer[k] = overlap[k] + kDiceSmoothing;
        denom[k] = truth[k] + predicted[k] + kDiceSmoothing;
        loss -= numer[k] / denom[k];
    }
    Tensor<Real> out = Tensor<Real>::scalar(static_cast<Real>(loss));

    if (tape && prediction.requires_grad()) {
        out.set_requires_grad(true);
        tape->record({prediction}, out, [target, prediction = prediction, out, B, K, plane, numer, denom]() mutable {
            const double g = static_cast<double>(out.grad()[0]);
            const Real* y = target.data().data();
            Real* gp = prediction.grad().data();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t k = 0; k < K; ++k) {
                    const std::size_t base = (b * K + k) * plane;
                    const double inv = 1.0 / denom[k];
                    const double ratio = numer[k] * inv * inv;
                    for (std::size_t n = 0; n < plane; ++n)
                        gp[base + n] += static_cast<Real>(-g * (static_cast<double>(y[base + n]) * inv - ratio));
                }
        });
    }
    return out;
}

ConfusionCounts confusion(const Mask& predicted, const Mask& truth) {
    if (predicted.height != truth.height || predicted.width != truth.width)
        throw std::invalid_argument("confusion: mask extents differ");
    if (!predicted.is_binary() || !truth.is_binary()) throw std::invalid_argument("confusion: masks must be binary");
    ConfusionCounts c;
    for (std::size_t i = 0; i < truth.data.size(); ++i) {
        const bool p = predicted.data[i] != 0, t = truth.data[i] != 0;
        if (p && t) ++c.tp;
        else if (p) ++c.fp;
        else if (t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

namespace {

double ratio_or_agreement(std::uint64_t num, std::uint64_t den, bool agrees) {
    if (den == 0) return agrees ? 1.0 : 0.0;
    return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricReport metrics(const ConfusionCounts& c) {
    const std::uint64_t total = c.total();
    if (total == 0) throw std::invalid_argument("metrics: no pixels counted");
    MetricReport r;
    r.ac = static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
    // Empty union: both masks empty, so they agree.
    r.dc = ratio_or_agreement(2 * c.tp, 2 * c.tp + c.fp + c.fn, true);
    r.ji = ratio_or_agreement(c.tp, c.tp + c.fp + c.fn, true);
    r.se = ratio_or_agreement(c.tp, c.tp + c.fn, c.fp == 0);
    r.sp = ratio_or_agreement(c.tn, c.tn + c.fp, c.fn == 0);
    return r;
}

MetricReport mean_report(std::span<const MetricReport> reports) {
    if (reports.empty()) throw std::invalid_argument("mean_report: no reports");
    MetricReport m;
    for (const auto& r : reports) {
        m.ac += r.ac;
        m.dc += r.dc;
        m.ji += r.ji;
        m.se += r.se;
        m.sp += r.sp;
    }
    const double n = static_cast<double>(reports.size());
    m.ac /= n;
    m.dc /= n;
    m.ji /= n;
    m.se /= n;
    m.sp /= n;
    return m;
}

std::string to_csv_row(const MetricReport& r) {
    return fmt::format("{:.4f},{:.4f},{:.4f},{:.4f},{:.4f}", r.ac, r.dc, r.ji, r.se, r.sp);
}

template <typename Real>
std::vector<Mask> binarize(const Tensor<Real>& probabilities, double threshold) {
    if (probabilities.rank() != 4 || probabilities.dim(1) != 2)
        throw ShapeError("binarize: expected (B,2,H,W), got " + shape_str(probabilities.shape()));
    const std::size_t B = probabilities.dim(0), H = probabilities.dim(2), W = probabilities.dim(3);
    std::vector<Mask> masks;
    masks.reserve(B);
    for (std::size_t b = 0; b < B; ++b) {
        Mask m(H, W);
        const Real* lesion = probabilities.data().data() + (b * 2 + 1) * H * W;
        for (std::size_t i = 0; i < H * W; ++i) m.data[i] = static_cast<double>(lesion[i]) >= threshold ? 1 : 0;
        masks.push_back(std::move(m));
    }
    return masks;
}

template Tensor<float> dice_loss(const Tensor<float>&, const Tensor<float>&, Tape<float>*);
template Tensor<double> dice_loss(const Tensor<double>&, const Tensor<double>&, Tape<double>*);
template std::vector<Mask> binarize(const Tensor<float>&, double);
template std::vector<Mask> binarize(const Tensor<double>&, double);

}  // namespace skinnet
