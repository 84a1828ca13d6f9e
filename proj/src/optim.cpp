#include "skinnet/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>

namespace skinnet {

template <typename Real>
AdamState<Real>::AdamState(std::span<const Tensor<Real>> params, AdamConfig config) : config_(config) {
    if (!(config.lr > 0) || config.beta1 < 0 || config.beta1 >= 1 || config.beta2 < 0 || config.beta2 >= 1 ||
        !(config.eps > 0))
        throw std::invalid_argument("AdamState: invalid hyperparameters");
    for (const auto& p : params) {
        m_.emplace_back(p.numel(), Real(0));
        v_.emplace_back(p.numel(), Real(0));
    }
}

template <typename Real>
void adam_step(std::span<Tensor<Real>> params, AdamState<Real>& state) {
    if (params.size() != state.m_.size())
        throw ShapeError("adam_step: optimizer tracks " + std::to_string(state.m_.size()) + " tensors, got " +
                         std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].numel() != state.m_[i].size())
            throw ShapeError("adam_step: parameter " + std::to_string(i) + " changed size");
        if (!params[i].has_grad()) throw std::invalid_argument("adam_step: parameter " + std::to_string(i) + " has no gradient");
    }

    const AdamConfig& c = state.config_;
    state.step_ += 1;
    const double t = static_cast<double>(state.step_);
    const double correction1 = 1.0 - std::pow(c.beta1, t);
    const double correction2 = 1.0 - std::pow(c.beta2, t);
    const Real b1 = static_cast<Real>(c.beta1), b2 = static_cast<Real>(c.beta2);

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto theta = params[i].data();
        auto g = std::as_const(params[i]).grad();
        auto& m = state.m_[i];
        auto& v = state.v_[i];
        for (std::size_t j = 0; j < theta.size(); ++j) {
            m[j] = b1 * m[j] + (Real(1) - b1) * g[j];
            v[j] = b2 * v[j] + (Real(1) - b2) * g[j] * g[j];
            const double m_hat = static_cast<double>(m[j]) / correction1;
            const double v_hat = static_cast<double>(v[j]) / correction2;
            theta[j] = static_cast<Real>(static_cast<double>(theta[j]) - c.lr * m_hat / (std::sqrt(v_hat) + c.eps));
        }
    }
}

PlateauSchedule::PlateauSchedule(double initial_lr, Options options) : options_(options), lr_(initial_lr) {
    if (!(initial_lr > 0) || !(options.factor > 0 && options.factor < 1) || options.patience < 1 ||
        options.min_lr < 0)
        throw std::invalid_argument("PlateauSchedule: invalid options");
    lr_ = std::max(lr_, options_.min_lr);
}

double PlateauSchedule::update(double val_loss) {
    if (val_loss < best_ - options_.threshold) {
        best_ = val_loss;
        stale_epochs_ = 0;
    } else if (++stale_epochs_ >= options_.patience) {
        lr_ = std::max(lr_ * options_.factor, options_.min_lr);
        stale_epochs_ = 0;
    }
    return lr_;
}

template class AdamState<float>;
template class AdamState<double>;
template void adam_step(std::span<Tensor<float>>, AdamState<float>&);
template void adam_step(std::span<Tensor<double>>, AdamState<double>&);

}  // namespace skinnet
