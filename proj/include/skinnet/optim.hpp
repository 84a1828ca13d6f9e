#pragma once

#include <limits>
#include <span>
#include <vector>

#include "skinnet/tensor.hpp"

namespace skinnet {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment estimates for a fixed list of parameters.
template <typename Real>
class AdamState {
public:
    AdamState(std::span<const Tensor<Real>> params, AdamConfig config = {});

    const AdamConfig& config() const { return config_; }
    double lr() const { return config_.lr; }
    void set_lr(double lr) { config_.lr = lr; }
    std::uint64_t step() const { return step_; }

    std::span<const Real> first_moment(std::size_t i) const { return m_[i]; }
    std::span<const Real> second_moment(std::size_t i) const { return v_[i]; }

    template <typename R>
    friend void adam_step(std::span<Tensor<R>> params, AdamState<R>& state);

private:
    AdamConfig config_;
    std::uint64_t step_ = 0;
    std::vector<std::vector<Real>> m_;
    std::vector<std::vector<Real>> v_;
};

/// One bias-corrected Adam update from the gradients stored on `params`.
template <typename Real>
void adam_step(std::span<Tensor<Real>> params, AdamState<Real>& state);

/// Multiplies the rate by `factor` once validation loss has failed to improve
/// by more than `threshold` for `patience` consecutive epochs.
class PlateauSchedule {
public:
    struct Options {
        double factor = 0.5;
        int patience = 5;
        double min_lr = 1e-6;
        double threshold = 1e-4;
    };

    explicit PlateauSchedule(double initial_lr) : PlateauSchedule(initial_lr, Options{}) {}
    PlateauSchedule(double initial_lr, Options options);

    /// Feed one epoch's validation loss; returns the rate for the next epoch.
    double update(double val_loss);

    double lr() const { return lr_; }
    const Options& options() const { return options_; }

private:
    Options options_;
    double lr_;
    double best_ = std::numeric_limits<double>::infinity();
    int stale_epochs_ = 0;
};

}  // namespace skinnet
