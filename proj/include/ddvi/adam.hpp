#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ddvi/tensor.hpp"

namespace ddvi {

// Per-parameter-vector Adam state with bias correction.
struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    std::int64_t step_count = 0;
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static AdamState for_size(std::size_t n, double lr) {
        AdamState s;
        s.m.assign(n, 0.0);
        s.v.assign(n, 0.0);
        s.lr = lr;
        return s;
    }
};

inline void adam_step(Tensor& params, const Tensor& grads, AdamState& state) {
    detail::check(params.numel() == grads.numel(), "adam_step: param/grad length mismatch");
    detail::check(params.numel() == state.m.size() && params.numel() == state.v.size(),
                  "adam_step: state length mismatch");
    state.step_count += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
    for (std::size_t i = 0; i < params.numel(); ++i) {
        const double g = grads.data[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        const double m_hat = state.m[i] / c1;
        const double v_hat = state.v[i] / c2;
        params.data[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
}

// Convenience wrapper that keeps one AdamState per named parameter tensor.
class Adam {
public:
    Adam() = default;

    explicit Adam(double lr) : lr_(lr) {}

    void step(std::vector<Tensor*> params, const std::vector<Tensor>& grads) {
        detail::check(params.size() == grads.size(), "Adam::step: param/grad count mismatch");
        if (states_.empty()) {
            states_.reserve(params.size());
            for (const Tensor* p : params) states_.push_back(AdamState::for_size(p->numel(), lr_));
        }
        detail::check(states_.size() == params.size(), "Adam::step: parameter set changed");
        for (std::size_t i = 0; i < params.size(); ++i) adam_step(*params[i], grads[i], states_[i]);
    }

    double lr() const { return lr_; }
    void set_lr(double lr) {
        lr_ = lr;
        for (auto& s : states_) s.lr = lr;
    }

private:
    double lr_ = 1e-4;
    std::vector<AdamState> states_;
};

}  // namespace ddvi
