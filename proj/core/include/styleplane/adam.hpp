#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "styleplane/autodiff.hpp"

namespace styleplane {

template <class T>
struct AdamHyper {
    T lr = T(0.002);
    T beta1 = T(0);
    T beta2 = T(0.99);
    T eps = T(1e-8);
};

// Bias-corrected Adam state for one parameter tensor.
template <class T>
struct AdamState {
    Tensor<T> m;
    Tensor<T> u;
    std::int64_t step = 0;

    explicit AdamState(const std::vector<int>& shape)
        : m(Tensor<T>::zeros(shape)), u(Tensor<T>::zeros(shape)) {}
};

// Applies one update in place. Returns false (and leaves the parameter and
// state untouched) when the gradient contains non-finite values.
template <class T>
bool adam_step(Tensor<T>& param, const Tensor<T>& grad, AdamState<T>& st, const AdamHyper<T>& hp) {
    if (!param.same_shape(grad) || !param.same_shape(st.m)) {
        throw std::invalid_argument("adam_step: shape mismatch param=" + param.shape_str() +
                                    " grad=" + grad.shape_str());
    }
    if (!grad.all_finite()) return false;
    st.step += 1;
    const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(hp.beta1), static_cast<double>(st.step)));
    const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(hp.beta2), static_cast<double>(st.step)));
    const std::size_t n = param.numel();
    for (std::size_t i = 0; i < n; ++i) {
        const T g = grad[i];
        st.m[i] = hp.beta1 * st.m[i] + (T(1) - hp.beta1) * g;
        st.u[i] = hp.beta2 * st.u[i] + (T(1) - hp.beta2) * g * g;
        const T mhat = st.m[i] / bc1;
        const T uhat = st.u[i] / bc2;
        param[i] -= hp.lr * mhat / (std::sqrt(uhat) + hp.eps);
    }
    return true;
}

// Optimizer over a set of leaf Vars. Skipped updates (non-finite gradients)
// are counted rather than thrown.
template <class T>
class AdamOptimizer {
public:
    AdamOptimizer(std::vector<Var<T>> params, AdamHyper<T> hp) : params_(std::move(params)), hp_(hp) {
        states_.reserve(params_.size());
        for (const auto& p : params_) states_.emplace_back(p.value().shape());
    }

    void step() {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            if (!params_[i].has_grad()) continue;
            if (!adam_step(params_[i].mutable_value(), params_[i].grad(), states_[i], hp_)) {
                ++skipped_;
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

    std::size_t skipped_updates() const { return skipped_; }
    const AdamHyper<T>& hyper() const { return hp_; }
    void set_lr(T lr) { hp_.lr = lr; }

private:
    std::vector<Var<T>> params_;
    std::vector<AdamState<T>> states_;
    AdamHyper<T> hp_;
    std::size_t skipped_ = 0;
};

}  // namespace styleplane
