#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "skmae/tensor.hpp"

namespace skmae {

// Central-difference gradient check of a scalar function of one tensor.
// Returns max over coordinates of |analytic - numeric| / max(1, |analytic|, |numeric|).
template <typename T>
T finite_difference_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& at, T step) {
    Tensor<T> x = Tensor<T>::from_data(at.shape(), std::vector<T>(at.data().begin(), at.data().end()), true);
    Tensor<T> y = f(x);
    if (!std::isfinite(y.item())) throw NumericError("finite_difference_check: non-finite value at base point");
    y.backward();
    std::vector<T> analytic = x.has_grad() ? std::vector<T>(x.grad().begin(), x.grad().end())
                                           : std::vector<T>(x.numel(), T(0));

    NoGradGuard no_grad;
    std::vector<T> buf(at.data().begin(), at.data().end());
    T worst = 0;
    for (std::size_t i = 0; i < buf.size(); ++i) {
        const T orig = buf[i];
        buf[i] = orig + step;
        const T fp = f(Tensor<T>::from_data(at.shape(), buf)).item();
        buf[i] = orig - step;
        const T fm = f(Tensor<T>::from_data(at.shape(), buf)).item();
        buf[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("finite_difference_check: non-finite value at coordinate " + std::to_string(i));
        }
        const T numeric = (fp - fm) / (T(2) * step);
        const T denom = std::max({T(1), std::abs(analytic[i]), std::abs(numeric)});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

// Same check for a leaf parameter consumed by a loss closure. The parameter's
// values are perturbed in place and restored; its grad is reset first.
template <typename T>
T finite_difference_check(const std::function<Tensor<T>()>& loss, Tensor<T> param, T step) {
    param.zero_grad();
    Tensor<T> y = loss();
    y.backward();
    std::vector<T> analytic = param.has_grad() ? std::vector<T>(param.grad().begin(), param.grad().end())
                                               : std::vector<T>(param.numel(), T(0));
    param.zero_grad();

    NoGradGuard no_grad;
    auto values = param.mutable_data();
    T worst = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        const T orig = values[i];
        values[i] = orig + step;
        const T fp = loss().item();
        values[i] = orig - step;
        const T fm = loss().item();
        values[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericError("finite_difference_check: non-finite value at coordinate " + std::to_string(i));
        }
        const T numeric = (fp - fm) / (T(2) * step);
        const T denom = std::max({T(1), std::abs(analytic[i]), std::abs(numeric)});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace skmae
