#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "skmae/tensor.hpp"

namespace skmae {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
void zero_grads(NamedParams<T>& params) {
    for (auto& [name, p] : params) p.zero_grad();
}

// Adam with bias correction. Moments are exposed for checkpointing.
template <typename T>
class Adam {
   public:
    struct Options {
        double lr = 1.5e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    Adam(NamedParams<T> params, Options opt) : params_(std::move(params)), opt_(opt) {
        for (auto& [name, p] : params_) {
            m_.emplace_back(p.numel(), T(0));
            v_.emplace_back(p.numel(), T(0));
        }
    }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
        const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
        const T lr = static_cast<T>(opt_.lr);
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k].second;
            if (!p.has_grad()) continue;
            auto g = p.grad();
            auto w = p.mutable_data();
            for (std::size_t i = 0; i < w.size(); ++i) {
                m_[k][i] = b1 * m_[k][i] + (T(1) - b1) * g[i];
                v_[k][i] = b2 * v_[k][i] + (T(1) - b2) * g[i] * g[i];
                const T mhat = m_[k][i] / static_cast<T>(c1);
                const T vhat = v_[k][i] / static_cast<T>(c2);
                w[i] -= lr * mhat / (std::sqrt(vhat) + static_cast<T>(opt_.eps));
            }
        }
    }

    void zero_grad() { zero_grads(params_); }

    long step_count() const { return t_; }
    void set_step_count(long t) { t_ = t; }
    std::vector<std::vector<T>>& first_moments() { return m_; }
    std::vector<std::vector<T>>& second_moments() { return v_; }
    const NamedParams<T>& params() const { return params_; }

   private:
    NamedParams<T> params_;
    Options opt_;
    long t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

// SGD with (non-Nesterov) momentum: buf = mu*buf + g; w -= lr*buf.
// With max_norm > 0 the gradient is first rescaled so its global L2 norm is
// at most max_norm.
template <typename T>
class SgdMomentum {
   public:
    SgdMomentum(NamedParams<T> params, double momentum) : params_(std::move(params)), momentum_(momentum) {
        for (auto& [name, p] : params_) buf_.emplace_back(p.numel(), T(0));
    }

    void step(double lr, double max_norm = 0.0) {
        const T mu = static_cast<T>(momentum_);
        const T rate = static_cast<T>(lr);
        T scale = T(1);
        if (max_norm > 0.0) {
            const double norm = grad_norm();
            if (norm > max_norm) scale = static_cast<T>(max_norm / norm);
        }
        for (std::size_t k = 0; k < params_.size(); ++k) {
            auto& p = params_[k].second;
            if (!p.has_grad()) continue;
            auto g = p.grad();
            auto w = p.mutable_data();
            for (std::size_t i = 0; i < w.size(); ++i) {
                buf_[k][i] = mu * buf_[k][i] + scale * g[i];
                w[i] -= rate * buf_[k][i];
            }
        }
    }

    void zero_grad() { zero_grads(params_); }

    double grad_norm() const {
        double sq = 0.0;
        for (const auto& [name, p] : params_) {
            if (!p.has_grad()) continue;
            for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
        }
        return std::sqrt(sq);
    }

   private:
    NamedParams<T> params_;
    double momentum_;
    std::vector<std::vector<T>> buf_;
};

}  // namespace skmae
