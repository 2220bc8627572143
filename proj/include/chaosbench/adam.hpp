#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "chaosbench/params.hpp"
#include "chaosbench/tensor.hpp"

namespace chaosbench {

// Global-norm gradient clipping. Returns the pre-clip norm; when it exceeds
// max_norm every gradient is scaled by max_norm / norm.
inline double clip_grad_norm(std::vector<Tensor>& grads, double max_norm) {
    double sq = 0.0;
    for (const Tensor& g : grads)
        for (std::int64_t i = 0; i < g.numel(); ++i) sq += g[i] * g[i];
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double s = max_norm / norm;
        for (Tensor& g : grads)
            for (std::int64_t i = 0; i < g.numel(); ++i) g[i] *= s;
    }
    return norm;
}

// Adam with bias correction and decoupled weight decay (the decay term is
// applied directly to the parameter, not mixed into the moment estimates).
class Adam {
public:
    Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
         double weight_decay = 0.0)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

    void step(ParameterSet& params, const std::vector<Tensor>& grads) {
        if (grads.size() != params.size())
            throw ContractError("Adam: gradient count does not match parameter count");
        if (m_.empty()) {
            m_.reserve(params.size());
            v_.reserve(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                m_.push_back(Tensor::zeros(params.entry(i).value.shape()));
                v_.push_back(Tensor::zeros(params.entry(i).value.shape()));
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = params.entry(i).value;
            const Tensor& g = grads[i];
            if (!p.same_shape(g)) throw ShapeError("Adam: grad shape mismatch for " + params.entry(i).name);
            Tensor &m = m_[i], &v = v_[i];
            for (std::int64_t j = 0; j < p.numel(); ++j) {
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                p[j] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p[j]);
            }
        }
    }

    std::int64_t steps_taken() const { return t_; }
    double lr() const { return lr_; }

private:
    double lr_, beta1_, beta2_, eps_, weight_decay_;
    std::int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace chaosbench
