#ifndef D2G_CORE_OPTIM_HPP
#define D2G_CORE_OPTIM_HPP

#include <cmath>
#include <vector>

#include "d2g/core/nn.hpp"

namespace d2g {

// Adam with decoupled weight decay. State is laid out in ParamStore order.
class Adam {
public:
    Adam(ParamStore& ps, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8, double weight_decay = 0.0)
        : ps_(ps), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {
        for (auto& [name, v] : ps.items()) {
            m_.emplace_back(v->val.n(), v->val.c(), v->val.h(), v->val.w());
            v_.emplace_back(v->val.n(), v->val.c(), v->val.h(), v->val.w());
        }
    }

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

    void zero_grad() { ps_.zero_grad(); }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (size_t p = 0; p < ps_.size(); ++p) {
            Var& var = ps_.items()[p].second;
            if (var->grad.empty()) continue;
            Tensor& w = var->val;
            const Tensor& g = var->grad;
            Tensor& m = m_[p];
            Tensor& v = v_[p];
            for (size_t i = 0; i < w.size(); ++i) {
                m[i] = b1_ * m[i] + (1.0 - b1_) * g[i];
                v[i] = b2_ * v[i] + (1.0 - b2_) * g[i] * g[i];
                double mhat = m[i] / bc1;
                double vhat = v[i] / bc2;
                w[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[i]);
            }
        }
    }

private:
    ParamStore& ps_;
    double lr_, b1_, b2_, eps_, wd_;
    int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
};

// Exponential moving average of a parameter set.
struct EmaState {
    std::vector<Tensor> shadow;
    double beta = 0.9999;
    int64_t steps = 0;

    static EmaState init(const ParamStore& ps, double beta) {
        EmaState s;
        s.beta = beta;
        for (const auto& [name, v] : ps.items()) s.shadow.push_back(v->val);
        return s;
    }

    void update(const ParamStore& ps) {
        if (shadow.size() != ps.size()) throw std::invalid_argument("ema: param count mismatch");
        for (size_t p = 0; p < shadow.size(); ++p) {
            const Tensor& w = ps.item(p).second->val;
            if (!shadow[p].same_shape(w)) throw std::invalid_argument("ema: shape mismatch");
            Tensor& s = shadow[p];
            for (size_t i = 0; i < s.size(); ++i) s[i] = beta * s[i] + (1.0 - beta) * w[i];
        }
        ++steps;
    }

    void write_to(ParamStore& ps) const {
        for (size_t p = 0; p < shadow.size(); ++p) ps.items()[p].second->val = shadow[p];
    }
};

// shadow <- beta*shadow + (1-beta)*weights, the single-tensor form
inline void ema_update(Tensor& shadow, const Tensor& weights, double beta) {
    if (!shadow.same_shape(weights)) throw std::invalid_argument("ema_update: shape mismatch");
    for (size_t i = 0; i < shadow.size(); ++i) {
        shadow[i] = beta * shadow[i] + (1.0 - beta) * weights[i];
    }
}

}  // namespace d2g

#endif
