#include "dsct/optim.hpp"

#include <cmath>

namespace dsct {

Tensor ParameterStore::add(const std::string& name, Tensor t) {
    if (index_.count(name))
        throw ContractError("duplicate parameter name: " + name);
    t.set_requires_grad(true);
    index_[name] = params_.size();
    params_.push_back({name, t});
    return t;
}

Tensor ParameterStore::find(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return params_[it->second].tensor;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

real cosine_power_lr(long long step, long long total_steps, real base_lr, real power) {
    if (total_steps <= 0) return base_lr;
    if (step < 0) step = 0;
    if (step > total_steps) step = total_steps;
    const real phase = static_cast<real>(step) / static_cast<real>(total_steps);
    const real c = real(0.5) * (real(1) + std::cos(real(M_PI) * phase));
    return base_lr * std::pow(c, power);
}

void AdamW::step(ParameterStore& params, real lr) {
    if (m_.size() != params.size()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            m_[i].assign(params.at(i).tensor.numel(), real(0));
            v_[i].assign(params.at(i).tensor.numel(), real(0));
        }
    }
    ++t_;
    const real bc1 = real(1) - std::pow(beta1, static_cast<real>(t_));
    const real bc2 = real(1) - std::pow(beta2, static_cast<real>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        auto& p = params.at(i).tensor;
        auto& w = p.mutable_values();
        const std::vector<real>* g = p.has_grad() ? &p.grad() : nullptr;
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t j = 0; j < w.size(); ++j) {
            const real gj = g ? (*g)[j] : real(0);
            m[j] = beta1 * m[j] + (real(1) - beta1) * gj;
            v[j] = beta2 * v[j] + (real(1) - beta2) * gj * gj;
            const real mhat = m[j] / bc1;
            const real vhat = v[j] / bc2;
            w[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * w[j]);
        }
    }
}

AdamW::State AdamW::state() const { return {t_, m_, v_}; }

void AdamW::restore(const State& s) {
    t_ = s.t;
    m_ = s.m;
    v_ = s.v;
}

}  // namespace dsct
