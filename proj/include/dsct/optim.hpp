#pragma once

#include <vector>

#include "dsct/params.hpp"
#include "dsct/tensor.hpp"

namespace dsct {

// lr(step) = base_lr * (0.5*(1 + cos(pi*step/total)))^power, clamped past the
// end of the schedule.
real cosine_power_lr(long long step, long long total_steps, real base_lr = real(2e-4),
                     real power = real(0.8));

// AdamW with decoupled weight decay. Parameters without a populated gradient
// are treated as having zero gradient (moments still decay, weights still
// shrink). State is keyed by parameter index in the store.
class AdamW {
public:
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real eps = real(1e-8);
    real weight_decay = real(0.01);

    void step(ParameterStore& params, real lr);
    long long step_count() const { return t_; }

    // Checkpoint support.
    struct State {
        long long t = 0;
        std::vector<std::vector<real>> m, v;
    };
    State state() const;
    void restore(const State& s);

private:
    long long t_ = 0;
    std::vector<std::vector<real>> m_, v_;
};

}  // namespace dsct
