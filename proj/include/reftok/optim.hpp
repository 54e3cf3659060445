#pragma once

// AdamW with decoupled weight decay, plus the warmup+cosine learning-rate
// schedule used by both trainers.

#include <cmath>
#include <numbers>

#include "reftok/nn.hpp"

namespace reftok {

struct AdamWConfig {
    float lr = 1e-4f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    float weight_decay = 1e-4f;
};

class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    // Applies one update from the accumulated grads, then advances the
    // internal step count used for bias correction.
    void step(ParamStore& ps, float lr) {
        ++t_;
        const float bc1 = 1.f - std::pow(cfg_.beta1, static_cast<float>(t_));
        const float bc2 = 1.f - std::pow(cfg_.beta2, static_cast<float>(t_));
        for (auto* p : ps.all()) {
            if (!p->trainable) continue;
            p->adam_m = cfg_.beta1 * p->adam_m + (1.f - cfg_.beta1) * p->grad;
            p->adam_v = cfg_.beta2 * p->adam_v.array() + (1.f - cfg_.beta2) * p->grad.array().square();
            MatF mhat = p->adam_m / bc1;
            MatF vhat = p->adam_v / bc2;
            p->value.array() -= lr * (mhat.array() / (vhat.array().sqrt() + cfg_.eps) +
                                      cfg_.weight_decay * p->value.array());
        }
    }

    const AdamWConfig& config() const { return cfg_; }
    long step_count() const { return t_; }
    void set_step_count(long t) { t_ = t; }

private:
    AdamWConfig cfg_;
    long t_ = 0;
};

// Linear warmup from 0 over warmup_steps, then cosine decay to 0 at
// total_steps. step is 0-based; step >= total_steps returns 0.
inline float lr_at(long step, long total_steps, long warmup_steps, float base_lr) {
    if (step < warmup_steps)
        return base_lr * static_cast<float>(step + 1) / static_cast<float>(warmup_steps);
    if (step >= total_steps) return 0.f;
    double progress = static_cast<double>(step - warmup_steps) /
                      static_cast<double>(std::max<long>(1, total_steps - warmup_steps));
    return base_lr * 0.5f * (1.f + static_cast<float>(std::cos(std::numbers::pi * progress)));
}

}  // namespace reftok
