#include <algorithm>
#include <cmath>
#include <numbers>

#include "uatr/error.hpp"
#include "uatr/optim.hpp"

namespace uatr {

void adam_step(ModelState& model, double lr, const AdamOptions& o) {
    for (const auto& p : model.params) guard_finite(p.grad, "adam_step gradient");
    ++model.step;
    const double t = static_cast<double>(model.step);
    const double c1 = 1.0 - std::pow(o.beta1, t);
    const double c2 = 1.0 - std::pow(o.beta2, t);
    for (auto& p : model.params) {
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            p.m[i] = o.beta1 * p.m[i] + (1.0 - o.beta1) * g;
            p.v[i] = o.beta2 * p.v[i] + (1.0 - o.beta2) * g * g;
            const double m_hat = p.m[i] / c1;
            const double v_hat = p.v[i] / c2;
            p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + o.eps);
        }
        guard_finite(p.value, "adam_step update");
    }
}

double lr_schedule(double epoch, double base_lr, double warmup, double max_epoch) {
    epoch = std::clamp(epoch, 0.0, max_epoch);
    if (epoch < warmup) return base_lr * epoch / warmup;
    if (max_epoch <= warmup) return base_lr;
    const double progress = (epoch - warmup) / (max_epoch - warmup);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace uatr
