#pragma once

#include "uatr/model.hpp"

namespace uatr {

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Bias-corrected Adam update from each parameter's `grad`; increments the
/// step counter.
void adam_step(ModelState& model, double lr, const AdamOptions& options = {});

/// Linear warmup from 0 to base_lr over `warmup` epochs, then half-cosine
/// decay to 0 at max_epoch. `epoch` may be fractional and is clamped to
/// [0, max_epoch].
double lr_schedule(double epoch, double base_lr = 5e-4, double warmup = 5, double max_epoch = 100);

}  // namespace uatr
