#include "mapn/adam.hpp"

#include <cmath>

#include "mapn/error.hpp"

namespace mapn {

void Adam::step(const Gradients& grads)
{
    for (const auto& [key, pg] : grads) {
        if (!pg.grad.all_finite()) throw NumericError("adam: non-finite gradient for '" + key + "'");
        require_same_shape(pg.param->value, pg.grad, "adam");
    }
    for (const auto& [key, pg] : grads) {
        auto& slot = slots_[key];
        if (slot.m.empty()) {
            slot.m = Tensor::zeros_like(pg.grad);
            slot.v = Tensor::zeros_like(pg.grad);
        }
        ++slot.step;
        const double t = static_cast<double>(slot.step);
        const double c1 = 1.0 - std::pow(options_.beta1, t);
        const double c2 = 1.0 - std::pow(options_.beta2, t);
        Tensor& p = pg.param->value;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = pg.grad[i];
            slot.m[i] = options_.beta1 * slot.m[i] + (1.0 - options_.beta1) * g;
            slot.v[i] = options_.beta2 * slot.v[i] + (1.0 - options_.beta2) * g * g;
            const double mhat = slot.m[i] / c1;
            const double vhat = slot.v[i] / c2;
            p[i] -= options_.lr * mhat / (std::sqrt(vhat) + options_.eps);
        }
    }
}

}  // namespace mapn
