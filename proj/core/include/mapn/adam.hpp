#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "mapn/autodiff.hpp"

namespace mapn {

struct AdamOptions {
    double lr = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moment estimates of one parameter. `step` counts the updates this parameter received.
struct AdamSlot {
    std::int64_t step = 0;
    Tensor m;
    Tensor v;
};

/// Adam with bias correction. Parameters without a gradient in a step are left
/// untouched, including their moments.
class Adam {
public:
    explicit Adam(AdamOptions options = {}) : options_(options) {}

    /// Applies one update to every parameter in `grads`. A non-finite gradient aborts
    /// the whole step before any parameter is modified.
    void step(const Gradients& grads);

    void reset_moments(const std::string& key) { slots_.erase(key); }

    const AdamOptions& options() const noexcept { return options_; }
    std::map<std::string, AdamSlot>& slots() noexcept { return slots_; }
    const std::map<std::string, AdamSlot>& slots() const noexcept { return slots_; }

private:
    AdamOptions options_;
    std::map<std::string, AdamSlot> slots_;
};

}  // namespace mapn
