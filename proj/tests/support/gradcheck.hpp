#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mapn/autodiff.hpp"
#include "mapn/ops.hpp"
#include "mapn/random.hpp"

namespace mapn::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

/// Builds an op from leaf inputs; returns the (non-scalar) output.
using OpBuilder = std::function<Var(Graph&, const std::vector<Var>&)>;

/// Compares reverse-mode gradients of sum(probe * op(inputs)) against central finite
/// differences. Returns the largest elementwise relative error over all differentiable
/// inputs, with relative error |a - n| / max(|a|, |n|, floor).
inline double gradcheck(const OpBuilder& op, const std::vector<Tensor>& inputs, const std::vector<bool>& differentiable,
                        std::uint64_t seed = 7, double h = 1e-5, double floor = 1e-3)
{
    Rng rng(seed);
    Tensor probe;
    auto loss_of = [&](const std::vector<Tensor>& xs) {
        Graph g;
        std::vector<Var> vars;
        for (const auto& x : xs) vars.push_back(g.leaf(x, false));
        Var out = op(g, vars);
        if (probe.empty()) probe = random_tensor(out.value().shape(), rng, 0.5, 1.5);
        double s = 0.0;
        for (std::size_t i = 0; i < probe.size(); ++i) s += probe[i] * out.value()[i];
        return s;
    };
    loss_of(inputs);  // fixes the probe

    Graph g;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(g.leaf(inputs[i], differentiable[i]));
    Var out = op(g, vars);
    Var weighted = g.record("probe", Tensor::scalar([&] {
        double s = 0.0;
        for (std::size_t i = 0; i < probe.size(); ++i) s += probe[i] * out.value()[i];
        return s;
    }()), {out}, [p = probe](Graph& graph, std::size_t self) {
        const auto in = graph.inputs(self)[0];
        const double gy = graph.grad(self)[0];
        Tensor& d = graph.grad_slot(in);
        for (std::size_t i = 0; i < p.size(); ++i) d[i] += gy * p[i];
    });
    g.backward(weighted);

    double worst = 0.0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        if (!differentiable[k]) continue;
        const Tensor analytic = g.leaf_grad(vars[k]);
        for (std::size_t i = 0; i < inputs[k].size(); ++i) {
            auto plus = inputs;
            auto minus = inputs;
            plus[k][i] += h;
            minus[k][i] -= h;
            const double numeric = (loss_of(plus) - loss_of(minus)) / (2.0 * h);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
            worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace mapn::testing
