#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mapn/parameter.hpp"
#include "mapn/tensor.hpp"

namespace mapn {

class Graph;

/// Handle to a node of a Graph.
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
};

struct ParamGrad {
    Parameter* param = nullptr;
    Tensor grad;
};

/// Gradients of a scalar loss, keyed by Parameter::key.
using Gradients = std::map<std::string, ParamGrad>;

/// Tape of recorded operations. Nodes are appended in evaluation order, so the
/// reverse of creation order is a valid topological order for the backward pass.
class Graph {
public:
    using BackwardFn = std::function<void(Graph&, std::size_t)>;

    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    Var leaf(Tensor value, bool requires_grad);
    /// Reads the current value of `param`; gradients flow back to it when `requires_grad`.
    Var parameter(Parameter& param, bool requires_grad = true);

    /// Appends an op node. `backward` reads grad(node) and accumulates into its inputs.
    Var record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward);

    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    const Tensor& value(Var v) const { return value(v.id); }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
    const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    bool requires_grad(Var v) const { return requires_grad(v.id); }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Output gradient of `id` during backward (zeros if none arrived).
    const Tensor& grad(std::size_t id);
    /// Accumulation buffer for `id`, allocated on first use.
    Tensor& grad_slot(std::size_t id);

    /// Reverse-mode sweep from a scalar node. Returns parameter gradients; leaf
    /// gradients stay retrievable through leaf_grad().
    Gradients backward(Var loss);

    /// Gradient of a leaf created with requires_grad=true, after backward().
    Tensor leaf_grad(Var v) const;

private:
    struct Node {
        std::string op;
        Tensor value;
        std::vector<std::size_t> inputs;
        BackwardFn backward;
        bool requires_grad = false;
        Parameter* param = nullptr;
    };

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
};

}  // namespace mapn
