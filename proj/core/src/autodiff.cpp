#include "mapn/autodiff.hpp"

#include <algorithm>

#include "mapn/error.hpp"

namespace mapn {

const char* to_string(ParamRole role)
{
    switch (role) {
    case ParamRole::conv3x3: return "conv3x3";
    case ParamRole::conv1x1: return "conv1x1";
    case ParamRole::deconv: return "deconv";
    case ParamRole::conv_bias: return "conv_bias";
    case ParamRole::dense: return "dense";
    case ParamRole::bn_gamma: return "bn_gamma";
    case ParamRole::bn_beta: return "bn_beta";
    case ParamRole::bn_running_mean: return "bn_running_mean";
    case ParamRole::bn_running_var: return "bn_running_var";
    case ParamRole::dc_lambda: return "dc_lambda";
    }
    return "unknown";
}

ParamRole param_role_from_string(const std::string& s)
{
    for (auto r : {ParamRole::conv3x3, ParamRole::conv1x1, ParamRole::deconv, ParamRole::conv_bias,
                   ParamRole::dense, ParamRole::bn_gamma, ParamRole::bn_beta, ParamRole::bn_running_mean,
                   ParamRole::bn_running_var, ParamRole::dc_lambda}) {
        if (s == to_string(r)) return r;
    }
    throw DataError("unknown parameter role '" + s + "'");
}

const Tensor& Var::value() const { return graph->value(id); }

Var Graph::constant(Tensor value) { return leaf(std::move(value), false); }

Var Graph::leaf(Tensor value, bool requires_grad)
{
    nodes_.push_back(Node{"leaf", std::move(value), {}, {}, requires_grad, nullptr});
    return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(Parameter& param, bool requires_grad)
{
    const bool rg = requires_grad && param.trainable();
    nodes_.push_back(Node{"parameter", param.value, {}, {}, rg, rg ? &param : nullptr});
    return Var{this, nodes_.size() - 1};
}

Var Graph::record(std::string op, Tensor value, std::vector<Var> inputs, BackwardFn backward)
{
    Node node;
    node.op = std::move(op);
    node.value = std::move(value);
    for (const auto& in : inputs) {
        if (in.graph != this) throw ConfigError("op '" + node.op + "' mixes nodes from different graphs");
        if (in.id >= nodes_.size()) throw ConfigError("op '" + node.op + "' references a future node");
        node.inputs.push_back(in.id);
        node.requires_grad = node.requires_grad || nodes_[in.id].requires_grad;
    }
    if (node.requires_grad && !backward) {
        throw ConfigError("op '" + node.op + "' has no registered adjoint");
    }
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
    return Var{this, nodes_.size() - 1};
}

Tensor& Graph::grad_slot(std::size_t id)
{
    if (grads_[id].empty() && !nodes_[id].value.empty()) {
        grads_[id] = Tensor::zeros_like(nodes_[id].value);
    }
    return grads_[id];
}

const Tensor& Graph::grad(std::size_t id) { return grad_slot(id); }

Gradients Graph::backward(Var loss)
{
    if (loss.graph != this) throw ConfigError("backward: loss belongs to another graph");
    if (value(loss).size() != 1) {
        throw ConfigError("backward: loss must be scalar, got " + to_string(value(loss).shape()));
    }
    grads_.assign(nodes_.size(), Tensor{});
    grad_slot(loss.id)[0] = 1.0;

    Gradients out;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& node = nodes_[i];
        if (!node.requires_grad || grads_[i].empty()) continue;
        if (node.param) {
            auto [it, inserted] = out.try_emplace(node.param->key, ParamGrad{node.param, grads_[i]});
            if (!inserted) {
                auto& acc = it->second.grad;
                for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += grads_[i][k];
            }
        }
        if (node.backward) node.backward(*this, i);
    }
    return out;
}

Tensor Graph::leaf_grad(Var v) const
{
    if (v.id >= grads_.size() || grads_[v.id].empty()) return Tensor::zeros_like(nodes_.at(v.id).value);
    return grads_[v.id];
}

}  // namespace mapn
