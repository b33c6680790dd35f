#pragma once

#include <string>

#include "mapn/tensor.hpp"

namespace mapn {

enum class ParamRole {
    conv3x3,
    conv1x1,
    deconv,
    conv_bias,
    dense,
    bn_gamma,
    bn_beta,
    bn_running_mean,
    bn_running_var,
    dc_lambda,
};

const char* to_string(ParamRole role);
ParamRole param_role_from_string(const std::string& s);

/// A named model tensor. `name` is the block-local name that is identical across
/// anatomies; `key` is unique within a model (`name` or `name@label`).
struct Parameter {
    std::string name;
    std::string key;
    std::string partition;  // "shared" or "specific:<label>"
    ParamRole role = ParamRole::conv3x3;
    Tensor value;

    /// Running statistics are state, not optimised by gradient.
    bool trainable() const noexcept
    {
        return role != ParamRole::bn_running_mean && role != ParamRole::bn_running_var;
    }
};

}  // namespace mapn
