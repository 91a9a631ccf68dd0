#pragma once

#include <cstdint>
#include <span>
#include <unordered_map>
#include <vector>

#include "metadapt/autodiff/tensor.hpp"

namespace metadapt::autodiff {

/// Gradients keyed by Tensor::id() of the leaf they belong to.
using GradMap = std::unordered_map<std::uint64_t, Tensor>;

/// Reverse pass from a scalar loss. Returns a gradient for every leaf with
/// requires_grad that the loss depends on; the returned tensors are
/// constants.
GradMap backward(const Tensor& loss);

/// Gradients of `loss` with respect to `params` (zeros for params the loss
/// does not reach). With `create_graph` the backward pass is recorded on the
/// active tape, which must be higher-order.
std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> params, bool create_graph = false);

/// grad(loss, params, true): the gradients are themselves differentiable.
std::vector<Tensor> grad_graph(const Tensor& loss, std::span<const Tensor> params);

}  // namespace metadapt::autodiff
