#pragma once

#include "metadapt/autodiff/tape.hpp"
#include "metadapt/autodiff/tensor.hpp"

namespace metadapt::autodiff {

// Binary elementwise ops take equal shapes; a one-element operand is
// broadcast explicitly (recorded as BroadcastTo). Any other mismatch fails
// with code "shape_mismatch".
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);

/// (m,k) x (k,n) -> (m,n)
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

/// x: (N,Cin,H,W), w: (Cout,Cin,kh,kw) -> (N,Cout,Ho,Wo)
Tensor conv2d(const Tensor& x, const Tensor& w, ConvSpec spec = {});
/// Adjoint of conv2d in its input.
Tensor conv2d_grad_input(const Tensor& dy, const Tensor& w, const Shape& input_shape, ConvSpec spec);
/// Adjoint of conv2d in its weight.
Tensor conv2d_grad_weight(const Tensor& x, const Tensor& dy, const Shape& weight_shape, ConvSpec spec);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor log_clamped(const Tensor& x, double floor);
Tensor pow(const Tensor& x, double exponent);
Tensor square(const Tensor& x);
Tensor sigmoid(const Tensor& x);
/// Softmax along axis 1 (the class axis of NCHW, the feature axis of (N,F)).
Tensor softmax(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Sums over every axis where `shape` has extent 1 (ranks must agree), or
/// everything when `shape` is empty.
Tensor sum_to(const Tensor& x, const Shape& shape);
/// Inverse of sum_to: repeats size-1 axes (or a one-element tensor).
Tensor broadcast_to(const Tensor& x, const Shape& shape);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t index);
Tensor embed(const Tensor& x, const Shape& shape, std::size_t axis, std::size_t index);

/// Per-axis-1 affine map with vectors of length shape[1]:
/// y = x * scale + shift (recorded as broadcasts and elementwise ops).
Tensor channel_affine(const Tensor& x, const Tensor& scale, const Tensor& shift);

/// Evaluates a primitive without recording; used by replay and tests.
std::vector<double> evaluate(OpKind kind, const Attrs& attrs, const std::vector<Tensor>& inputs, Shape& out_shape);

}  // namespace metadapt::autodiff
