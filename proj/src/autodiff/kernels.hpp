#pragma once

#include <cstddef>
#include <vector>

#include "metadapt/autodiff/tape.hpp"

namespace metadapt::autodiff::kernels {

/// C(m,n) += A(m,k) * B(k,n), all row-major. Fixed summation order.
void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);

/// (rows, cols) -> (cols, rows)
void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst);

struct ConvGeometry {
    std::size_t n, cin, h, w;
    std::size_t cout, kh, kw;
    std::size_t stride, pad;
    std::size_t ho, wo;

    std::size_t patch() const { return cin * kh * kw; }
    std::size_t out_pixels() const { return ho * wo; }
};

ConvGeometry conv_geometry(const Shape& x, const Shape& w, ConvSpec spec);

void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, double* y);
void conv2d_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx);
void conv2d_backward_weight(const ConvGeometry& g, const double* x, const double* dy, double* dw);

}  // namespace metadapt::autodiff::kernels
