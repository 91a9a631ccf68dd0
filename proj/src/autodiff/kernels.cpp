#include "kernels.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#include "metadapt/common/error.hpp"

namespace metadapt::autodiff::kernels {

namespace {

// Register tile of kRows x kCols outputs. Every output accumulates its k
// products in order p = 0..k-1 on top of the existing C value, exactly as
// a naive triple loop would, so tiling never changes the bits.
constexpr std::size_t kRows = 4;
constexpr std::size_t kVec = 8;
constexpr std::size_t kVecs = 1;
constexpr std::size_t kCols = kVec * kVecs;

typedef double vec __attribute__((vector_size(kVec * 8), aligned(8)));

// `bp` is a packed (k, kCols) panel of B.
void tile_full(std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* bp, double* c) {
    vec acc[kRows][kVecs];
    for (std::size_t r = 0; r < kRows; ++r)
        for (std::size_t v = 0; v < kVecs; ++v) acc[r][v] = *reinterpret_cast<const vec*>(c + r * n + v * kVec);
    for (std::size_t p = 0; p < k; ++p) {
        vec bv[kVecs];
        for (std::size_t v = 0; v < kVecs; ++v) bv[v] = *reinterpret_cast<const vec*>(bp + p * kCols + v * kVec);
        for (std::size_t r = 0; r < kRows; ++r) {
            const double av = a[r * lda + p];
            for (std::size_t v = 0; v < kVecs; ++v) acc[r][v] += av * bv[v];
        }
    }
    for (std::size_t r = 0; r < kRows; ++r)
        for (std::size_t v = 0; v < kVecs; ++v) *reinterpret_cast<vec*>(c + r * n + v * kVec) = acc[r][v];
}

// Ragged edges: any rows <= kRows, any cols <= kCols, reading B in place.
void tile_edge(std::size_t n, std::size_t k, const double* a, std::size_t lda, const double* b, double* c,
               std::size_t rows, std::size_t cols) {
    double acc[kRows][kCols];
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) acc[r][j] = c[r * n + j];
    for (std::size_t p = 0; p < k; ++p) {
        const double* brow = b + p * n;
        for (std::size_t r = 0; r < rows; ++r) {
            const double av = a[r * lda + p];
            for (std::size_t j = 0; j < cols; ++j) acc[r][j] += av * brow[j];
        }
    }
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) c[r * n + j] = acc[r][j];
}

}  // namespace

void gemm_acc(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    const std::size_t full_rows = m - m % kRows;
    std::vector<double> panel(k * kCols);
    std::size_t j = 0;
    for (; j + kCols <= n; j += kCols) {
        for (std::size_t p = 0; p < k; ++p) std::copy_n(b + p * n + j, kCols, panel.data() + p * kCols);
        std::size_t i = 0;
        for (; i < full_rows; i += kRows) tile_full(n, k, a + i * k, k, panel.data(), c + i * n + j);
        if (i < m) tile_edge(n, k, a + i * k, k, b + j, c + i * n + j, m - i, kCols);
    }
    if (j < n)
        for (std::size_t i = 0; i < m; i += kRows)
            tile_edge(n, k, a + i * k, k, b + j, c + i * n + j, std::min(kRows, m - i), n - j);
}

void transpose(std::size_t rows, std::size_t cols, const double* src, double* dst) {
    constexpr std::size_t kTile = 32;
    for (std::size_t r0 = 0; r0 < rows; r0 += kTile)
        for (std::size_t c0 = 0; c0 < cols; c0 += kTile)
            for (std::size_t r = r0; r < std::min(rows, r0 + kTile); ++r)
                for (std::size_t c = c0; c < std::min(cols, c0 + kTile); ++c) dst[c * rows + r] = src[r * cols + c];
}

ConvGeometry conv_geometry(const Shape& x, const Shape& w, ConvSpec spec) {
    check(x.size() == 4 && w.size() == 4, "shape_mismatch", "conv2d: expected NCHW input and OIHW weight, got ",
          shape_str(x), " and ", shape_str(w));
    check(x[1] == w[1], "shape_mismatch", "conv2d: input channels ", x[1], " do not match weight ", shape_str(w),
          " (input ", shape_str(x), ")");
    check(spec.stride >= 1, "invalid_argument", "conv2d: stride must be positive");
    check(x[2] + 2 * spec.padding >= w[2] && x[3] + 2 * spec.padding >= w[3], "shape_mismatch",
          "conv2d: kernel ", shape_str(w), " larger than padded input ", shape_str(x));
    ConvGeometry g{};
    g.n = x[0];
    g.cin = x[1];
    g.h = x[2];
    g.w = x[3];
    g.cout = w[0];
    g.kh = w[2];
    g.kw = w[3];
    g.stride = spec.stride;
    g.pad = spec.padding;
    g.ho = (g.h + 2 * g.pad - g.kh) / g.stride + 1;
    g.wo = (g.w + 2 * g.pad - g.kw) / g.stride + 1;
    return g;
}

namespace {

// cols(patch, out_pixels) from one NCHW sample.
void im2col(const ConvGeometry& g, const double* x, double* cols) {
    const std::size_t P = g.out_pixels();
    for (std::size_t c = 0; c < g.cin; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                double* row = cols + ((c * g.kh + ky) * g.kw + kx) * P;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    double* out = row + oy * g.wo;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
                        std::fill(out, out + g.wo, 0.0);
                        continue;
                    }
                    const double* in = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        out[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0
                                                                                       : in[static_cast<std::size_t>(ix)];
                    }
                }
            }
        }
    }
}

void col2im_acc(const ConvGeometry& g, const double* cols, double* x) {
    const std::size_t P = g.out_pixels();
    for (std::size_t c = 0; c < g.cin; ++c) {
        for (std::size_t ky = 0; ky < g.kh; ++ky) {
            for (std::size_t kx = 0; kx < g.kw; ++kx) {
                const double* row = cols + ((c * g.kh + ky) * g.kw + kx) * P;
                for (std::size_t oy = 0; oy < g.ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                              static_cast<std::ptrdiff_t>(g.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
                    double* out = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
                    const double* in = row + oy * g.wo;
                    for (std::size_t ox = 0; ox < g.wo; ++ox) {
                        const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                                  static_cast<std::ptrdiff_t>(g.pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) out[static_cast<std::size_t>(ix)] += in[ox];
                    }
                }
            }
        }
    }
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, double* y) {
    const std::size_t Q = g.patch(), P = g.out_pixels();
    std::vector<double> cols(Q * P);
    std::fill(y, y + g.n * g.cout * P, 0.0);
    for (std::size_t s = 0; s < g.n; ++s) {
        im2col(g, x + s * g.cin * g.h * g.w, cols.data());
        gemm_acc(g.cout, P, Q, w, cols.data(), y + s * g.cout * P);
    }
}

void conv2d_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx) {
    const std::size_t Q = g.patch(), P = g.out_pixels();
    std::vector<double> wt(Q * g.cout);
    transpose(g.cout, Q, w, wt.data());
    std::vector<double> cols(Q * P);
    std::fill(dx, dx + g.n * g.cin * g.h * g.w, 0.0);
    for (std::size_t s = 0; s < g.n; ++s) {
        std::fill(cols.begin(), cols.end(), 0.0);
        gemm_acc(Q, P, g.cout, wt.data(), dy + s * g.cout * P, cols.data());
        col2im_acc(g, cols.data(), dx + s * g.cin * g.h * g.w);
    }
}

void conv2d_backward_weight(const ConvGeometry& g, const double* x, const double* dy, double* dw) {
    const std::size_t Q = g.patch(), P = g.out_pixels();
    std::vector<double> cols(Q * P), cols_t(P * Q);
    std::fill(dw, dw + g.cout * Q, 0.0);
    for (std::size_t s = 0; s < g.n; ++s) {
        im2col(g, x + s * g.cin * g.h * g.w, cols.data());
        transpose(Q, P, cols.data(), cols_t.data());
        gemm_acc(g.cout, Q, P, dy + s * g.cout * P, cols_t.data(), dw);
    }
}

}  // namespace metadapt::autodiff::kernels
