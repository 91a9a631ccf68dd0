#include "metadapt/autodiff/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#include "kernels.hpp"
#include "metadapt/common/error.hpp"

namespace metadapt::autodiff {

namespace {

std::atomic<std::uint64_t> g_seq{1};

[[noreturn]] void shape_error(OpKind kind, const Shape& a, const Shape& b) {
    fail("shape_mismatch", op_name(kind), ": incompatible shapes ", shape_str(a), " and ", shape_str(b));
}

// Row-major strides.
std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

// For every element of `big`, adds (or copies) between big and small where
// small has extent 1 on the reduced axes. `to_small` selects direction.
void reduce_or_expand(const Shape& big, const Shape& small, const double* src, double* dst, bool to_small) {
    const std::size_t rank = big.size();
    const auto small_strides = strides_of(small);
    std::vector<std::size_t> step(rank);
    for (std::size_t a = 0; a < rank; ++a) step[a] = small[a] == 1 ? 0 : small_strides[a];
    const std::size_t total = numel(big);
    if (rank == 0) {
        if (to_small) dst[0] += src[0];
        else dst[0] = src[0];
        return;
    }
    std::vector<std::size_t> idx(rank, 0);
    std::size_t off = 0;
    const std::size_t inner = big[rank - 1];
    const std::size_t inner_step = step[rank - 1];
    for (std::size_t i = 0; i < total; i += inner) {
        if (to_small) {
            if (inner_step == 0) {
                double acc = dst[off];
                for (std::size_t j = 0; j < inner; ++j) acc += src[i + j];
                dst[off] = acc;
            } else {
                for (std::size_t j = 0; j < inner; ++j) dst[off + j * inner_step] += src[i + j];
            }
        } else {
            for (std::size_t j = 0; j < inner; ++j) dst[i + j] = src[off + j * inner_step];
        }
        // odometer over the outer axes
        for (std::size_t a = rank - 1; a-- > 0;) {
            if (++idx[a] < big[a]) {
                off += step[a];
                break;
            }
            off -= step[a] * (big[a] - 1);
            idx[a] = 0;
        }
    }
}

bool reducible(const Shape& big, const Shape& small) {
    if (small.size() != big.size()) return false;
    for (std::size_t a = 0; a < big.size(); ++a)
        if (small[a] != big[a] && small[a] != 1) return false;
    return true;
}

template <typename F>
std::vector<double> map_unary(const Tensor& x, F f) {
    const auto v = x.values();
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = f(v[i]);
    return out;
}

template <typename F>
std::vector<double> map_binary(const Tensor& a, const Tensor& b, F f) {
    const auto va = a.values();
    const auto vb = b.values();
    std::vector<double> out(va.size());
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = f(va[i], vb[i]);
    return out;
}

void validate(OpKind kind, const Attrs& attrs, const std::vector<Tensor>& in) {
    switch (kind) {
        case OpKind::Add:
        case OpKind::Sub:
        case OpKind::Mul:
            if (in[0].shape() != in[1].shape()) shape_error(kind, in[0].shape(), in[1].shape());
            break;
        case OpKind::Matmul:
            if (in[0].rank() != 2 || in[1].rank() != 2 || in[0].dim(1) != in[1].dim(0))
                shape_error(kind, in[0].shape(), in[1].shape());
            break;
        case OpKind::Transpose:
            check(in[0].rank() == 2, "shape_mismatch", "transpose: expected a matrix, got ", shape_str(in[0].shape()));
            break;
        case OpKind::Conv2d:
            kernels::conv_geometry(in[0].shape(), in[1].shape(), attrs.conv);
            break;
        case OpKind::Conv2dGradInput: {
            const auto g = kernels::conv_geometry(attrs.shape, in[1].shape(), attrs.conv);
            const Shape expect{g.n, g.cout, g.ho, g.wo};
            if (in[0].shape() != expect) shape_error(kind, in[0].shape(), expect);
            break;
        }
        case OpKind::Conv2dGradWeight: {
            const auto g = kernels::conv_geometry(in[0].shape(), attrs.shape, attrs.conv);
            const Shape expect{g.n, g.cout, g.ho, g.wo};
            if (in[1].shape() != expect) shape_error(kind, in[1].shape(), expect);
            break;
        }
        case OpKind::Softmax:
            check(in[0].rank() >= 2, "shape_mismatch", "softmax: needs an axis 1, got ", shape_str(in[0].shape()));
            break;
        case OpKind::SumTo:
            if (!attrs.shape.empty() && !reducible(in[0].shape(), attrs.shape))
                shape_error(kind, in[0].shape(), attrs.shape);
            break;
        case OpKind::BroadcastTo:
            if (in[0].numel() != 1 && !reducible(attrs.shape, in[0].shape()))
                shape_error(kind, in[0].shape(), attrs.shape);
            break;
        case OpKind::Reshape:
            if (numel(attrs.shape) != in[0].numel()) shape_error(kind, in[0].shape(), attrs.shape);
            break;
        case OpKind::Slice:
            check(attrs.axis < in[0].rank() && attrs.index < in[0].dim(attrs.axis), "shape_mismatch",
                  "slice: index ", attrs.index, " on axis ", attrs.axis, " out of range for ",
                  shape_str(in[0].shape()));
            break;
        case OpKind::Embed: {
            check(attrs.axis < attrs.shape.size() && attrs.index < attrs.shape[attrs.axis], "shape_mismatch",
                  "embed: index ", attrs.index, " on axis ", attrs.axis, " out of range for ", shape_str(attrs.shape));
            Shape expect = attrs.shape;
            expect[attrs.axis] = 1;
            if (in[0].shape() != expect) shape_error(kind, in[0].shape(), expect);
            break;
        }
        default:
            break;
    }
}

Tensor record(OpKind kind, Attrs attrs, std::vector<Tensor> inputs) {
    for (const auto& t : inputs)
        check(t.defined(), "invalid_argument", op_name(kind), ": undefined input tensor");
    validate(kind, attrs, inputs);
    Shape shape;
    auto values = evaluate(kind, attrs, inputs, shape);

    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::make_shared<const std::vector<double>>(std::move(values));
    impl->id = next_tensor_id();

    const bool any_grad = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    auto tape = Tape::active();
    if (any_grad && grad_enabled() && tape) {
        auto node = std::make_shared<Node>();
        node->kind = kind;
        node->attrs = std::move(attrs);
        node->inputs = std::move(inputs);
        node->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
        node->tape = tape;
        impl->requires_grad = true;
        impl->node = node;
        tape->nodes.push_back(node);
        std::shared_ptr<const TensorImpl> out = impl;
        node->output = out;
        return Tensor::wrap(std::move(out));
    }
    return Tensor::wrap(std::move(impl));
}

// A one-element operand is broadcast to the other's shape.
std::pair<Tensor, Tensor> align(OpKind kind, const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return {a, b};
    if (a.numel() == 1 && b.numel() != 1) return {broadcast_to(a, b.shape()), b};
    if (b.numel() == 1 && a.numel() != 1) return {a, broadcast_to(b, a.shape())};
    if (a.numel() == 1 && b.numel() == 1) return {reshape(a, b.shape()), b};
    shape_error(kind, a.shape(), b.shape());
}

}  // namespace

std::vector<double> evaluate(OpKind kind, const Attrs& attrs, const std::vector<Tensor>& in, Shape& out_shape) {
    switch (kind) {
        case OpKind::Add:
            out_shape = in[0].shape();
            return map_binary(in[0], in[1], [](double a, double b) { return a + b; });
        case OpKind::Sub:
            out_shape = in[0].shape();
            return map_binary(in[0], in[1], [](double a, double b) { return a - b; });
        case OpKind::Mul:
            out_shape = in[0].shape();
            return map_binary(in[0], in[1], [](double a, double b) { return a * b; });
        case OpKind::Scale: {
            out_shape = in[0].shape();
            const double s = attrs.scalar;
            return map_unary(in[0], [s](double x) { return x * s; });
        }
        case OpKind::AddScalar: {
            out_shape = in[0].shape();
            const double s = attrs.scalar;
            return map_unary(in[0], [s](double x) { return x + s; });
        }
        case OpKind::Matmul: {
            const std::size_t m = in[0].dim(0), k = in[0].dim(1), n = in[1].dim(1);
            out_shape = {m, n};
            std::vector<double> out(m * n, 0.0);
            kernels::gemm_acc(m, n, k, in[0].values().data(), in[1].values().data(), out.data());
            return out;
        }
        case OpKind::Transpose: {
            const std::size_t r = in[0].dim(0), c = in[0].dim(1);
            out_shape = {c, r};
            std::vector<double> out(r * c);
            kernels::transpose(r, c, in[0].values().data(), out.data());
            return out;
        }
        case OpKind::Conv2d: {
            const auto g = kernels::conv_geometry(in[0].shape(), in[1].shape(), attrs.conv);
            out_shape = {g.n, g.cout, g.ho, g.wo};
            std::vector<double> out(numel(out_shape));
            kernels::conv2d_forward(g, in[0].values().data(), in[1].values().data(), out.data());
            return out;
        }
        case OpKind::Conv2dGradInput: {
            const auto g = kernels::conv_geometry(attrs.shape, in[1].shape(), attrs.conv);
            out_shape = attrs.shape;
            std::vector<double> out(numel(out_shape));
            kernels::conv2d_backward_input(g, in[0].values().data(), in[1].values().data(), out.data());
            return out;
        }
        case OpKind::Conv2dGradWeight: {
            const auto g = kernels::conv_geometry(in[0].shape(), attrs.shape, attrs.conv);
            out_shape = attrs.shape;
            std::vector<double> out(numel(out_shape));
            kernels::conv2d_backward_weight(g, in[0].values().data(), in[1].values().data(), out.data());
            return out;
        }
        case OpKind::Relu:
            out_shape = in[0].shape();
            return map_unary(in[0], [](double x) { return x > 0.0 ? x : 0.0; });
        case OpKind::LeakyRelu: {
            out_shape = in[0].shape();
            const double s = attrs.scalar;
            return map_unary(in[0], [s](double x) { return x > 0.0 ? x : s * x; });
        }
        case OpKind::Exp:
            out_shape = in[0].shape();
            return map_unary(in[0], [](double x) { return std::exp(x); });
        case OpKind::Log:
            out_shape = in[0].shape();
            return map_unary(in[0], [](double x) { return std::log(x); });
        case OpKind::LogClamped: {
            out_shape = in[0].shape();
            const double f = attrs.scalar;
            return map_unary(in[0], [f](double x) { return std::log(x > f ? x : f); });
        }
        case OpKind::Pow: {
            out_shape = in[0].shape();
            const double p = attrs.scalar;
            return map_unary(in[0], [p](double x) { return std::pow(x, p); });
        }
        case OpKind::Square:
            out_shape = in[0].shape();
            return map_unary(in[0], [](double x) { return x * x; });
        case OpKind::Sigmoid:
            out_shape = in[0].shape();
            return map_unary(in[0], [](double x) {
                if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
                const double e = std::exp(x);
                return e / (1.0 + e);
            });
        case OpKind::Softmax: {
            out_shape = in[0].shape();
            const std::size_t outer = out_shape[0], classes = out_shape[1];
            const std::size_t inner = numel(out_shape) / (outer * classes);
            const auto x = in[0].values();
            std::vector<double> out(x.size());
            for (std::size_t o = 0; o < outer; ++o) {
                const std::size_t base = o * classes * inner;
                for (std::size_t p = 0; p < inner; ++p) {
                    double mx = x[base + p];
                    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, x[base + c * inner + p]);
                    double total = 0.0;
                    for (std::size_t c = 0; c < classes; ++c) {
                        const double e = std::exp(x[base + c * inner + p] - mx);
                        out[base + c * inner + p] = e;
                        total += e;
                    }
                    for (std::size_t c = 0; c < classes; ++c) out[base + c * inner + p] /= total;
                }
            }
            return out;
        }
        case OpKind::Sum: {
            out_shape = {};
            double total = 0.0;
            for (double v : in[0].values()) total += v;
            return {total};
        }
        case OpKind::SumTo: {
            out_shape = attrs.shape;
            if (attrs.shape.empty()) {
                double total = 0.0;
                for (double v : in[0].values()) total += v;
                return {total};
            }
            std::vector<double> out(numel(attrs.shape), 0.0);
            reduce_or_expand(in[0].shape(), attrs.shape, in[0].values().data(), out.data(), true);
            return out;
        }
        case OpKind::BroadcastTo: {
            out_shape = attrs.shape;
            if (in[0].numel() == 1) return std::vector<double>(numel(attrs.shape), in[0].values()[0]);
            std::vector<double> out(numel(attrs.shape));
            reduce_or_expand(attrs.shape, in[0].shape(), in[0].values().data(), out.data(), false);
            return out;
        }
        case OpKind::Reshape:
            out_shape = attrs.shape;
            return in[0].storage();
        case OpKind::Slice: {
            const Shape& s = in[0].shape();
            out_shape = s;
            out_shape[attrs.axis] = 1;
            std::size_t outer = 1, inner = 1;
            for (std::size_t a = 0; a < attrs.axis; ++a) outer *= s[a];
            for (std::size_t a = attrs.axis + 1; a < s.size(); ++a) inner *= s[a];
            const auto x = in[0].values();
            std::vector<double> out(outer * inner);
            for (std::size_t o = 0; o < outer; ++o)
                std::copy_n(x.data() + (o * s[attrs.axis] + attrs.index) * inner, inner, out.data() + o * inner);
            return out;
        }
        case OpKind::Embed: {
            const Shape& s = attrs.shape;
            out_shape = s;
            std::size_t outer = 1, inner = 1;
            for (std::size_t a = 0; a < attrs.axis; ++a) outer *= s[a];
            for (std::size_t a = attrs.axis + 1; a < s.size(); ++a) inner *= s[a];
            const auto x = in[0].values();
            std::vector<double> out(numel(s), 0.0);
            for (std::size_t o = 0; o < outer; ++o)
                std::copy_n(x.data() + o * inner, inner, out.data() + (o * s[attrs.axis] + attrs.index) * inner);
            return out;
        }
    }
    fail("invalid_argument", "unknown op kind");
}

Tensor add(const Tensor& a, const Tensor& b) {
    auto [x, y] = align(OpKind::Add, a, b);
    return record(OpKind::Add, {}, {x, y});
}

Tensor sub(const Tensor& a, const Tensor& b) {
    auto [x, y] = align(OpKind::Sub, a, b);
    return record(OpKind::Sub, {}, {x, y});
}

Tensor mul(const Tensor& a, const Tensor& b) {
    auto [x, y] = align(OpKind::Mul, a, b);
    return record(OpKind::Mul, {}, {x, y});
}

Tensor div(const Tensor& a, const Tensor& b) { return mul(a, pow(b, -1.0)); }

Tensor scale(const Tensor& x, double s) { return record(OpKind::Scale, {.scalar = s}, {x}); }

Tensor add_scalar(const Tensor& x, double s) { return record(OpKind::AddScalar, {.scalar = s}, {x}); }

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b) { return record(OpKind::Matmul, {}, {a, b}); }

Tensor transpose(const Tensor& x) { return record(OpKind::Transpose, {}, {x}); }

Tensor conv2d(const Tensor& x, const Tensor& w, ConvSpec spec) {
    return record(OpKind::Conv2d, {.conv = spec}, {x, w});
}

Tensor conv2d_grad_input(const Tensor& dy, const Tensor& w, const Shape& input_shape, ConvSpec spec) {
    return record(OpKind::Conv2dGradInput, {.conv = spec, .shape = input_shape}, {dy, w});
}

Tensor conv2d_grad_weight(const Tensor& x, const Tensor& dy, const Shape& weight_shape, ConvSpec spec) {
    return record(OpKind::Conv2dGradWeight, {.conv = spec, .shape = weight_shape}, {x, dy});
}

Tensor relu(const Tensor& x) { return record(OpKind::Relu, {}, {x}); }

Tensor leaky_relu(const Tensor& x, double slope) { return record(OpKind::LeakyRelu, {.scalar = slope}, {x}); }

Tensor exp(const Tensor& x) { return record(OpKind::Exp, {}, {x}); }

Tensor log(const Tensor& x) { return record(OpKind::Log, {}, {x}); }

Tensor log_clamped(const Tensor& x, double floor) {
    check(floor > 0.0, "invalid_argument", "log-clamped: floor must be positive");
    return record(OpKind::LogClamped, {.scalar = floor}, {x});
}

Tensor pow(const Tensor& x, double exponent) { return record(OpKind::Pow, {.scalar = exponent}, {x}); }

Tensor square(const Tensor& x) { return record(OpKind::Square, {}, {x}); }

Tensor sigmoid(const Tensor& x) { return record(OpKind::Sigmoid, {}, {x}); }

Tensor softmax(const Tensor& x) { return record(OpKind::Softmax, {}, {x}); }

Tensor sum(const Tensor& x) { return record(OpKind::Sum, {}, {x}); }

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_to(const Tensor& x, const Shape& shape) {
    if (x.shape() == shape) return x;
    return record(OpKind::SumTo, {.shape = shape}, {x});
}

Tensor broadcast_to(const Tensor& x, const Shape& shape) {
    if (x.shape() == shape) return x;
    return record(OpKind::BroadcastTo, {.shape = shape}, {x});
}

Tensor reshape(const Tensor& x, const Shape& shape) {
    if (x.shape() == shape) return x;
    return record(OpKind::Reshape, {.shape = shape}, {x});
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t index) {
    return record(OpKind::Slice, {.axis = axis, .index = index}, {x});
}

Tensor embed(const Tensor& x, const Shape& shape, std::size_t axis, std::size_t index) {
    return record(OpKind::Embed, {.shape = shape, .axis = axis, .index = index}, {x});
}

Tensor channel_affine(const Tensor& x, const Tensor& scale_v, const Tensor& shift) {
    check(x.rank() >= 2, "shape_mismatch", "channel-affine: input needs a channel axis, got ", shape_str(x.shape()));
    const std::size_t c = x.dim(1);
    check(scale_v.numel() == c && shift.numel() == c, "shape_mismatch", "channel-affine: vectors ",
          shape_str(scale_v.shape()), " and ", shape_str(shift.shape()), " do not match channels of ",
          shape_str(x.shape()));
    Shape per_channel(x.rank(), 1);
    per_channel[1] = c;
    const Tensor s = broadcast_to(reshape(scale_v, per_channel), x.shape());
    const Tensor b = broadcast_to(reshape(shift, per_channel), x.shape());
    return add(mul(x, s), b);
}

}  // namespace metadapt::autodiff
