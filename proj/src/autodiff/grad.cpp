#include "metadapt/autodiff/grad.hpp"

#include <algorithm>
#include <optional>
#include <unordered_set>

#include "metadapt/autodiff/ops.hpp"
#include "metadapt/autodiff/tape.hpp"
#include "metadapt/common/error.hpp"

namespace metadapt::autodiff {

namespace {

Tensor mask_like(const Tensor& x, double above, double below, double threshold) {
    std::vector<double> m(x.numel());
    const auto v = x.values();
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = v[i] > threshold ? above : below;
    return Tensor::constant(x.shape(), std::move(m));
}

// Vector-Jacobian products, written with the public ops so that they are
// recorded whenever the caller asked for a differentiable backward.
std::vector<Tensor> vjp(const Node& node, const Tensor& out, const Tensor& g) {
    const auto& in = node.inputs;
    const bool need0 = in[0].requires_grad();
    const bool need1 = in.size() > 1 && in[1].requires_grad();
    std::vector<Tensor> grads(in.size());
    switch (node.kind) {
        case OpKind::Add:
            if (need0) grads[0] = g;
            if (need1) grads[1] = g;
            break;
        case OpKind::Sub:
            if (need0) grads[0] = g;
            if (need1) grads[1] = neg(g);
            break;
        case OpKind::Mul:
            if (need0) grads[0] = mul(g, in[1]);
            if (need1) grads[1] = mul(g, in[0]);
            break;
        case OpKind::Scale:
            grads[0] = scale(g, node.attrs.scalar);
            break;
        case OpKind::AddScalar:
            grads[0] = g;
            break;
        case OpKind::Matmul:
            if (need0) grads[0] = matmul(g, transpose(in[1]));
            if (need1) grads[1] = matmul(transpose(in[0]), g);
            break;
        case OpKind::Transpose:
            grads[0] = transpose(g);
            break;
        case OpKind::Conv2d:
            if (need0) grads[0] = conv2d_grad_input(g, in[1], in[0].shape(), node.attrs.conv);
            if (need1) grads[1] = conv2d_grad_weight(in[0], g, in[1].shape(), node.attrs.conv);
            break;
        case OpKind::Conv2dGradInput:
            // out = A^T(dy; w), linear in each argument
            if (need0) grads[0] = conv2d(g, in[1], node.attrs.conv);
            if (need1) grads[1] = conv2d_grad_weight(g, in[0], in[1].shape(), node.attrs.conv);
            break;
        case OpKind::Conv2dGradWeight:
            if (need0) grads[0] = conv2d_grad_input(in[1], g, in[0].shape(), node.attrs.conv);
            if (need1) grads[1] = conv2d(in[0], g, node.attrs.conv);
            break;
        case OpKind::Relu:
            grads[0] = mul(g, mask_like(in[0], 1.0, 0.0, 0.0));
            break;
        case OpKind::LeakyRelu:
            grads[0] = mul(g, mask_like(in[0], 1.0, node.attrs.scalar, 0.0));
            break;
        case OpKind::Exp:
            grads[0] = mul(g, out);
            break;
        case OpKind::Log:
            grads[0] = mul(g, pow(in[0], -1.0));
            break;
        case OpKind::LogClamped:
            grads[0] = mul(g, mul(mask_like(in[0], 1.0, 0.0, node.attrs.scalar), pow(in[0], -1.0)));
            break;
        case OpKind::Pow: {
            const double p = node.attrs.scalar;
            if (p == 0.0) grads[0] = scale(g, 0.0);
            else if (p == 1.0) grads[0] = g;
            else if (p == 2.0) grads[0] = mul(g, scale(in[0], 2.0));
            else grads[0] = mul(g, scale(pow(in[0], p - 1.0), p));
            break;
        }
        case OpKind::Square:
            grads[0] = mul(g, scale(in[0], 2.0));
            break;
        case OpKind::Sigmoid:
            grads[0] = mul(g, mul(out, add_scalar(neg(out), 1.0)));
            break;
        case OpKind::Softmax: {
            Shape reduced = out.shape();
            reduced[1] = 1;
            const Tensor inner = broadcast_to(sum_to(mul(g, out), reduced), out.shape());
            grads[0] = mul(out, sub(g, inner));
            break;
        }
        case OpKind::Sum:
            grads[0] = broadcast_to(g, in[0].shape());
            break;
        case OpKind::SumTo:
            grads[0] = broadcast_to(g, in[0].shape());
            break;
        case OpKind::BroadcastTo:
            grads[0] = in[0].numel() == 1 ? reshape(sum(g), in[0].shape()) : sum_to(g, in[0].shape());
            break;
        case OpKind::Reshape:
            grads[0] = reshape(g, in[0].shape());
            break;
        case OpKind::Slice:
            grads[0] = embed(g, in[0].shape(), node.attrs.axis, node.attrs.index);
            break;
        case OpKind::Embed:
            grads[0] = slice(g, node.attrs.axis, node.attrs.index);
            break;
    }
    return grads;
}

struct Accumulated {
    std::unordered_map<const TensorImpl*, Tensor> grads;

    void add_to(const Tensor& target, const Tensor& g) {
        auto [it, inserted] = grads.try_emplace(target.impl().get(), g);
        if (!inserted) it->second = add(it->second, g);
    }
};

void check_loss(const Tensor& loss) {
    check(loss.defined(), "invalid_argument", "backward: undefined loss");
    check(loss.numel() == 1, "shape_mismatch", "backward: loss must be a scalar, got shape ", shape_str(loss.shape()));
    check(loss.requires_grad(), "detached", "backward: loss is not connected to any parameter requiring grad");
    if (const auto& node = loss.impl()->node) {
        check(!node->tape.expired(), "detached", "backward: the tape that recorded this loss has been released");
    }
}

// Runs the reverse sweep and returns accumulated gradients of every reached
// tensor (leaves included).
Accumulated sweep(const Tensor& loss, const std::unordered_set<const TensorImpl*>& keep = {}) {
    std::vector<Node*> order;
    std::unordered_set<const Node*> seen;
    std::vector<const TensorImpl*> stack{loss.impl().get()};
    while (!stack.empty()) {
        const TensorImpl* t = stack.back();
        stack.pop_back();
        Node* node = t->node.get();
        if (!node || !seen.insert(node).second) continue;
        order.push_back(node);
        for (const auto& in : node->inputs)
            if (in.requires_grad()) stack.push_back(in.impl().get());
    }
    std::sort(order.begin(), order.end(), [](const Node* a, const Node* b) { return a->seq > b->seq; });

    Accumulated acc;
    acc.add_to(loss, Tensor::full(loss.shape(), 1.0));
    for (Node* node : order) {
        auto out_impl = node->output.lock();
        if (!out_impl) continue;
        auto it = acc.grads.find(out_impl.get());
        if (it == acc.grads.end()) continue;
        const Tensor g = it->second;
        const Tensor out = Tensor::wrap(out_impl);
        auto in_grads = vjp(*node, out, g);
        // interior gradients are no longer needed once propagated
        if (!keep.contains(out_impl.get())) acc.grads.erase(it);
        for (std::size_t i = 0; i < node->inputs.size(); ++i)
            if (in_grads[i].defined()) acc.add_to(node->inputs[i], in_grads[i]);
    }
    return acc;
}

}  // namespace

GradMap backward(const Tensor& loss) {
    check_loss(loss);
    Accumulated acc;
    {
        NoGradGuard no_grad;
        acc = sweep(loss);
    }
    GradMap out;
    for (auto& [impl, g] : acc.grads) {
        if (impl->node == nullptr && impl->requires_grad) out.emplace(impl->id, g.detach());
    }
    return out;
}

std::vector<Tensor> grad(const Tensor& loss, std::span<const Tensor> params, bool create_graph) {
    check_loss(loss);
    if (create_graph) {
        auto tape = Tape::active();
        check(tape && tape->higher_order, "higher_order_disabled",
              "grad_graph: the active tape was not created with higher_order=true; enable it or use first-order MAML");
    }
    // interior params keep their gradient through the sweep
    std::unordered_set<const TensorImpl*> wanted;
    for (const auto& p : params) wanted.insert(p.impl().get());

    Accumulated acc;
    if (create_graph) {
        acc = sweep(loss, wanted);
    } else {
        NoGradGuard no_grad;
        acc = sweep(loss, wanted);
    }
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& p : params) {
        auto it = acc.grads.find(p.impl().get());
        if (it == acc.grads.end()) {
            out.push_back(Tensor::zeros(p.shape()));
        } else {
            out.push_back(create_graph ? it->second : it->second.detach());
        }
    }
    return out;
}

std::vector<Tensor> grad_graph(const Tensor& loss, std::span<const Tensor> params) {
    return grad(loss, params, true);
}

}  // namespace metadapt::autodiff
