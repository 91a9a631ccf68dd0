#include "metadapt/autodiff/tape.hpp"

#include <atomic>
#include <cstring>

#include "metadapt/autodiff/ops.hpp"
#include "metadapt/common/error.hpp"

namespace metadapt::autodiff {

namespace {
thread_local std::shared_ptr<TapeState> t_active;
thread_local bool t_grad_enabled = true;
std::atomic<std::uint64_t> g_generation{1};
}  // namespace

std::string_view op_name(OpKind kind) {
    switch (kind) {
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scalar-mul";
        case OpKind::AddScalar: return "scalar-add";
        case OpKind::Matmul: return "matmul";
        case OpKind::Transpose: return "transpose";
        case OpKind::Conv2d: return "conv2d";
        case OpKind::Conv2dGradInput: return "conv2d-grad-input";
        case OpKind::Conv2dGradWeight: return "conv2d-grad-weight";
        case OpKind::Relu: return "relu";
        case OpKind::LeakyRelu: return "leaky-relu";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        case OpKind::LogClamped: return "log-clamped";
        case OpKind::Pow: return "pow";
        case OpKind::Square: return "square";
        case OpKind::Sigmoid: return "sigmoid";
        case OpKind::Softmax: return "softmax";
        case OpKind::Sum: return "sum";
        case OpKind::SumTo: return "sum-to";
        case OpKind::BroadcastTo: return "broadcast-to";
        case OpKind::Reshape: return "reshape";
        case OpKind::Slice: return "slice";
        case OpKind::Embed: return "embed";
    }
    return "unknown";
}

Tape::Tape(TapeOptions options) : state_(std::make_shared<TapeState>()), previous_(t_active) {
    state_->generation = g_generation.fetch_add(1, std::memory_order_relaxed);
    state_->higher_order = options.higher_order;
    t_active = state_;
}

Tape::~Tape() {
    t_active = previous_;
    state_->nodes.clear();
}

std::shared_ptr<TapeState> Tape::active() { return t_active; }

void Tape::replay_check() const {
    for (std::size_t i = 0; i < state_->nodes.size(); ++i) {
        const Node& node = *state_->nodes[i];
        for (const auto& in : node.inputs) {
            if (in.impl()->node)
                check(in.impl()->node->seq < node.seq, "tape", "tape: node ", i, " (", op_name(node.kind),
                      ") consumes a later value");
        }
        auto out = node.output.lock();
        if (!out) continue;  // value already released
        Shape shape;
        const auto values = evaluate(node.kind, node.attrs, node.inputs, shape);
        check(shape == out->shape, "tape", "tape replay: shape changed at node ", i, " (", op_name(node.kind), ")");
        check(values.size() == out->data->size() &&
                  std::memcmp(values.data(), out->data->data(), values.size() * sizeof(double)) == 0,
              "tape", "tape replay: output of node ", i, " (", op_name(node.kind), ") differs");
    }
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

}  // namespace metadapt::autodiff
