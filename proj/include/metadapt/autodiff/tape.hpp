#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string_view>
#include <vector>

#include "metadapt/autodiff/tensor.hpp"

namespace metadapt::autodiff {

enum class OpKind {
    Add,
    Sub,
    Mul,
    Scale,       // x * scalar
    AddScalar,   // x + scalar
    Matmul,
    Transpose,
    Conv2d,
    Conv2dGradInput,
    Conv2dGradWeight,
    Relu,
    LeakyRelu,
    Exp,
    Log,
    LogClamped,  // log(max(x, floor))
    Pow,         // x^p, scalar exponent
    Square,
    Sigmoid,
    Softmax,     // along axis 1
    Sum,         // all elements -> shape {}
    SumTo,       // reduce size-1 axes of target shape
    BroadcastTo,
    Reshape,
    Slice,       // one index along an axis, kept as size-1
    Embed,       // inverse of Slice: place into zeros
};

std::string_view op_name(OpKind kind);

struct ConvSpec {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

struct Attrs {
    double scalar = 0.0;
    ConvSpec conv{};
    Shape shape{};
    std::size_t axis = 0;
    std::size_t index = 0;
};

struct TapeState;

/// One recorded primitive. Inputs precede the node in tape order.
struct Node {
    OpKind kind;
    Attrs attrs;
    std::vector<Tensor> inputs;
    std::weak_ptr<const TensorImpl> output;
    std::uint64_t seq = 0;
    std::weak_ptr<TapeState> tape;
};

struct TapeOptions {
    /// Record backward passes so gradients can be differentiated again.
    bool higher_order = false;
};

struct TapeState {
    std::vector<std::shared_ptr<Node>> nodes;
    std::uint64_t generation = 0;
    bool higher_order = false;
};

/// Scoped recording context. Constructing a Tape makes it the active tape of
/// the calling thread; destruction releases every recorded node, after which
/// values computed under it are detached.
class Tape {
  public:
    explicit Tape(TapeOptions options = {});
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    std::size_t size() const { return state_->nodes.size(); }
    std::uint64_t generation() const { return state_->generation; }
    bool higher_order() const { return state_->higher_order; }

    /// Re-evaluates every node from its recorded inputs and throws if any
    /// output differs in a single bit.
    void replay_check() const;

    static std::shared_ptr<TapeState> active();

  private:
    std::shared_ptr<TapeState> state_;
    std::shared_ptr<TapeState> previous_;
};

bool grad_enabled();

/// Disables recording for its lifetime.
class NoGradGuard {
  public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

  private:
    bool previous_;
};

}  // namespace metadapt::autodiff
