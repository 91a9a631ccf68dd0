#include "metadapt/autodiff/tensor.hpp"

#include <atomic>
#include <sstream>

#include "metadapt/common/error.hpp"

namespace metadapt::autodiff {

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

std::uint64_t next_tensor_id() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

namespace {
Tensor make(Shape shape, std::vector<double> values, bool requires_grad) {
    check(numel(shape) == values.size(), "shape_mismatch", "tensor: shape ", shape_str(shape), " holds ",
          numel(shape), " values, got ", values.size());
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::make_shared<const std::vector<double>>(std::move(values));
    impl->requires_grad = requires_grad;
    impl->id = next_tensor_id();
    return Tensor::wrap(std::move(impl));
}
}  // namespace

Tensor Tensor::constant(Shape shape, std::vector<double> values) { return make(std::move(shape), std::move(values), false); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) { return make(std::move(shape), std::move(values), true); }

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
    const std::size_t n = autodiff::numel(shape);
    return make(std::move(shape), std::vector<double>(n, value), false);
}

Tensor Tensor::scalar(double value) { return make({}, {value}, false); }

const Shape& Tensor::shape() const {
    check(defined(), "invalid_argument", "tensor: use of an undefined tensor");
    return impl_->shape;
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data->size() : 0; }

std::span<const double> Tensor::values() const {
    check(defined(), "invalid_argument", "tensor: use of an undefined tensor");
    return {impl_->data->data(), impl_->data->size()};
}

const std::vector<double>& Tensor::storage() const {
    check(defined(), "invalid_argument", "tensor: use of an undefined tensor");
    return *impl_->data;
}

double Tensor::item() const {
    check(numel() == 1, "shape_mismatch", "tensor: item() on shape ", shape_str(shape()));
    return (*impl_->data)[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

bool Tensor::is_leaf() const { return impl_ && impl_->node == nullptr; }

std::uint64_t Tensor::id() const { return impl_ ? impl_->id : 0; }

Tensor Tensor::detach() const {
    check(defined(), "invalid_argument", "tensor: detach of an undefined tensor");
    if (!requires_grad()) return *this;
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = impl_->shape;
    impl->data = impl_->data;
    impl->id = next_tensor_id();
    return wrap(std::move(impl));
}

}  // namespace metadapt::autodiff
