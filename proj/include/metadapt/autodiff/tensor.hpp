#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace metadapt::autodiff {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;

struct TensorImpl {
    Shape shape;
    std::shared_ptr<const std::vector<double>> data;
    bool requires_grad = false;
    std::shared_ptr<Node> node;  // null for leaves and constants
    std::uint64_t id = 0;
};

/// Immutable dense array of doubles. Copies share storage.
///
/// A tensor is either a constant, a leaf parameter (requires_grad, no node)
/// or an interior value recorded on a tape (requires_grad, node set).
class Tensor {
  public:
    Tensor() = default;

    static Tensor constant(Shape shape, std::vector<double> values);
    static Tensor parameter(Shape shape, std::vector<double> values);
    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const { return shape().at(axis); }
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;
    std::span<const double> values() const;
    const std::vector<double>& storage() const;
    double item() const;
    double operator[](std::size_t i) const { return values()[i]; }

    bool requires_grad() const;
    bool is_leaf() const;
    /// Stable identity of this value; keys gradient maps.
    std::uint64_t id() const;

    /// Same values, cut from any tape.
    Tensor detach() const;

    const std::shared_ptr<const TensorImpl>& impl() const { return impl_; }
    static Tensor wrap(std::shared_ptr<const TensorImpl> impl) {
        Tensor t;
        t.impl_ = std::move(impl);
        return t;
    }

  private:
    std::shared_ptr<const TensorImpl> impl_;
};

std::uint64_t next_tensor_id();

}  // namespace metadapt::autodiff
