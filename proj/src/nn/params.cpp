#include "metadapt/nn/params.hpp"

#include <cmath>

#include "metadapt/common/error.hpp"

namespace metadapt::nn {

Tensor he_normal(const Shape& shape, std::size_t fan_in, Rng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    std::vector<double> v(autodiff::numel(shape));
    for (auto& x : v) x = rng.normal(0.0, std);
    return Tensor::parameter(shape, std::move(v));
}

void store(Container& c, const std::string& name, const Tensor& t) { c.put(name, t.shape(), t.storage()); }

Tensor restore_parameter(const Container& c, const std::string& name, const Shape& expected) {
    const Array& a = c.at(name);
    check(a.shape == expected, "shape_mismatch", "checkpoint: '", name, "' has shape ", autodiff::shape_str(a.shape),
          ", model expects ", autodiff::shape_str(expected));
    return Tensor::parameter(a.shape, a.data);
}

}  // namespace metadapt::nn
