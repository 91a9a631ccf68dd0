#pragma once

#include <string>
#include <vector>

#include "metadapt/autodiff/tensor.hpp"
#include "metadapt/common/container.hpp"
#include "metadapt/common/rng.hpp"

namespace metadapt::nn {

using autodiff::Shape;
using autodiff::Tensor;

/// Named handle on a trainable tensor owned by a model. Optimizers replace
/// the tensor in place with an updated leaf.
struct ParamRef {
    std::string name;
    Tensor* tensor;
};

using ParamList = std::vector<ParamRef>;

inline std::vector<Tensor> values_of(const ParamList& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(*p.tensor);
    return out;
}

/// He-normal initialisation for a weight with the given fan-in.
Tensor he_normal(const Shape& shape, std::size_t fan_in, Rng& rng);

void store(Container& c, const std::string& name, const Tensor& t);
Tensor restore_parameter(const Container& c, const std::string& name, const Shape& expected);

}  // namespace metadapt::nn
