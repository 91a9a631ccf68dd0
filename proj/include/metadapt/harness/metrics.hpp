#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "metadapt/autodiff/tensor.hpp"

namespace metadapt::harness {

/// M x M pixel counts; row = truth, column = prediction.
class ConfusionMatrix {
  public:
    explicit ConfusionMatrix(std::size_t classes);

    /// Adds every pixel of a (N,M,H,W) probability map against (N,H,W)
    /// labels; the prediction is the arg-max class (lowest index on ties).
    void add(const autodiff::Tensor& probs, const autodiff::Tensor& labels);
    void add(std::size_t truth, std::size_t prediction, std::uint64_t n = 1);
    void merge(const ConfusionMatrix& other);

    std::size_t classes() const { return classes_; }
    std::uint64_t at(std::size_t truth, std::size_t prediction) const { return counts_[truth * classes_ + prediction]; }
    std::uint64_t total() const;

  private:
    std::size_t classes_;
    std::vector<std::uint64_t> counts_;
};

struct IouResult {
    /// Per-class IoU; NaN for classes absent from truth and prediction.
    std::vector<double> per_class;
    double mean = 0.0;
};

/// IoU_c = TP / (TP + FP + FN); classes with TP + FP + FN = 0 are excluded
/// from the mean.
IouResult miou(const ConfusionMatrix& conf);

}  // namespace metadapt::harness
